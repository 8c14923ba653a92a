//! Compressed sparse row matrices, the coupled two-by-two block system of a
//! time step, and the solvers behind them.
//!
//! Direct factorizations are delegated to `faer`'s sparse LU, LDLᵀ and Cholesky;
//! the conjugate gradient and GMRES iterations are implemented here.

use faer::linalg::solvers::SolveCore;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use crate::error::{Error, Result};

/// Default relative residual target for SPD solves.
pub const SPD_TOLERANCE: f64 = 1e-12;
/// Relative residual every accepted block solve must reach.
pub const BLOCK_TOLERANCE: f64 = 1e-10;

/// Compressed sparse row matrix with sorted, unique column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, validating the invariants.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len()
        {
            return Err(Error::InvalidArgument("inconsistent CSR row pointers".into()));
        }
        if col_idx.len() != values.len() {
            return Err(Error::InvalidArgument(
                "column index and value arrays differ in length".into(),
            ));
        }
        for r in 0..nrows {
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if row_ptr[r] > row_ptr[r + 1]
                || cols.windows(2).any(|w| w[0] >= w[1])
                || cols.iter().any(|&c| c >= ncols)
            {
                return Err(Error::InvalidArgument(format!(
                    "row {r} has unsorted, duplicate or out-of-range columns"
                )));
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Sums duplicate entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(Error::InvalidArgument(format!(
                "entry ({r}, {c}) outside a {nrows}×{ncols} matrix"
            )));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// All-zero matrix on a given pattern.
    pub fn with_pattern(nrows: usize, ncols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Self {
        let nnz = col_idx.len();
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// Position of `(row, col)` in the value array.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.row_ptr[row];
        let cols = &self.col_idx[start..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| start + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.find(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "vector length does not match columns");
        assert_eq!(y.len(), self.nrows, "output length does not match rows");
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// `a·self + b·other` on identical patterns.
    pub fn linear_combination(&self, a: f64, other: &SparseMatrix, b: f64) -> Result<Self> {
        if !self.same_pattern(other) {
            return Err(Error::InvalidArgument(
                "linear combination needs identical sparsity patterns".into(),
            ));
        }
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v = a * *v + b * w;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let (col_ptr, row_idx, perm) = self.csc_structure();
        let values = perm.iter().map(|&k| self.values[k]).collect();
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: col_ptr,
            col_idx: row_idx,
            values,
        }
    }

    /// Column pointers, row indices, and for every CSC slot the CSR position
    /// holding its value.
    fn csc_structure(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut col_ptr = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; self.nnz()];
        let mut perm = vec![0usize; self.nnz()];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                row_idx[next[c]] = r;
                perm[next[c]] = k;
                next[c] += 1;
            }
        }
        (col_ptr, row_idx, perm)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] = v;
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn relative(residual: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        if residual == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        residual / scale
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients to `‖Ax - b‖ ≤ tol·‖b‖`, at
/// most `10·N` iterations. The true residual is re-checked on convergence
/// and the iteration restarted if recurrence drift left it above `tol`.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    solve_spd_with_guess(a, b, None, tol).map(|s| s.x)
}

pub fn solve_spd_with_guess(
    a: &SparseMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    tol: f64,
) -> Result<IterativeSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::InvalidArgument("solve_spd needs a square system".into()));
    }
    let b_norm = norm(b);
    let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if b_norm == 0.0 {
        return Ok(IterativeSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let max_iterations = 10 * n.max(1);
    let mut iterations = 0;
    let mut ax = vec![0.0; n];
    let mut q = vec![0.0; n];
    loop {
        a.mul_vec_into(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let true_residual = norm(&r) / b_norm;
        if true_residual <= tol {
            return Ok(IterativeSolution {
                x,
                iterations,
                relative_residual: true_residual,
            });
        }
        if iterations >= max_iterations {
            return Err(Error::NotConverged {
                residual: true_residual,
                iterations,
            });
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let target = 0.5 * tol * b_norm;
        while iterations < max_iterations {
            iterations += 1;
            a.mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::Solver(format!(
                    "conjugate gradients broke down (pᵀAp = {pq:e}); matrix not positive definite?"
                )));
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if norm(&r) <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Sparse LU factorization of a general square matrix.
pub struct LuFactorization {
    lu: Lu<usize, f64>,
    n: usize,
}

impl std::fmt::Debug for LuFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactorization").field("n", &self.n).finish()
    }
}

impl LuFactorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let csc = CscView::new(a);
        let symbolic = SymbolicLu::try_new(csc.symbolic())
            .map_err(|e| Error::Solver(format!("symbolic LU failed: {e:?}")))?;
        Self::with_symbolic(&symbolic, &csc)
    }

    fn with_symbolic(symbolic: &SymbolicLu<usize>, csc: &CscView) -> Result<Self> {
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), csc.matrix())
            .map_err(|e| Error::Solver(format!("LU factorization failed: {e:?}")))?;
        Ok(LuFactorization { lu, n: csc.n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.lu.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, self.n, 1),
        );
        x
    }
}

/// Sparse Cholesky factorization of an SPD matrix.
pub struct CholeskyFactorization {
    llt: Llt<usize, f64>,
    n: usize,
}

impl CholeskyFactorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let csc = CscView::new(a);
        let llt = csc
            .matrix()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(CholeskyFactorization { llt, n: csc.n })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.llt.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, self.n, 1),
        );
        x
    }
}

/// Direct solve through sparse LU.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() || b.len() != a.nrows() {
        return Err(Error::InvalidArgument("solve_direct needs a square system".into()));
    }
    Ok(LuFactorization::new(a)?.solve(b))
}

struct CscView {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscView {
    fn new(a: &SparseMatrix) -> Self {
        let (col_ptr, row_idx, perm) = a.csc_structure();
        let values = perm.iter().map(|&k| a.values[k]).collect();
        CscView {
            n: a.nrows(),
            col_ptr,
            row_idx,
            values,
        }
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }

    fn matrix(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.symbolic(), &self.values)
    }
}

/// Restarted GMRES with right preconditioning, to `‖Ax - b‖ ≤ tol·‖b‖`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iterations: usize,
) -> Result<IterativeSolution> {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(IterativeSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let restart = restart.max(1);
    let mut iterations = 0;
    loop {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / b_norm <= tol {
            return Ok(IterativeSolution {
                x,
                iterations,
                relative_residual: beta / b_norm,
            });
        }
        if iterations >= max_iterations {
            return Err(Error::NotConverged {
                residual: beta / b_norm,
                iterations,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hessenberg: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && iterations < max_iterations {
            iterations += 1;
            let z = precondition(&basis[k]);
            let mut w = apply(&z);
            let mut h = vec![0.0; k + 2];
            // modified Gram–Schmidt
            for (i, v) in basis.iter().enumerate() {
                h[i] = dot(&w, v);
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= h[i] * vj;
                }
            }
            h[k + 1] = norm(&w);
            for i in 0..k {
                let tmp = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = tmp;
            }
            let denom = h[k].hypot(h[k + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[k] / denom, h[k + 1] / denom) };
            cs.push(c);
            sn.push(s);
            let subdiag = h[k + 1];
            h[k] = c * h[k] + s * subdiag;
            h[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hessenberg.push(h);
            let lucky = subdiag <= 1e-300;
            if !lucky {
                basis.push(w.iter().map(|v| v / subdiag).collect());
            }
            k += 1;
            if g[k].abs() / b_norm <= 0.1 * tol || lucky {
                break;
            }
        }
        // back substitution on the k×k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in (i + 1)..k {
                acc -= hessenberg[j][i] * y[j];
            }
            y[i] = acc / hessenberg[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[j]) {
                *u += yj * v;
            }
        }
        let correction = precondition(&update);
        for (xi, ci) in x.iter_mut().zip(&correction) {
            *xi += ci;
        }
    }
}

/// The coupled matrix `[[δ₀M, τA], [-εA, M]]` of one linearly implicit BDF
/// step, assembled in block order (all `u` unknowns first).
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub delta0: f64,
    pub tau: f64,
    pub epsilon: f64,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    matrix: SparseMatrix,
    mass_norm: f64,
    stiffness_norm: f64,
}

impl BlockSystem {
    pub fn new(
        delta0: f64,
        tau: f64,
        epsilon: f64,
        mass: &SparseMatrix,
        stiffness: &SparseMatrix,
    ) -> Result<Self> {
        if !(delta0 > 0.0 && tau > 0.0 && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "block system needs δ₀, τ, ε > 0 (got {delta0}, {tau}, {epsilon})"
            )));
        }
        let n = mass.nrows();
        if mass.ncols() != n || stiffness.nrows() != n || stiffness.ncols() != n {
            return Err(Error::InvalidArgument(
                "mass and stiffness must be square and of equal size".into(),
            ));
        }
        let matrix = interleave(mass, stiffness, [delta0, tau, -epsilon, 1.0])?;
        Ok(BlockSystem {
            delta0,
            tau,
            epsilon,
            mass_norm: row_sum_norm(mass),
            stiffness_norm: row_sum_norm(stiffness),
            mass: mass.clone(),
            stiffness: stiffness.clone(),
            matrix,
        })
    }

    pub fn size(&self) -> usize {
        self.mass.nrows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// The same system with its second row scaled by `-τ/ε`, which makes it
    /// symmetric quasi-definite: `[[δ₀M, τA], [τA, -(τ/ε)M]]`.
    pub fn symmetric_form(&self) -> Result<SparseMatrix> {
        let s = self.tau / self.epsilon;
        interleave(&self.mass, &self.stiffness, [self.delta0, self.tau, self.tau, -s])
    }

    /// The `(M, A)` pair the system was built from.
    pub fn blocks(&self) -> (&SparseMatrix, &SparseMatrix) {
        (&self.mass, &self.stiffness)
    }

    /// Normwise backward errors of both block rows in the max norm,
    /// `‖r‖ / (‖B₁‖‖u‖ + ‖B₂‖‖w‖ + ‖rhs‖)` with `B₁, B₂` the row's blocks.
    pub fn residuals(&self, u: &[f64], w: &[f64], rhs_u: &[f64], rhs_w: &[f64]) -> (f64, f64) {
        let mu = self.mass.mul_vec(u);
        let mw = self.mass.mul_vec(w);
        let au = self.stiffness.mul_vec(u);
        let aw = self.stiffness.mul_vec(w);
        let mut r_top = 0.0f64;
        let mut r_bottom = 0.0f64;
        for i in 0..self.size() {
            r_top = r_top.max((self.delta0 * mu[i] + self.tau * aw[i] - rhs_u[i]).abs());
            r_bottom = r_bottom.max((-self.epsilon * au[i] + mw[i] - rhs_w[i]).abs());
        }
        let (nu, nw) = (max_norm(u), max_norm(w));
        let top = relative(
            r_top,
            self.delta0 * self.mass_norm * nu + self.tau * self.stiffness_norm * nw + max_norm(rhs_u),
        );
        let bottom = relative(
            r_bottom,
            self.epsilon * self.stiffness_norm * nu + self.mass_norm * nw + max_norm(rhs_w),
        );
        (top, bottom)
    }
}

/// `[[c₀M, c₁A], [c₂A, c₃M]]` as one CSR matrix.
fn interleave(mass: &SparseMatrix, stiffness: &SparseMatrix, c: [f64; 4]) -> Result<SparseMatrix> {
    let n = mass.nrows();
    let mut row_ptr = Vec::with_capacity(2 * n + 1);
    let mut col_idx = Vec::with_capacity(2 * (mass.nnz() + stiffness.nnz()));
    let mut values = Vec::with_capacity(col_idx.capacity());
    row_ptr.push(0);
    let mut push_row = |left: (&SparseMatrix, f64), right: (&SparseMatrix, f64), r: usize| {
        for (col, v) in left.0.row(r) {
            col_idx.push(col);
            values.push(left.1 * v);
        }
        for (col, v) in right.0.row(r) {
            col_idx.push(n + col);
            values.push(right.1 * v);
        }
        row_ptr.push(col_idx.len());
    };
    for r in 0..n {
        push_row((mass, c[0]), (stiffness, c[1]), r);
    }
    for r in 0..n {
        push_row((stiffness, c[2]), (mass, c[3]), r);
    }
    SparseMatrix::from_csr(2 * n, 2 * n, row_ptr, col_idx, values)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximum absolute row sum.
fn row_sum_norm(a: &SparseMatrix) -> f64 {
    (0..a.nrows())
        .map(|r| a.row(r).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Which path produced a block solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMethod {
    SparseLdlt,
    SparseLu,
    Gmres,
}

#[derive(Clone, Debug)]
pub struct BlockSolution {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub residual_u: f64,
    pub residual_w: f64,
    pub method: BlockMethod,
    pub refinements: usize,
}

impl BlockSolution {
    pub fn max_residual(&self) -> f64 {
        self.residual_u.max(self.residual_w)
    }

    fn with_method(mut self, method: BlockMethod) -> Self {
        self.method = method;
        self
    }
}

/// Block solver that keeps the symbolic analyses across time steps (the
/// sparsity pattern never changes on a fixed mesh connectivity).
#[derive(Default)]
pub struct BlockSolver {
    cached_lu: Option<(SparseMatrix, SymbolicLu<usize>)>,
    cached_ldlt: Option<(SparseMatrix, SymbolicCholesky<usize>)>,
    force_iterative: bool,
}

impl std::fmt::Debug for BlockSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockSolver")
            .field("cached_lu", &self.cached_lu.is_some())
            .field("cached_ldlt", &self.cached_ldlt.is_some())
            .field("force_iterative", &self.force_iterative)
            .finish()
    }
}

impl BlockSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solver that skips the factorization and uses preconditioned GMRES.
    pub fn iterative() -> Self {
        BlockSolver {
            force_iterative: true,
            ..Self::default()
        }
    }

    /// Tries LDLᵀ of the symmetric form, then sparse LU, then GMRES.
    pub fn solve(&mut self, system: &BlockSystem, rhs_u: &[f64], rhs_w: &[f64]) -> Result<BlockSolution> {
        let n = system.size();
        if rhs_u.len() != n || rhs_w.len() != n {
            return Err(Error::InvalidArgument("right-hand side length mismatch".into()));
        }
        if !self.force_iterative {
            match self.solve_ldlt(system, rhs_u, rhs_w) {
                Ok(sol) if sol.max_residual() <= BLOCK_TOLERANCE => return Ok(sol),
                Ok(sol) => log::warn!("LDLᵀ residual {:e} above tolerance; trying LU", sol.max_residual()),
                Err(e) => log::warn!("LDLᵀ failed ({e}); trying LU"),
            }
            match self.solve_lu(system, rhs_u, rhs_w) {
                Ok(sol) if sol.max_residual() <= BLOCK_TOLERANCE => return Ok(sol),
                Ok(sol) => log::warn!(
                    "sparse LU residual {:e} above tolerance; falling back to GMRES",
                    sol.max_residual()
                ),
                Err(e) => log::warn!("sparse LU failed ({e}); falling back to GMRES"),
            }
        }
        let sol = solve_block_gmres(system, rhs_u, rhs_w)?;
        if sol.max_residual() > BLOCK_TOLERANCE {
            return Err(Error::Solver(format!(
                "block residual {:e} exceeds {BLOCK_TOLERANCE:e}",
                sol.max_residual()
            )));
        }
        Ok(sol)
    }

    /// Sparse LU of the unsymmetric system, skipping the LDLᵀ attempt.
    pub fn solve_lu(&mut self, system: &BlockSystem, rhs_u: &[f64], rhs_w: &[f64]) -> Result<BlockSolution> {
        let csc = CscView::new(system.matrix());
        let reuse = matches!(&self.cached_lu, Some((pattern, _)) if pattern.same_pattern(system.matrix()));
        if !reuse {
            let symbolic = SymbolicLu::try_new(csc.symbolic())
                .map_err(|e| Error::Solver(format!("symbolic LU failed: {e:?}")))?;
            self.cached_lu = Some((system.matrix().clone(), symbolic));
        }
        let symbolic = &self.cached_lu.as_ref().unwrap().1;
        let lu = LuFactorization::with_symbolic(symbolic, &csc)?;
        let rhs: Vec<f64> = rhs_u.iter().chain(rhs_w).copied().collect();
        let sol = refine(system, &rhs, |r| lu.solve(r));
        Ok(sol.with_method(BlockMethod::SparseLu))
    }

    /// LDLᵀ without pivoting of the symmetric quasi-definite form, which
    /// exists for any symmetric ordering.
    pub fn solve_ldlt(&mut self, system: &BlockSystem, rhs_u: &[f64], rhs_w: &[f64]) -> Result<BlockSolution> {
        let n = system.size();
        let sym = system.symmetric_form()?;
        let reuse = matches!(&self.cached_ldlt, Some((pattern, _)) if pattern.same_pattern(&sym));
        if !reuse {
            // symmetric storage: the CSR arrays double as CSC
            let pattern = SymbolicSparseColMatRef::new_checked(2 * n, 2 * n, sym.row_ptr(), None, sym.col_idx());
            let symbolic =
                factorize_symbolic_cholesky(pattern, Side::Lower, SymmetricOrdering::Amd, Default::default())
                    .map_err(|e| Error::Solver(format!("symbolic LDLᵀ failed: {e:?}")))?;
            self.cached_ldlt = Some((sym.clone(), symbolic));
        }
        let symbolic = &self.cached_ldlt.as_ref().unwrap().1;
        let pattern = SymbolicSparseColMatRef::new_checked(2 * n, 2 * n, sym.row_ptr(), None, sym.col_idx());
        let matrix = SparseColMatRef::new(pattern, sym.values());
        let mut factor = vec![0.0; symbolic.len_val()];
        let mut buf = MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        let ldlt = symbolic
            .factorize_numeric_ldlt(
                &mut factor,
                matrix,
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(|e| Error::Solver(format!("numeric LDLᵀ failed: {e:?}")))?;
        let mut solve_buf = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let scale = -system.tau / system.epsilon;
        let rhs: Vec<f64> = rhs_u.iter().chain(rhs_w).copied().collect();
        let sol = refine(system, &rhs, |r| {
            let mut x: Vec<f64> = r[..n].iter().copied().chain(r[n..].iter().map(|v| scale * v)).collect();
            ldlt.solve_in_place_with_conj(
                Conj::No,
                MatMut::from_column_major_slice_mut(&mut x, 2 * n, 1),
                Par::Seq,
                MemStack::new(&mut solve_buf),
            );
            x
        });
        Ok(sol.with_method(BlockMethod::SparseLdlt))
    }
}

/// Direct solve followed by at most three steps of iterative refinement
/// against the unsymmetric system.
fn refine(system: &BlockSystem, rhs: &[f64], mut solve: impl FnMut(&[f64]) -> Vec<f64>) -> BlockSolution {
    let n = system.size();
    let (rhs_u, rhs_w) = rhs.split_at(n);
    let mut x = solve(rhs);
    let mut refinements = 0;
    let (mut ru, mut rw) = system.residuals(&x[..n], &x[n..], rhs_u, rhs_w);
    while ru.max(rw) > 1e-3 * BLOCK_TOLERANCE && refinements < 3 {
        let kx = system.matrix().mul_vec(&x);
        let r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
        let dx = solve(&r);
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let (cu, cw) = system.residuals(&candidate[..n], &candidate[n..], rhs_u, rhs_w);
        refinements += 1;
        if !(cu.max(cw) < ru.max(rw)) {
            break;
        }
        x = candidate;
        ru = cu;
        rw = cw;
    }
    let w = x.split_off(n);
    BlockSolution {
        u: x,
        w,
        residual_u: ru,
        residual_w: rw,
        method: BlockMethod::SparseLu,
        refinements,
    }
}

/// GMRES on the block system preconditioned by `diag(δ₀M, M)⁻¹`.
pub fn solve_block_gmres(system: &BlockSystem, rhs_u: &[f64], rhs_w: &[f64]) -> Result<BlockSolution> {
    let n = system.size();
    let (mass, _) = system.blocks();
    let chol = CholeskyFactorization::new(mass)?;
    let delta0 = system.delta0;
    let precondition = |v: &[f64]| {
        let mut top = chol.solve(&v[..n]);
        top.iter_mut().for_each(|x| *x /= delta0);
        let bottom = chol.solve(&v[n..]);
        top.extend(bottom);
        top
    };
    let apply = |v: &[f64]| system.matrix().mul_vec(v);
    let rhs: Vec<f64> = rhs_u.iter().chain(rhs_w).copied().collect();
    let sol = gmres(apply, precondition, &rhs, 1e-3 * BLOCK_TOLERANCE, 60, 20 * (2 * n).max(10))?;
    let mut x = sol.x;
    let w = x.split_off(n);
    let (ru, rw) = system.residuals(&x, &w, rhs_u, rhs_w);
    Ok(BlockSolution {
        u: x,
        w,
        residual_u: ru,
        residual_w: rw,
        method: BlockMethod::Gmres,
        refinements: 0,
    })
}

/// One-shot block solve; see [`BlockSolver`] for repeated solves.
pub fn solve_block(
    delta0: f64,
    tau: f64,
    epsilon: f64,
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    rhs_u: &[f64],
    rhs_w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let system = BlockSystem::new(delta0, tau, epsilon, mass, stiffness)?;
    let sol = BlockSolver::new().solve(&system, rhs_u, rhs_w)?;
    Ok((sol.u, sol.w))
}
