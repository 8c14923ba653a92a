//! Problem data, the generalized Ritz map, the ϑ correction and initial
//! values for the semi-discrete Cahn–Hilliard system
//!
//! ```text
//! d/dt (M u) + A w = f(u) + b
//! M w - ε A u = ε⁻¹ g(u) + ϑ
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{ensure_finite, Snapshot};
use crate::error::{Error, Result};
use crate::geometry::{
    project_to_surface, surface_gradient, AmbientField, LevelSet, ManufacturedSolution, Point,
};
use crate::linsolve::{norm, CholeskyFactorization, SparseMatrix};

/// Relative residual reached by the elliptic solves of this module.
pub const ELLIPTIC_TOLERANCE: f64 = 1e-12;

pub type GradientNonlinearity = Arc<dyn Fn(f64, &Vector3<f64>) -> f64 + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(&Point, f64) -> Result<f64> + Send + Sync>;

/// Potential `F` with derivative `g = F′`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `F(u) = ¼(u² - 1)²`, `g(u) = u³ - u`.
    DoubleWell,
    /// `F = g = 0`.
    Zero,
}

impl Potential {
    pub fn value(&self, u: f64) -> f64 {
        match self {
            Potential::DoubleWell => 0.25 * (u * u - 1.0).powi(2),
            Potential::Zero => 0.0,
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Potential::DoubleWell => u * u * u - u,
            Potential::Zero => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    WithTheta,
    WithoutTheta,
}

/// How the discrete initial value of `u` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    Interpolation,
    Ritz,
}

/// How the source `b` enters the load vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLoad {
    /// `M b_I` with `b_I` the nodal interpolant.
    Interpolated,
    /// Quadrature of `b` at points of the discrete surface.
    Quadrature,
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub surface: Arc<dyn LevelSet>,
    pub epsilon: f64,
    pub potential: Potential,
    pub f: Option<GradientNonlinearity>,
    pub source: Option<SourceFn>,
    pub source_load: SourceLoad,
    pub exact_u: Option<Arc<dyn AmbientField>>,
    pub exact_w: Option<Arc<dyn AmbientField>>,
    /// Initial datum used when there is no exact solution.
    pub initial_u: Option<Arc<dyn AmbientField>>,
    theta_mode: Option<ThetaMode>,
    pub initial_mode: InitialMode,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("epsilon", &self.epsilon)
            .field("potential", &self.potential)
            .field("has_f", &self.f.is_some())
            .field("has_source", &self.source.is_some())
            .field("has_exact_u", &self.exact_u.is_some())
            .field("has_exact_w", &self.exact_w.is_some())
            .field("theta_mode", &self.theta_mode())
            .field("initial_mode", &self.initial_mode)
            .finish()
    }
}

impl ProblemSpec {
    /// Double-well problem without source or exact data.
    pub fn new(surface: Arc<dyn LevelSet>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(ProblemSpec {
            surface,
            epsilon,
            potential: Potential::DoubleWell,
            f: None,
            source: None,
            source_load: SourceLoad::Interpolated,
            exact_u: None,
            exact_w: None,
            initial_u: None,
            theta_mode: None,
            initial_mode: InitialMode::Interpolation,
        })
    }

    /// Exact solution, chemical potential and source from a manufactured
    /// solution with the double-well potential.
    pub fn manufactured(solution: &ManufacturedSolution) -> Result<Self> {
        let mut p = ProblemSpec::new(Arc::clone(solution.surface()), solution.epsilon())?;
        let s = solution.clone();
        p.source = Some(Arc::new(move |x: &Point, t: f64| s.source(x, t)));
        p.exact_u = Some(Arc::clone(solution.u()));
        p.exact_w = Some(Arc::new(solution.chemical_potential()));
        Ok(p)
    }

    pub fn with_potential(mut self, potential: Potential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_f(mut self, f: impl Fn(f64, &Vector3<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Some(Arc::new(f));
        self
    }

    pub fn with_source(mut self, b: impl Fn(&Point, f64) -> Result<f64> + Send + Sync + 'static) -> Self {
        self.source = Some(Arc::new(b));
        self
    }

    pub fn with_source_load(mut self, mode: SourceLoad) -> Self {
        self.source_load = mode;
        self
    }

    pub fn with_initial(mut self, u0: Arc<dyn AmbientField>) -> Self {
        self.initial_u = Some(u0);
        self
    }

    pub fn with_exact_w(mut self, w: Arc<dyn AmbientField>) -> Self {
        self.exact_w = Some(w);
        self
    }

    pub fn with_theta_mode(mut self, mode: ThetaMode) -> Self {
        self.theta_mode = Some(mode);
        self
    }

    pub fn with_initial_mode(mut self, mode: InitialMode) -> Self {
        self.initial_mode = mode;
        self
    }

    /// Explicit mode if set, otherwise with ϑ exactly when `exact_w` exists.
    pub fn theta_mode(&self) -> ThetaMode {
        self.theta_mode.unwrap_or(if self.exact_w.is_some() {
            ThetaMode::WithTheta
        } else {
            ThetaMode::WithoutTheta
        })
    }

    fn initial_field(&self) -> Result<&Arc<dyn AmbientField>> {
        self.exact_u
            .as_ref()
            .or(self.initial_u.as_ref())
            .ok_or_else(|| Error::config("problem has neither an exact solution nor an initial datum"))
    }
}

/// Nodal vectors of `u` and `w` at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatePair {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub t: f64,
}

impl StatePair {
    pub fn new(u: Vec<f64>, w: Vec<f64>, t: f64) -> Result<Self> {
        if u.len() != w.len() {
            return Err(Error::InvalidArgument(format!(
                "u has {} entries but w has {}",
                u.len(),
                w.len()
            )));
        }
        ensure_finite(&u, t, "u")?;
        ensure_finite(&w, t, "w")?;
        Ok(StatePair { u, w, t })
    }
}

/// Time-independent correction of the second equation.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector {
    values: Arc<[f64]>,
}

impl ThetaVector {
    pub fn zeros(n: usize) -> Self {
        ThetaVector {
            values: vec![0.0; n].into(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

/// Initial state together with the correction it was built with.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub state: StatePair,
    pub theta: ThetaVector,
    /// `w̄(0)`, the chemical potential of the uncorrected elliptic problem.
    pub wbar: Vec<f64>,
}

/// Solves an SPD system by sparse Cholesky with iterative refinement.
pub fn solve_spd_refined(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let scale = norm(b);
    if scale == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let chol = CholeskyFactorization::new(a)?;
    let mut x = chol.solve(b);
    for _ in 0..4 {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
        if norm(&r) <= ELLIPTIC_TOLERANCE * scale {
            return Ok(x);
        }
        let dx = chol.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
    }
    let ax = a.mul_vec(&x);
    let res = b.iter().zip(&ax).map(|(b, ax)| (b - ax).powi(2)).sum::<f64>().sqrt() / scale;
    if res <= ELLIPTIC_TOLERANCE {
        Ok(x)
    } else {
        Err(Error::NotConverged {
            residual: res,
            iterations: 4,
        })
    }
}

/// Nodal interpolant of an ambient field at the snapshot time.
pub fn interpolate(snapshot: &Snapshot, field: &dyn AmbientField) -> Vec<f64> {
    let t = snapshot.time();
    snapshot.mesh.nodes.par_iter().map(|x| field.value(x, t)).collect()
}

/// Right-hand side `∫ ∇_Γu(y)·∇φ_k + u(y) φ_k` of the Ritz map, with `y` the
/// projection of each quadrature point onto the exact surface.
pub fn ritz_rhs(snapshot: &Snapshot, surface: &dyn LevelSet, field: &dyn AmbientField) -> Result<Vec<f64>> {
    let t = snapshot.time();
    let rule = snapshot.assembler.rule();
    let locals = snapshot
        .geometry
        .par_iter()
        .map(|g| {
            let mut local = [0.0; 3];
            for (bary, w) in rule.points.iter().zip(&rule.weights) {
                let y = project_to_surface(surface, &g.point(bary), t)?;
                let value = field.value(&y, t);
                let grad = surface_gradient(field, surface, &y, t)?;
                let jw = w * 2.0 * g.area;
                for k in 0..3 {
                    local[k] += jw * (grad.dot(&g.gradients[k]) + value * bary[k]);
                }
            }
            Ok(local)
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let mut r = vec![0.0; snapshot.node_count()];
    for (el, local) in snapshot.mesh.elements.iter().zip(&locals) {
        for k in 0..3 {
            r[el[k]] += local[k];
        }
    }
    ensure_finite(&r, t, "Ritz right-hand side")?;
    Ok(r)
}

/// Generalized Ritz map: solves `(M + A) z = r` with [`ritz_rhs`].
pub fn ritz_map(snapshot: &Snapshot, surface: &dyn LevelSet, field: &dyn AmbientField) -> Result<Vec<f64>> {
    let r = ritz_rhs(snapshot, surface, field)?;
    let k = snapshot.mass.linear_combination(1.0, &snapshot.stiffness, 1.0)?;
    solve_spd_refined(&k, &r)
}

/// `ε⁻¹ ∫ g(u_h) φ_k`.
pub fn potential_load(snapshot: &Snapshot, problem: &ProblemSpec, u: &[f64]) -> Result<Vec<f64>> {
    let inv = 1.0 / problem.epsilon;
    match problem.potential {
        Potential::Zero => Ok(vec![0.0; u.len()]),
        p => snapshot.nonlinear_load(u, |v, _| inv * p.derivative(v)),
    }
}

fn elliptic_rhs(snapshot: &Snapshot, problem: &ProblemSpec, u0: &[f64]) -> Result<Vec<f64>> {
    let au = snapshot.stiffness.mul_vec(u0);
    let g = potential_load(snapshot, problem, u0)?;
    Ok(au.iter().zip(&g).map(|(a, g)| problem.epsilon * a + g).collect())
}

/// Solves `M w̄ = ε A u⁰ + ε⁻¹ g(u⁰)`.
pub fn compute_wbar0(snapshot0: &Snapshot, problem: &ProblemSpec, u0: &[f64]) -> Result<Vec<f64>> {
    let rhs = elliptic_rhs(snapshot0, problem, u0)?;
    solve_spd_refined(&snapshot0.mass, &rhs)
}

/// `ϑ = M(0)(w*(0) - w̄(0))` with `w*` the Ritz map of the exact `w(·, 0)`.
pub fn compute_theta(snapshot0: &Snapshot, problem: &ProblemSpec, u0: &[f64]) -> Result<ThetaVector> {
    if problem.theta_mode() == ThetaMode::WithoutTheta {
        return Ok(ThetaVector::zeros(u0.len()));
    }
    let exact_w = problem
        .exact_w
        .as_ref()
        .ok_or_else(|| Error::config("with_theta requires an exact chemical potential"))?;
    let wstar = ritz_map(snapshot0, problem.surface.as_ref(), exact_w.as_ref())?;
    let wbar = compute_wbar0(snapshot0, problem, u0)?;
    let diff: Vec<f64> = wstar.iter().zip(&wbar).map(|(a, b)| a - b).collect();
    Ok(ThetaVector {
        values: snapshot0.mass.mul_vec(&diff).into(),
    })
}

/// `u⁰` by interpolation or Ritz map, then `w⁰` from the corrected
/// elliptic problem `M w⁰ = ε A u⁰ + ε⁻¹ g(u⁰) + ϑ`.
pub fn initial_state(snapshot0: &Snapshot, problem: &ProblemSpec) -> Result<InitialData> {
    let field = problem.initial_field()?;
    let u0 = match problem.initial_mode {
        InitialMode::Interpolation => interpolate(snapshot0, field.as_ref()),
        InitialMode::Ritz => ritz_map(snapshot0, problem.surface.as_ref(), field.as_ref())?,
    };
    let theta = compute_theta(snapshot0, problem, &u0)?;
    let base = elliptic_rhs(snapshot0, problem, &u0)?;
    let wbar = solve_spd_refined(&snapshot0.mass, &base)?;
    let rhs: Vec<f64> = base.iter().zip(theta.as_slice()).map(|(a, b)| a + b).collect();
    let w0 = solve_spd_refined(&snapshot0.mass, &rhs)?;
    Ok(InitialData {
        state: StatePair::new(u0, w0, snapshot0.time())?,
        theta,
        wbar,
    })
}

/// Load vectors `(f, ε⁻¹g)` for the argument `u` (in time stepping, the
/// extrapolated value). `f` includes the source at the snapshot time.
pub fn rhs_vectors(snapshot: &Snapshot, problem: &ProblemSpec, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = snapshot.time();
    ensure_finite(u, t, "load argument")?;
    let mut f = match &problem.f {
        Some(f) => snapshot.nonlinear_load(u, |v, grad| f(v, grad))?,
        None => vec![0.0; u.len()],
    };
    if let Some(b) = &problem.source {
        let load = match problem.source_load {
            SourceLoad::Interpolated => {
                let nodal = snapshot
                    .mesh
                    .nodes
                    .par_iter()
                    .map(|x| b(x, t))
                    .collect::<Result<Vec<f64>>>()?;
                snapshot.mass.mul_vec(&nodal)
            }
            SourceLoad::Quadrature => snapshot.source_load(|x, t| b(x, t))?,
        };
        f.iter_mut().zip(&load).for_each(|(a, b)| *a += b);
    }
    ensure_finite(&f, t, "f load")?;
    let g = potential_load(snapshot, problem, u)?;
    Ok((f, g))
}
