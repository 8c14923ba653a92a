//! Finite element matrices and load vectors for piecewise-linear elements on
//! a flat-triangle surface mesh.
//!
//! Mass, stiffness and the mass-matrix time derivative use exact element
//! matrices. Loads of nonlinear functions and of ambient sources use a
//! symmetric six-point rule of degree 4. Element contributions are computed
//! in parallel and scattered in element order, so results do not depend on
//! the thread count.

use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linsolve::SparseMatrix;
use crate::mesh::SurfaceMesh;

/// Quadrature on the reference triangle `{(ξ, η) : ξ, η ≥ 0, ξ + η ≤ 1}`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    /// Barycentric coordinates `(λ₀, λ₁, λ₂)`, with `(ξ, η) = (λ₁, λ₂)`.
    pub points: Vec<[f64; 3]>,
    /// Reference-area weights summing to 1/2.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Six-point symmetric rule, exact for polynomials of degree 4.
    pub fn degree4() -> Self {
        const A: f64 = 0.445_948_490_915_964_886_32;
        const WA: f64 = 0.223_381_589_678_011_465_70;
        const B: f64 = 0.091_576_213_509_770_743_460;
        const WB: f64 = 0.109_951_743_655_321_867_64;
        let orbit = |a: f64| [[a, a, 1.0 - 2.0 * a], [a, 1.0 - 2.0 * a, a], [1.0 - 2.0 * a, a, a]];
        let mut points = Vec::with_capacity(6);
        points.extend(orbit(A));
        points.extend(orbit(B));
        let weights = [WA, WA, WA, WB, WB, WB].iter().map(|w| 0.5 * w).collect();
        QuadratureRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `∫ f(ξ, η)` over the reference triangle.
    pub fn integrate_reference(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[1], p[2]))
            .sum()
    }
}

/// Geometry of one flat triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub vertices: [Point; 3],
    /// Tangential gradients of the three hat functions; constant on the
    /// element, in its plane, summing to zero.
    pub gradients: [Vector3<f64>; 3],
    pub area: f64,
    pub unit_normal: Vector3<f64>,
}

impl ElementGeometry {
    pub fn new(vertices: [Point; 3]) -> Option<Self> {
        let [p0, p1, p2] = vertices;
        let cross = (p1 - p0).cross(&(p2 - p0));
        let twice_area = cross.norm();
        if !(twice_area > 0.0) || !twice_area.is_finite() {
            return None;
        }
        let n = cross / twice_area;
        let edge_opposite = [p2 - p1, p0 - p2, p1 - p0];
        let gradients = edge_opposite.map(|e| n.cross(&e) / twice_area);
        Some(ElementGeometry {
            vertices,
            gradients,
            area: 0.5 * twice_area,
            unit_normal: n,
        })
    }

    pub fn point(&self, bary: &[f64; 3]) -> Point {
        self.vertices[0] * bary[0] + self.vertices[1] * bary[1] + self.vertices[2] * bary[2]
    }

    /// `∇_{Γ_h}·V_h` on this element from nodal velocities.
    pub fn velocity_divergence(&self, velocities: &[Vector3<f64>; 3]) -> f64 {
        (0..3).map(|i| velocities[i].dot(&self.gradients[i])).sum()
    }

    /// Tangential gradient of the P1 function with nodal values `values`.
    pub fn gradient_of(&self, values: [f64; 3]) -> Vector3<f64> {
        self.gradients[0] * values[0] + self.gradients[1] * values[1] + self.gradients[2] * values[2]
    }

    pub fn local_mass(&self) -> [[f64; 3]; 3] {
        let d = self.area / 6.0;
        let o = self.area / 12.0;
        [[d, o, o], [o, d, o], [o, o, d]]
    }

    pub fn local_stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = self.area * self.gradients[i].dot(&self.gradients[j]);
            }
        }
        k
    }
}

/// Element geometries of a mesh snapshot.
pub fn element_geometries(mesh: &SurfaceMesh) -> Result<Vec<ElementGeometry>> {
    (0..mesh.element_count())
        .into_par_iter()
        .map(|e| {
            ElementGeometry::new(mesh.vertices(e)).ok_or(Error::DegenerateElement {
                element: e,
                area: mesh.element_area(e),
            })
        })
        .collect()
}

/// Node-adjacency sparsity pattern and the per-element scatter map. Depends
/// only on connectivity, so one instance serves a whole evolution.
#[derive(Clone, Debug)]
pub struct Assembler {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    scatter: Vec<[usize; 9]>,
    rule: QuadratureRule,
}

impl Assembler {
    pub fn new(mesh: &SurfaceMesh) -> Self {
        let n = mesh.node_count();
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &[a, b, c] in &mesh.elements {
            for &i in &[a, b, c] {
                neighbours[i].extend_from_slice(&[a, b, c]);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in neighbours.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let position = |r: usize, c: usize| {
            let start = row_ptr[r];
            start + col_idx[start..row_ptr[r + 1]].binary_search(&c).unwrap()
        };
        let scatter = mesh
            .elements
            .iter()
            .map(|el| {
                let mut s = [0usize; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        s[3 * i + j] = position(el[i], el[j]);
                    }
                }
                s
            })
            .collect();
        Assembler {
            n,
            row_ptr,
            col_idx,
            scatter,
            rule: QuadratureRule::degree4(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    fn check(&self, mesh: &SurfaceMesh) -> Result<()> {
        if mesh.node_count() != self.n || mesh.element_count() != self.scatter.len() {
            return Err(Error::InvalidArgument(
                "mesh does not match the assembler's connectivity".into(),
            ));
        }
        Ok(())
    }

    fn empty(&self) -> SparseMatrix {
        SparseMatrix::with_pattern(self.n, self.n, self.row_ptr.clone(), self.col_idx.clone())
    }

    fn assemble_local(&self, locals: &[[[f64; 3]; 3]]) -> SparseMatrix {
        let mut m = self.empty();
        let values = m.values_mut();
        for (local, slots) in locals.iter().zip(&self.scatter) {
            for i in 0..3 {
                for j in 0..3 {
                    values[slots[3 * i + j]] += local[i][j];
                }
            }
        }
        m
    }

    /// `M_ij = ∫ φ_j φ_i`.
    pub fn mass(&self, mesh: &SurfaceMesh, geometry: &[ElementGeometry]) -> Result<SparseMatrix> {
        self.check(mesh)?;
        let locals: Vec<_> = geometry.par_iter().map(ElementGeometry::local_mass).collect();
        Ok(self.assemble_local(&locals))
    }

    /// `A_ij = ∫ ∇φ_j · ∇φ_i`.
    pub fn stiffness(&self, mesh: &SurfaceMesh, geometry: &[ElementGeometry]) -> Result<SparseMatrix> {
        self.check(mesh)?;
        let locals: Vec<_> = geometry.par_iter().map(ElementGeometry::local_stiffness).collect();
        Ok(self.assemble_local(&locals))
    }

    /// `Ṁ_ij = ∫ φ_j φ_i (∇_{Γ_h}·V_h)`.
    pub fn mass_derivative(
        &self,
        mesh: &SurfaceMesh,
        geometry: &[ElementGeometry],
    ) -> Result<SparseMatrix> {
        self.check(mesh)?;
        let velocity = mesh.node_velocity.as_ref().ok_or(Error::MissingVelocity)?;
        let locals: Vec<_> = mesh
            .elements
            .par_iter()
            .zip(geometry.par_iter())
            .map(|(el, g)| {
                let div = g.velocity_divergence(&[velocity[el[0]], velocity[el[1]], velocity[el[2]]]);
                g.local_mass().map(|row| row.map(|v| v * div))
            })
            .collect();
        Ok(self.assemble_local(&locals))
    }

    /// `∫ ψ(u_h, ∇_{Γ_h}u_h) φ_k` for every node `k`.
    pub fn nonlinear_load<F>(
        &self,
        mesh: &SurfaceMesh,
        geometry: &[ElementGeometry],
        u: &[f64],
        psi: F,
    ) -> Result<Vec<f64>>
    where
        F: Fn(f64, &Vector3<f64>) -> f64 + Sync,
    {
        self.check(mesh)?;
        if u.len() != self.n {
            return Err(Error::InvalidArgument("nodal vector length mismatch".into()));
        }
        let rule = &self.rule;
        let locals: Vec<[f64; 3]> = mesh
            .elements
            .par_iter()
            .zip(geometry.par_iter())
            .map(|(el, g)| {
                let vals = [u[el[0]], u[el[1]], u[el[2]]];
                let grad = g.gradient_of(vals);
                let mut local = [0.0; 3];
                for (bary, w) in rule.points.iter().zip(&rule.weights) {
                    let uq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
                    let value = psi(uq, &grad) * w * 2.0 * g.area;
                    for k in 0..3 {
                        local[k] += value * bary[k];
                    }
                }
                local
            })
            .collect();
        let load = self.scatter_vector(mesh, &locals);
        ensure_finite(&load, mesh.time, "nonlinear load")?;
        Ok(load)
    }

    /// `∫ b(x, t) φ_k` with `b` evaluated at quadrature points of the flat
    /// triangles.
    pub fn source_load<F>(
        &self,
        mesh: &SurfaceMesh,
        geometry: &[ElementGeometry],
        source: F,
    ) -> Result<Vec<f64>>
    where
        F: Fn(&Point, f64) -> Result<f64> + Sync,
    {
        self.check(mesh)?;
        let rule = &self.rule;
        let t = mesh.time;
        let locals = geometry
            .par_iter()
            .map(|g| {
                let mut local = [0.0; 3];
                for (bary, w) in rule.points.iter().zip(&rule.weights) {
                    let value = source(&g.point(bary), t)? * w * 2.0 * g.area;
                    for k in 0..3 {
                        local[k] += value * bary[k];
                    }
                }
                Ok(local)
            })
            .collect::<Result<Vec<[f64; 3]>>>()?;
        let load = self.scatter_vector(mesh, &locals);
        ensure_finite(&load, t, "source load")?;
        Ok(load)
    }

    fn scatter_vector(&self, mesh: &SurfaceMesh, locals: &[[f64; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (el, local) in mesh.elements.iter().zip(locals) {
            for k in 0..3 {
                out[el[k]] += local[k];
            }
        }
        out
    }
}

/// Mesh state at one time level with its geometry and system matrices.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub assembler: Arc<Assembler>,
    pub mesh: SurfaceMesh,
    pub geometry: Vec<ElementGeometry>,
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
}

impl Snapshot {
    pub fn new(assembler: &Arc<Assembler>, mesh: SurfaceMesh) -> Result<Self> {
        let geometry = element_geometries(&mesh)?;
        let mass = assembler.mass(&mesh, &geometry)?;
        let stiffness = assembler.stiffness(&mesh, &geometry)?;
        Ok(Snapshot {
            assembler: Arc::clone(assembler),
            mesh,
            geometry,
            mass,
            stiffness,
        })
    }

    /// Snapshot with a fresh assembler for the mesh's connectivity.
    pub fn from_mesh(mesh: SurfaceMesh) -> Result<Self> {
        let assembler = Arc::new(Assembler::new(&mesh));
        Snapshot::new(&assembler, mesh)
    }

    pub fn time(&self) -> f64 {
        self.mesh.time
    }

    pub fn mass_derivative(&self) -> Result<SparseMatrix> {
        self.assembler.mass_derivative(&self.mesh, &self.geometry)
    }

    pub fn nonlinear_load<F>(&self, u: &[f64], psi: F) -> Result<Vec<f64>>
    where
        F: Fn(f64, &Vector3<f64>) -> f64 + Sync,
    {
        self.assembler.nonlinear_load(&self.mesh, &self.geometry, u, psi)
    }

    pub fn source_load<F>(&self, source: F) -> Result<Vec<f64>>
    where
        F: Fn(&Point, f64) -> Result<f64> + Sync,
    {
        self.assembler.source_load(&self.mesh, &self.geometry, source)
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }
}

pub(crate) fn ensure_finite(v: &[f64], time: f64, what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::BlowUp {
            time,
            what: format!("{what} entry {i} is {}", v[i]),
        });
    }
    Ok(())
}

pub fn assemble_mass(mesh: &SurfaceMesh) -> Result<SparseMatrix> {
    let geometry = element_geometries(mesh)?;
    Assembler::new(mesh).mass(mesh, &geometry)
}

pub fn assemble_stiffness(mesh: &SurfaceMesh) -> Result<SparseMatrix> {
    let geometry = element_geometries(mesh)?;
    Assembler::new(mesh).stiffness(mesh, &geometry)
}

pub fn assemble_mdot(mesh: &SurfaceMesh) -> Result<SparseMatrix> {
    let geometry = element_geometries(mesh)?;
    Assembler::new(mesh).mass_derivative(mesh, &geometry)
}

pub fn assemble_nonlinear_load<F>(mesh: &SurfaceMesh, u: &[f64], psi: F) -> Result<Vec<f64>>
where
    F: Fn(f64, &Vector3<f64>) -> f64 + Sync,
{
    let geometry = element_geometries(mesh)?;
    Assembler::new(mesh).nonlinear_load(mesh, &geometry, u, psi)
}

pub fn assemble_source_load<F>(mesh: &SurfaceMesh, source: F) -> Result<Vec<f64>>
where
    F: Fn(&Point, f64) -> Result<f64> + Sync,
{
    let geometry = element_geometries(mesh)?;
    Assembler::new(mesh).source_load(mesh, &geometry, source)
}
