use std::fmt;
use std::sync::Arc;

use super::{
    material_derivative, surface_divergence_of_velocity, surface_laplacian, AmbientField,
    LevelSet, Point,
};
use crate::error::Result;

/// An exact pair `(u, w)` for the ε-scaled system
///
/// ```text
/// ∂•u - Δ_Γ w = -u ∇_Γ·v + b
/// w + ε Δ_Γ u = ε⁻¹ g(u)
/// ```
///
/// where `w` follows from `u` through the second equation and the source
/// `b` is whatever makes the first equation hold.
#[derive(Clone)]
pub struct ManufacturedSolution {
    surface: Arc<dyn LevelSet>,
    u: Arc<dyn AmbientField>,
    epsilon: f64,
    g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for ManufacturedSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedSolution")
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl ManufacturedSolution {
    pub fn new(
        surface: Arc<dyn LevelSet>,
        u: Arc<dyn AmbientField>,
        epsilon: f64,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ManufacturedSolution {
            surface,
            u,
            epsilon,
            g: Arc::new(g),
        }
    }

    pub fn surface(&self) -> &Arc<dyn LevelSet> {
        &self.surface
    }

    pub fn u(&self) -> &Arc<dyn AmbientField> {
        &self.u
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The chemical potential `w = ε⁻¹ g(u) - ε Δ_Γ u` as an ambient field.
    pub fn chemical_potential(&self) -> ChemicalPotential {
        ChemicalPotential {
            solution: self.clone(),
            step: 1e-4 * self.surface.diameter(0.0),
        }
    }

    /// `b = ∂•u - Δ_Γ w + u ∇_Γ·v`.
    pub fn source(&self, x: &Point, t: f64) -> Result<f64> {
        let surface = self.surface.as_ref();
        let w = self.chemical_potential();
        let md = material_derivative(self.u.as_ref(), surface, x, t)?;
        let lap_w = surface_laplacian(&w, surface, x, t)?;
        let div_v = surface_divergence_of_velocity(surface, x, t)?;
        Ok(md - lap_w + self.u.value(x, t) * div_v)
    }
}

/// Extension of `w` off the surface: at each point the Laplace–Beltrami
/// operator of the level surface through that point is used. Non-finite
/// when the level-set gradient degenerates.
#[derive(Clone, Debug)]
pub struct ChemicalPotential {
    solution: ManufacturedSolution,
    step: f64,
}

impl AmbientField for ChemicalPotential {
    fn value(&self, x: &Point, t: f64) -> f64 {
        let s = &self.solution;
        match surface_laplacian(s.u.as_ref(), s.surface.as_ref(), x, t) {
            Ok(lap) => (s.g)(s.u.value(x, t)) / s.epsilon - s.epsilon * lap,
            Err(_) => f64::NAN,
        }
    }

    fn fd_step(&self) -> f64 {
        self.step
    }
}
