//! Error norms against exact solutions, convergence orders, the
//! Ginzburg–Landau energy and the discrete mass.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::Snapshot;
use crate::chsystem::{Potential, StatePair};
use crate::error::{Error, Result};
use crate::geometry::{project_to_surface, surface_gradient, AmbientField, LevelSet};
use crate::linsolve::SparseMatrix;

/// Errors of one time level. `h1` entries are full `H¹` norms, the square
/// root of the squared `L²` error plus the squared gradient error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub t: f64,
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_w: f64,
    pub h1_w: f64,
}

impl ErrorRecord {
    /// `‖u - u_h‖ + ‖w - w_h‖` in `L²`.
    pub fn l2_sum(&self) -> f64 {
        self.l2_u + self.l2_w
    }

    pub fn h1_sum(&self) -> f64 {
        self.h1_u + self.h1_w
    }

    /// Entrywise maximum, for `L∞`-in-time norms.
    pub fn max(&self, other: &ErrorRecord) -> ErrorRecord {
        ErrorRecord {
            t: if other.l2_sum() > self.l2_sum() { other.t } else { self.t },
            l2_u: self.l2_u.max(other.l2_u),
            h1_u: self.h1_u.max(other.h1_u),
            l2_w: self.l2_w.max(other.l2_w),
            h1_w: self.h1_w.max(other.h1_w),
        }
    }
}

/// `(‖e‖²_{L²}, ‖∇e‖²_{L²})` for the P1 function `nodal` against `exact`,
/// with the exact field and its surface gradient evaluated at quadrature
/// points projected onto the exact surface.
pub fn field_error(
    snapshot: &Snapshot,
    surface: &dyn LevelSet,
    exact: &dyn AmbientField,
    nodal: &[f64],
) -> Result<(f64, f64)> {
    if nodal.len() != snapshot.node_count() {
        return Err(Error::InvalidArgument("nodal vector length mismatch".into()));
    }
    let t = snapshot.time();
    let rule = snapshot.assembler.rule();
    let parts = snapshot
        .mesh
        .elements
        .par_iter()
        .zip(snapshot.geometry.par_iter())
        .map(|(el, g)| {
            let vals = [nodal[el[0]], nodal[el[1]], nodal[el[2]]];
            let grad_h = g.gradient_of(vals);
            let mut l2 = 0.0;
            let mut h1 = 0.0;
            for (bary, w) in rule.points.iter().zip(&rule.weights) {
                let y = project_to_surface(surface, &g.point(bary), t)?;
                let uh = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
                let jw = w * 2.0 * g.area;
                l2 += jw * (exact.value(&y, t) - uh).powi(2);
                h1 += jw * (surface_gradient(exact, surface, &y, t)? - grad_h).norm_squared();
            }
            Ok((l2, h1))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (l2, h1) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if !(l2.is_finite() && h1.is_finite()) {
        return Err(Error::BlowUp {
            time: t,
            what: "error norm".into(),
        });
    }
    Ok((l2, h1))
}

pub fn error_norms(
    snapshot: &Snapshot,
    surface: &dyn LevelSet,
    state: &StatePair,
    exact_u: Option<&dyn AmbientField>,
    exact_w: Option<&dyn AmbientField>,
) -> Result<ErrorRecord> {
    let (exact_u, exact_w) = match (exact_u, exact_w) {
        (Some(u), Some(w)) => (u, w),
        _ => return Err(Error::config("error norms need exact u and w")),
    };
    let (lu, gu) = field_error(snapshot, surface, exact_u, &state.u)?;
    let (lw, gw) = field_error(snapshot, surface, exact_w, &state.w)?;
    Ok(ErrorRecord {
        t: state.t,
        l2_u: lu.sqrt(),
        h1_u: (lu + gu).sqrt(),
        l2_w: lw.sqrt(),
        h1_w: (lw + gw).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyConvention {
    /// `∫ ε/2 |∇u|² + ε⁻¹ F(u)`.
    Scaled,
    /// `∫ ½ |∇u|² + F(u)`.
    Unscaled,
}

/// Ginzburg–Landau energy of the P1 function `u`.
pub fn gl_energy(
    snapshot: &Snapshot,
    u: &[f64],
    epsilon: f64,
    potential: Potential,
    convention: EnergyConvention,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (a, b) = match convention {
        EnergyConvention::Scaled => (epsilon, 1.0 / epsilon),
        EnergyConvention::Unscaled => (1.0, 1.0),
    };
    let gradient = 0.5 * snapshot.stiffness.bilinear(u, u);
    let potential: f64 = snapshot.nonlinear_load(u, |v, _| potential.value(v))?.iter().sum();
    let e = a * gradient + b * potential;
    if !e.is_finite() {
        return Err(Error::BlowUp {
            time: snapshot.time(),
            what: "energy".into(),
        });
    }
    Ok(e)
}

/// `𝟙ᵀ M u`.
pub fn total_mass(mass: &SparseMatrix, u: &[f64]) -> f64 {
    mass.mul_vec(u).iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EocRow {
    /// Mesh width or step size.
    pub step: f64,
    pub error: f64,
    /// Undefined for the first row and next to zero errors.
    pub eoc: Option<f64>,
    pub saturated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EocTable {
    pub rows: Vec<EocRow>,
}

impl EocTable {
    pub fn orders(&self) -> Vec<Option<f64>> {
        self.rows.iter().skip(1).map(|r| r.eoc).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["h", "error", "eoc"]).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            let eoc = r.eoc.map_or_else(String::new, |v| v.to_string());
            w.write_record([r.step.to_string(), r.error.to_string(), eoc])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Orders `log(e_{i-1}/e_i) / log(h_{i-1}/h_i)`, which is `log₂` of the
/// error ratio for halved steps.
pub fn eoc(errors: &[f64], steps: &[f64]) -> Result<EocTable> {
    if errors.len() != steps.len() || errors.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two errors and as many steps".into(),
        ));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidArgument("errors must be finite and non-negative".into()));
    }
    if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let decreasing = steps.windows(2).all(|p| p[1] < p[0]);
    let increasing = steps.windows(2).all(|p| p[1] > p[0]);
    if !(decreasing || increasing) {
        return Err(Error::InvalidArgument("steps must be strictly monotone".into()));
    }
    let rows = (0..errors.len())
        .map(|i| {
            let saturated = errors[i] == 0.0;
            let eoc = if i == 0 || saturated || errors[i - 1] == 0.0 {
                None
            } else {
                Some((errors[i - 1] / errors[i]).ln() / (steps[i - 1] / steps[i]).ln())
            };
            EocRow {
                step: steps[i],
                error: errors[i],
                eoc,
                saturated,
            }
        })
        .collect();
    Ok(EocTable { rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Writes error records with the header `t,l2_u,h1_u,l2_w,h1_w`.
pub fn write_errors_csv(path: &Path, records: &[ErrorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `t,energy,mass` rows.
pub fn write_trace_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("t,energy,mass\n");
    for (t, e, m) in rows {
        body.push_str(&format!("{t},{e},{m}\n"));
    }
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}
