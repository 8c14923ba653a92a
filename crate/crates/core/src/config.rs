//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `surface`, `problem`,
//! `discretization` and `output`. Unknown keys are rejected. After parsing,
//! [`ExperimentConfig::validate`] reports every problem at once.
//!
//! ```toml
//! [surface]
//! kind = "ellipsoid"        # sphere | ellipsoid | expanding_sphere
//! radius = 1.0
//! amplitude = 0.25          # a(t) = 1 + amplitude·sin(2πt/period)
//! period = 1.0
//!
//! [problem]
//! epsilon = 0.5
//!
//! [problem.exact]           # or [problem.initial]
//! kind = "decaying_product"
//! rate = 6.0
//!
//! [discretization]
//! levels = [3]
//! order = 2
//! tau = [0.025]
//! final_time = 1.0
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bdf::{IntegratorOptions, StartingMode, MAX_ORDER};
use crate::chsystem::{InitialMode, Potential, ProblemSpec, SourceLoad, ThetaMode};
use crate::diagnostics::EnergyConvention;
use crate::error::{Error, Result};
use crate::geometry::{
    AmbientField, EvolvingEllipsoid, ExpandingSphere, FnField, LevelSet, ManufacturedSolution, Sphere,
};
use crate::mesh::MAX_ICOSPHERE_LEVEL;

/// Version of the JSON summaries written by the drivers.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub surface: SurfaceConfig,
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    Sphere {
        radius: f64,
    },
    /// `x₁²/a(t) + x₂² + x₃² = R²`, `a(t) = 1 + amplitude·sin(2πt/period)`.
    Ellipsoid {
        radius: f64,
        amplitude: f64,
        period: f64,
    },
    /// Radius `R·e^{rate·t}`.
    ExpandingSphere {
        radius: f64,
        rate: f64,
    },
}

impl SurfaceConfig {
    pub fn radius(&self) -> f64 {
        match *self {
            SurfaceConfig::Sphere { radius }
            | SurfaceConfig::Ellipsoid { radius, .. }
            | SurfaceConfig::ExpandingSphere { radius, .. } => radius,
        }
    }

    pub fn build(&self) -> Arc<dyn LevelSet> {
        match *self {
            SurfaceConfig::Sphere { radius } => Arc::new(Sphere::new(radius)),
            SurfaceConfig::Ellipsoid {
                radius,
                amplitude,
                period,
            } => Arc::new(EvolvingEllipsoid::new(
                radius,
                amplitude,
                2.0 * std::f64::consts::PI / period,
            )),
            SurfaceConfig::ExpandingSphere { radius, rate } => Arc::new(ExpandingSphere::new(radius, rate)),
        }
    }

    fn check(&self, errors: &mut Vec<String>) {
        let radius = self.radius();
        if !(radius > 0.0 && radius.is_finite()) {
            errors.push(format!("surface.radius must be positive, got {radius}"));
        }
        match *self {
            SurfaceConfig::Ellipsoid { amplitude, period, .. } => {
                if !(amplitude.abs() < 1.0) {
                    errors.push(format!("surface.amplitude must lie in (-1, 1), got {amplitude}"));
                }
                if !(period > 0.0 && period.is_finite()) {
                    errors.push(format!("surface.period must be positive, got {period}"));
                }
            }
            SurfaceConfig::ExpandingSphere { rate, .. } if !rate.is_finite() => {
                errors.push(format!("surface.rate must be finite, got {rate}"));
            }
            _ => {}
        }
    }
}

/// Closed-form ambient fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    /// `e^{-rate·t} x₁x₂`.
    DecayingProduct { rate: f64 },
    /// `amplitude · cos(k x₁) cos(k x₂) cos(k x₃)`.
    CosineProduct { amplitude: f64, wavenumber: f64 },
    /// `scale · (x₁ + x₁²x₂²x₃)`.
    MixedPolynomial { scale: f64 },
    Constant { value: f64 },
}

impl FieldConfig {
    pub fn build(&self) -> Arc<dyn AmbientField> {
        Arc::new(match *self {
            FieldConfig::DecayingProduct { rate } => FnField::decaying_product(rate),
            FieldConfig::CosineProduct { amplitude, wavenumber } => FnField::cosine_product(amplitude, wavenumber),
            FieldConfig::MixedPolynomial { scale } => FnField::mixed_polynomial(scale),
            FieldConfig::Constant { value } => FnField::constant(value),
        })
    }

    fn check(&self, key: &str, errors: &mut Vec<String>) {
        let values: Vec<(&str, f64)> = match *self {
            FieldConfig::DecayingProduct { rate } => vec![("rate", rate)],
            FieldConfig::CosineProduct { amplitude, wavenumber } => {
                vec![("amplitude", amplitude), ("wavenumber", wavenumber)]
            }
            FieldConfig::MixedPolynomial { scale } => vec![("scale", scale)],
            FieldConfig::Constant { value } => vec![("value", value)],
        };
        for (name, v) in values {
            if !v.is_finite() {
                errors.push(format!("{key}.{name} must be finite, got {v}"));
            }
        }
    }
}

/// The gradient-dependent nonlinearity `f(u, ∇u)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    #[default]
    None,
    /// `f = coefficient · u`.
    Linear { coefficient: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaChoice {
    /// With ϑ when an exact solution is configured.
    #[default]
    Auto,
    WithTheta,
    WithoutTheta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub epsilon: f64,
    #[serde(default = "default_potential")]
    pub potential: Potential,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    /// Manufactured solution; the source `b` is derived from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<FieldConfig>,
    /// Initial datum of a run without exact solution (`b = 0`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<FieldConfig>,
    #[serde(default)]
    pub theta: ThetaChoice,
    #[serde(default = "default_initial_mode")]
    pub initial_mode: InitialMode,
    #[serde(default = "default_source_load")]
    pub source_load: SourceLoad,
    #[serde(default = "default_energy")]
    pub energy: EnergyConvention,
}

fn default_potential() -> Potential {
    Potential::DoubleWell
}
fn default_initial_mode() -> InitialMode {
    InitialMode::Interpolation
}
fn default_source_load() -> SourceLoad {
    SourceLoad::Interpolated
}
fn default_energy() -> EnergyConvention {
    EnergyConvention::Scaled
}
fn default_starting() -> StartingMode {
    StartingMode::Auto
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Every (level, τ) pair.
    #[default]
    Cross,
    /// All levels at the smallest τ plus all τ on the finest level.
    Axes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// Icosphere refinement levels, strictly increasing.
    pub levels: Vec<u32>,
    pub order: usize,
    /// Step sizes, strictly decreasing.
    pub tau: Vec<f64>,
    pub final_time: f64,
    /// Largest RK4 step of the node motion; one RK4 step per time step if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_step: Option<f64>,
    #[serde(default = "default_starting")]
    pub starting: StartingMode,
    #[serde(default)]
    pub sweep: SweepKind,
    /// Errors only at multiples of this time (plus the last level); every
    /// level if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_interval: Option<f64>,
}

impl DiscretizationConfig {
    pub fn integrator_options(&self) -> IntegratorOptions {
        IntegratorOptions {
            node_step: self.node_step,
            starting: self.starting,
        }
    }

    /// Number of steps to reach the final time with step `tau`.
    pub fn steps(&self, tau: f64) -> usize {
        (self.final_time / tau).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default = "default_errors")]
    pub errors_csv: String,
    #[serde(default = "default_trace")]
    pub trace_csv: String,
    /// Write a VTK frame every `vtk_every` levels; 0 disables the cadence.
    #[serde(default)]
    pub vtk_every: usize,
    /// Additional VTK frames at these times.
    #[serde(default)]
    pub vtk_times: Vec<f64>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("output")
}
fn default_summary() -> String {
    "summary.json".into()
}
fn default_errors() -> String {
    "errors.csv".into()
}
fn default_trace() -> String {
    "trace.csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_directory(),
            summary: default_summary(),
            errors_csv: default_errors(),
            trace_csv: default_trace(),
            vtk_every: 0,
            vtk_times: Vec::new(),
        }
    }
}

/// `true` when `x/step` is an integer up to rounding.
fn is_multiple(x: f64, step: f64) -> bool {
    let q = x / step;
    (q - q.round()).abs() <= 1e-9 * q.abs().max(1.0)
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical form: every key spelled out, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    /// All validation failures, or `Ok` if there are none.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.surface.check(&mut errors);

        let p = &self.problem;
        if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            errors.push(format!("problem.epsilon must be positive, got {}", p.epsilon));
        }
        match (&p.exact, &p.initial) {
            (Some(_), Some(_)) => errors.push("problem.exact and problem.initial are mutually exclusive".into()),
            (None, None) => errors.push("one of problem.exact or problem.initial is required".into()),
            _ => {}
        }
        if let Some(f) = &p.exact {
            f.check("problem.exact", &mut errors);
            if p.nonlinearity != NonlinearityConfig::None {
                errors.push("manufactured solutions require problem.nonlinearity = none".into());
            }
        }
        if let Some(f) = &p.initial {
            f.check("problem.initial", &mut errors);
        }
        if let NonlinearityConfig::Linear { coefficient } = p.nonlinearity {
            if !coefficient.is_finite() {
                errors.push(format!("problem.nonlinearity.coefficient must be finite, got {coefficient}"));
            }
        }

        let d = &self.discretization;
        if d.levels.is_empty() {
            errors.push("discretization.levels is empty".into());
        }
        if let Some(&l) = d.levels.iter().find(|&&l| l > MAX_ICOSPHERE_LEVEL) {
            errors.push(format!("mesh level {l} exceeds the maximum {MAX_ICOSPHERE_LEVEL}"));
        }
        if d.levels.windows(2).any(|w| w[1] <= w[0]) {
            errors.push("discretization.levels must be strictly increasing".into());
        }
        if !(1..=MAX_ORDER).contains(&d.order) {
            errors.push(format!("discretization.order must be in 1..={MAX_ORDER}, got {}", d.order));
        }
        if !(d.final_time >= 0.0 && d.final_time.is_finite()) {
            errors.push(format!("discretization.final_time must be non-negative, got {}", d.final_time));
        }
        if d.tau.is_empty() {
            errors.push("discretization.tau is empty".into());
        }
        for &tau in &d.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                errors.push(format!("step size {tau} is not positive"));
            } else if d.final_time.is_finite() && !is_multiple(d.final_time, tau) {
                errors.push(format!("final time {} is not a multiple of τ = {tau}", d.final_time));
            } else if let Some(dt) = d.error_interval.filter(|&dt| dt > 0.0) {
                if !is_multiple(dt, tau) {
                    errors.push(format!("error interval {dt} is not a multiple of τ = {tau}"));
                }
            }
        }
        if d.tau.windows(2).any(|w| w[1] >= w[0]) {
            errors.push("discretization.tau must be strictly decreasing".into());
        }
        if let Some(h) = d.node_step {
            if !(h > 0.0 && h.is_finite()) {
                errors.push(format!("discretization.node_step must be positive, got {h}"));
            }
        }
        if let Some(dt) = d.error_interval {
            if !(dt > 0.0 && dt.is_finite()) {
                errors.push(format!("discretization.error_interval must be positive, got {dt}"));
            }
        }
        if d.starting == StartingMode::Exact && p.exact.is_none() {
            errors.push("starting = exact needs problem.exact".into());
        }

        let o = &self.output;
        for (key, name) in [("summary", &o.summary), ("errors_csv", &o.errors_csv), ("trace_csv", &o.trace_csv)] {
            if name.is_empty() {
                errors.push(format!("output.{key} is empty"));
            }
        }
        if let Some(t) = o.vtk_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            errors.push(format!("output.vtk_times entry {t} is not a non-negative time"));
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The problem, with the ϑ choice overridden by `theta` when given.
    pub fn problem(&self, theta: Option<ThetaMode>) -> Result<ProblemSpec> {
        let p = &self.problem;
        let surface = self.surface.build();
        let g = {
            let potential = p.potential;
            move |u: f64| potential.derivative(u)
        };
        let mut spec = match (&p.exact, &p.initial) {
            (Some(field), None) => {
                let solution = ManufacturedSolution::new(Arc::clone(&surface), field.build(), p.epsilon, g);
                ProblemSpec::manufactured(&solution)?
            }
            (None, Some(field)) => {
                let u0 = field.build();
                let mut spec = ProblemSpec::new(Arc::clone(&surface), p.epsilon)?.with_initial(Arc::clone(&u0));
                let mode = theta.or(match p.theta {
                    ThetaChoice::WithTheta => Some(ThetaMode::WithTheta),
                    _ => None,
                });
                if mode == Some(ThetaMode::WithTheta) {
                    // w(·, 0) from the second equation applied to u⁰
                    let solution = ManufacturedSolution::new(Arc::clone(&surface), u0, p.epsilon, g);
                    spec = spec.with_exact_w(Arc::new(solution.chemical_potential()));
                }
                spec
            }
            _ => return Err(Error::config("exactly one of problem.exact or problem.initial is required")),
        };
        spec = spec
            .with_potential(p.potential)
            .with_initial_mode(p.initial_mode)
            .with_source_load(p.source_load);
        if let NonlinearityConfig::Linear { coefficient } = p.nonlinearity {
            spec = spec.with_f(move |u, _| coefficient * u);
        }
        let mode = theta.or(match p.theta {
            ThetaChoice::Auto => None,
            ThetaChoice::WithTheta => Some(ThetaMode::WithTheta),
            ThetaChoice::WithoutTheta => Some(ThetaMode::WithoutTheta),
        });
        if let Some(mode) = mode {
            spec = spec.with_theta_mode(mode);
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[surface]
kind = "ellipsoid"
radius = 1.0
amplitude = 0.25
period = 1.0

[problem]
epsilon = 0.5

[problem.exact]
kind = "decaying_product"
rate = 6.0

[discretization]
levels = [2]
order = 2
tau = [0.05]
final_time = 0.2
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.problem.potential, Potential::DoubleWell);
        assert_eq!(c.problem.theta, ThetaChoice::Auto);
        assert_eq!(c.discretization.sweep, SweepKind::Cross);
        assert_eq!(c.output.summary, "summary.json");
        assert_eq!(c.discretization.steps(0.05), 4);
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let canonical = c.to_toml();
        let again = ExperimentConfig::from_toml(&canonical).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml(), canonical);
        assert_eq!(again.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let b = ExperimentConfig::from_toml(&MINIMAL.replace("epsilon = 0.5", "epsilon = 0.25")).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            MINIMAL.replace("epsilon = 0.5", "epsilon = 0.5\nepsilom = 1.0"),
            MINIMAL.replace("rate = 6.0", "rate = 6.0\nspeed = 1.0"),
            MINIMAL.replace("period = 1.0", "period = 1.0\nfrequency = 1.0"),
            format!("{MINIMAL}\n[outputs]\ndirectory = \"x\"\n"),
        ] {
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let text = MINIMAL
            .replace("epsilon = 0.5", "epsilon = -1.0")
            .replace("levels = [2]", "levels = [3, 3]")
            .replace("order = 2", "order = 6")
            .replace("tau = [0.05]", "tau = [0.03]");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            Error::Config(list) => {
                assert_eq!(list.len(), 4, "{list:?}");
                assert!(list.iter().any(|m| m.contains("epsilon")));
                assert!(list.iter().any(|m| m.contains("strictly increasing")));
                assert!(list.iter().any(|m| m.contains("order")));
                assert!(list.iter().any(|m| m.contains("multiple")));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn exact_and_initial_are_exclusive() {
        let both = format!("{MINIMAL}\n[problem.initial]\nkind = \"constant\"\nvalue = 0.1\n");
        assert!(ExperimentConfig::from_toml(&both).is_err());
        let neither = MINIMAL.replace("[problem.exact]\nkind = \"decaying_product\"\nrate = 6.0\n", "");
        assert!(ExperimentConfig::from_toml(&neither).is_err());
    }

    #[test]
    fn out_of_range_level_and_amplitude() {
        let text = MINIMAL
            .replace("levels = [2]", "levels = [40]")
            .replace("amplitude = 0.25", "amplitude = 1.5");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            Error::Config(list) => assert_eq!(list.len(), 2, "{list:?}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zero_final_time_is_valid() {
        let c = ExperimentConfig::from_toml(&MINIMAL.replace("final_time = 0.2", "final_time = 0.0")).unwrap();
        assert_eq!(c.discretization.steps(0.05), 0);
    }

    #[test]
    fn problem_from_exact_field_has_theta_and_source() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let p = c.problem(None).unwrap();
        assert!(p.exact_u.is_some() && p.exact_w.is_some() && p.source.is_some());
        assert_eq!(p.theta_mode(), ThetaMode::WithTheta);
        let p = c.problem(Some(ThetaMode::WithoutTheta)).unwrap();
        assert_eq!(p.theta_mode(), ThetaMode::WithoutTheta);
    }

    #[test]
    fn problem_from_initial_field() {
        let text = MINIMAL.replace(
            "[problem.exact]\nkind = \"decaying_product\"\nrate = 6.0",
            "[problem.initial]\nkind = \"mixed_polynomial\"\nscale = 0.5",
        );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let p = c.problem(None).unwrap();
        assert!(p.exact_u.is_none() && p.source.is_none() && p.initial_u.is_some());
        assert_eq!(p.theta_mode(), ThetaMode::WithoutTheta);
        let p = c.problem(Some(ThetaMode::WithTheta)).unwrap();
        assert!(p.exact_w.is_some());
        assert_eq!(p.theta_mode(), ThetaMode::WithTheta);
    }
}
