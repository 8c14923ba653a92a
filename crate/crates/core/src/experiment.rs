//! Drivers behind the command line: single runs, convergence sweeps,
//! energy traces, the ϑ comparison and mesh statistics. Each returns a
//! [`Report`] and writes its files below the configured output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::bdf::{Integrator, LevelKind, StartingMode};
use crate::chsystem::{ritz_map, InitialData, InitialMode, StatePair, ThetaMode};
use crate::config::{ExperimentConfig, SweepKind, SCHEMA_VERSION};
use crate::diagnostics::{
    eoc, error_norms, gl_energy, write_errors_csv, write_trace_csv, EnergyConvention, EocTable, ErrorRecord,
};
use crate::error::{Error, Result};
use crate::linsolve::BlockMethod;
use crate::mesh::{icosphere, MeshQualityReport};
use crate::vtk;

/// Commit the binary was built from.
pub const COMMIT: &str = env!("CHSURF_COMMIT");

/// One simulation: mesh level, step size and the per-run overrides.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub level: u32,
    pub tau: f64,
    pub label: String,
    pub theta: Option<ThetaMode>,
    pub initial_mode: Option<InitialMode>,
    /// Measure errors when the problem has an exact solution.
    pub errors: bool,
    pub vtk: Option<VtkPlan>,
}

impl RunPlan {
    pub fn new(level: u32, tau: f64) -> Self {
        RunPlan {
            level,
            tau,
            label: format!("level{level}_tau{tau}"),
            theta: None,
            initial_mode: None,
            errors: true,
            vtk: None,
        }
    }
}

/// Frames `{prefix}_{index:06}.vtk` every `every` levels and at `times`.
#[derive(Clone, Debug)]
pub struct VtkPlan {
    pub directory: PathBuf,
    pub prefix: String,
    pub every: usize,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub steps: usize,
    pub ldlt: usize,
    pub lu: usize,
    pub gmres: usize,
    /// Largest normwise backward errors over all accepted steps.
    pub max_residual_u: f64,
    pub max_residual_w: f64,
}

impl SolverStats {
    pub fn max_residual(&self) -> f64 {
        self.max_residual_u.max(self.max_residual_w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassReport {
    pub initial: f64,
    pub last: f64,
    /// `max_n |m_n - m_0| / 𝟙ᵀM|u⁰|` with `m_n = 𝟙ᵀM(tₙ)uⁿ`.
    pub max_relative_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub convention: EnergyConvention,
    pub initial: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSummary {
    /// `L∞`-in-time norms over the sampled levels.
    pub max: ErrorRecord,
    pub last: ErrorRecord,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub level: u32,
    pub nodes: usize,
    pub elements: usize,
    /// Largest edge of the initial mesh.
    pub h: f64,
    pub order: usize,
    pub tau: f64,
    pub final_time: f64,
    pub steps: usize,
    pub starting: StartingMode,
    pub theta_mode: ThetaMode,
    pub initial_mode: InitialMode,
    pub theta_norm: f64,
    /// `‖w⁰ - Ritz(w(·,0))‖_M / ‖Ritz(w(·,0))‖_M`, with ϑ only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_identity: Option<f64>,
    pub solver: SolverStats,
    pub mass: MassReport,
    pub energy: EnergyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorSummary>,
    pub wall_clock_seconds: f64,
    pub vtk_files: Vec<String>,
}

/// A finished run with its time series.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub errors: Vec<ErrorRecord>,
    /// `(t, energy, mass)` at every level.
    pub trace: Vec<(f64, f64, f64)>,
    pub initial: InitialData,
    pub last: StatePair,
}

/// Runs one simulation to the configured final time.
pub fn simulate(config: &ExperimentConfig, plan: &RunPlan) -> Result<RunOutput> {
    let clock = Instant::now();
    let d = &config.discretization;
    let mut problem = config.problem(plan.theta)?;
    if let Some(mode) = plan.initial_mode {
        problem = problem.with_initial_mode(mode);
    }
    let surface = problem.surface.clone();
    let mesh0 = icosphere(plan.level, config.surface.radius(), surface.as_ref(), 0.0)?;
    let quality = mesh0.quality();
    let (nodes, elements) = (mesh0.node_count(), mesh0.element_count());
    let mut integrator = Integrator::new(problem.clone(), mesh0, d.order, plan.tau, d.integrator_options())?;

    let theta_identity = match (problem.theta_mode(), &problem.exact_w) {
        (ThetaMode::WithTheta, Some(w)) => {
            let snap = integrator.snapshot();
            let ritz = ritz_map(snap, surface.as_ref(), w.as_ref())?;
            let diff: Vec<f64> = integrator.state().w.iter().zip(&ritz).map(|(a, b)| a - b).collect();
            let num = snap.mass.bilinear(&diff, &diff).max(0.0).sqrt();
            let den = snap.mass.bilinear(&ritz, &ritz).max(0.0).sqrt();
            Some(if den > 0.0 { num / den } else { num })
        }
        _ => None,
    };

    let steps = d.steps(plan.tau);
    let measure = plan.errors && problem.exact_u.is_some() && problem.exact_w.is_some();
    let error_stride = d.error_interval.map_or(1, |dt| ((dt / plan.tau).round() as usize).max(1));
    let convention = config.problem.energy;
    let abs_mass: f64 = {
        let snap = integrator.snapshot();
        let abs_u: Vec<f64> = integrator.state().u.iter().map(|v| v.abs()).collect();
        snap.mass.mul_vec(&abs_u).iter().sum()
    };
    let mass_scale = if abs_mass > 0.0 { abs_mass } else { 1.0 };

    let mut errors = Vec::new();
    let mut trace = Vec::with_capacity(steps + 1);
    let mut stats = SolverStats::default();
    let mut vtk_files = Vec::new();
    let mut drift: f64 = 0.0;
    let mass0 = integrator.report().mass;

    for n in 0..=steps {
        if n > 0 {
            let report = integrator.advance()?;
            if report.kind == LevelKind::Bdf {
                stats.steps += 1;
                stats.max_residual_u = stats.max_residual_u.max(report.residual_u);
                stats.max_residual_w = stats.max_residual_w.max(report.residual_w);
                match report.method {
                    Some(BlockMethod::SparseLdlt) => stats.ldlt += 1,
                    Some(BlockMethod::SparseLu) => stats.lu += 1,
                    Some(BlockMethod::Gmres) => stats.gmres += 1,
                    None => {}
                }
            }
        }
        let snap = integrator.snapshot();
        let state = integrator.state();
        let mass = integrator.report().mass;
        drift = drift.max((mass - mass0).abs() / mass_scale);
        let energy = gl_energy(snap, &state.u, problem.epsilon, problem.potential, convention)?;
        trace.push((state.t, energy, mass));
        if measure && (n % error_stride == 0 || n == steps) {
            errors.push(error_norms(
                snap,
                surface.as_ref(),
                state,
                problem.exact_u.as_deref(),
                problem.exact_w.as_deref(),
            )?);
        }
        if let Some(v) = &plan.vtk {
            let at_time = v
                .times
                .iter()
                .any(|&t| ((t / plan.tau) - n as f64).abs() < 1e-6);
            if (v.every > 0 && n % v.every == 0) || at_time {
                let path = v.directory.join(format!("{}_{n:06}.vtk", v.prefix));
                vtk::write(&path, &snap.mesh, &state.u, &state.w)?;
                vtk_files.push(path.display().to_string());
            }
        }
        if n % 100 == 0 && n > 0 {
            log::debug!("{}: level {n}/{steps}, t = {:.6}", plan.label, state.t);
        }
    }

    let energies = trace.iter().map(|r| r.1);
    let summary = RunSummary {
        label: plan.label.clone(),
        level: plan.level,
        nodes,
        elements,
        h: quality.max_h,
        order: d.order,
        tau: plan.tau,
        final_time: d.final_time,
        steps,
        starting: integrator.starting_mode(),
        theta_mode: problem.theta_mode(),
        initial_mode: problem.initial_mode,
        theta_norm: integrator.theta().norm(),
        theta_identity,
        solver: stats,
        mass: MassReport {
            initial: mass0,
            last: integrator.report().mass,
            max_relative_drift: drift,
        },
        energy: EnergyReport {
            convention,
            initial: trace[0].1,
            last: trace[trace.len() - 1].1,
            min: energies.clone().fold(f64::INFINITY, f64::min),
            max: energies.fold(f64::NEG_INFINITY, f64::max),
        },
        errors: (!errors.is_empty()).then(|| ErrorSummary {
            max: errors.iter().skip(1).fold(errors[0], |a, b| a.max(b)),
            last: errors[errors.len() - 1],
            samples: errors.len(),
        }),
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        vtk_files,
    };
    log::info!(
        "{}: {} steps, max residual {:.2e}, mass drift {:.2e}, {:.1} s",
        summary.label,
        steps,
        summary.solver.max_residual(),
        drift,
        summary.wall_clock_seconds
    );
    Ok(RunOutput {
        summary,
        errors,
        trace,
        initial: integrator.initial().clone(),
        last: integrator.state().clone(),
    })
}

/// Orders of `L∞(L²)` and `L∞(H¹)` errors of `u + w`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTables {
    /// The level (spatial table) or step size (temporal table) held fixed.
    pub fixed: f64,
    pub l2: EocTable,
    pub h1: EocTable,
}

impl ConvergenceTables {
    /// From `(step, L∞ error record)` pairs ordered from coarse to fine.
    pub fn new(fixed: f64, rows: &[(f64, ErrorRecord)]) -> Result<Self> {
        let steps: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let l2: Vec<f64> = rows.iter().map(|r| r.1.l2_sum()).collect();
        let h1: Vec<f64> = rows.iter().map(|r| r.1.h1_sum()).collect();
        Ok(ConvergenceTables {
            fixed,
            l2: eoc(&l2, &steps)?,
            h1: eoc(&h1, &steps)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshInfo {
    pub level: u32,
    pub nodes: usize,
    pub elements: usize,
    pub area: f64,
    pub level_set_residual: f64,
    pub quality: MeshQualityReport,
}

/// The JSON document every command writes.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub commit: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial: Option<ConvergenceTables>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal: Option<ConvergenceTables>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub meshes: Vec<MeshInfo>,
}

impl Report {
    fn new(command: &str, config: &ExperimentConfig) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            commit: COMMIT.into(),
            config_hash: config.hash(),
            config: config.clone(),
            complete: false,
            failure: None,
            runs: Vec::new(),
            spatial: None,
            temporal: None,
            meshes: Vec::new(),
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.runs.iter().map(|r| r.solver.max_residual()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Where a command writes, with the directory created on demand.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub directory: PathBuf,
    /// Overrides `output.vtk_every` when set.
    pub vtk_every: Option<usize>,
}

impl Outputs {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Outputs {
            directory: config.output.directory.clone(),
            vtk_every: None,
        }
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.directory).map_err(|e| Error::io(&self.directory, e))
    }

    fn file(&self, name: &str) -> PathBuf {
        self.directory.join(name)
    }

    fn vtk(&self, config: &ExperimentConfig, prefix: &str) -> Option<VtkPlan> {
        let every = self.vtk_every.unwrap_or(config.output.vtk_every);
        (every > 0 || !config.output.vtk_times.is_empty()).then(|| VtkPlan {
            directory: self.directory.clone(),
            prefix: prefix.into(),
            every,
            times: config.output.vtk_times.clone(),
        })
    }
}

/// `name.ext` → `name_suffix.ext`.
fn suffixed(name: &str, suffix: &str) -> String {
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{suffix}.{ext}"),
        None => format!("{name}_{suffix}"),
    }
}

fn single(config: &ExperimentConfig, command: &str) -> Result<(u32, f64)> {
    let d = &config.discretization;
    match (d.levels.as_slice(), d.tau.as_slice()) {
        ([level], [tau]) => Ok((*level, *tau)),
        _ => Err(Error::config(format!(
            "{command} takes exactly one mesh level and one step size; use converge for sweeps"
        ))),
    }
}

/// Runs the body, recording a failure in the report and writing it either way.
fn finish(mut report: Report, path: &Path, body: impl FnOnce(&mut Report) -> Result<()>) -> Result<Report> {
    let outcome = body(&mut report);
    report.complete = outcome.is_ok();
    if let Err(e) = &outcome {
        report.failure = Some(e.to_string());
    }
    report.write(path)?;
    outcome.map(|_| report)
}

/// A single simulation with error, trace and VTK output.
pub fn cmd_run(config: &ExperimentConfig, outputs: &Outputs) -> Result<Report> {
    let (level, tau) = single(config, "run")?;
    outputs.prepare()?;
    let report = Report::new("run", config);
    finish(report, &outputs.file(&config.output.summary), |report| {
        let mut plan = RunPlan::new(level, tau);
        plan.label = "run".into();
        plan.vtk = outputs.vtk(config, "run");
        let out = simulate(config, &plan)?;
        if !out.errors.is_empty() {
            write_errors_csv(&outputs.file(&config.output.errors_csv), &out.errors)?;
        }
        write_trace_csv(&outputs.file(&config.output.trace_csv), &out.trace)?;
        report.runs.push(out.summary);
        Ok(())
    })
}

/// The (level, τ) pairs of a sweep in execution order.
pub fn sweep_plan(config: &ExperimentConfig) -> Vec<(u32, f64)> {
    let d = &config.discretization;
    match d.sweep {
        SweepKind::Cross => d
            .levels
            .iter()
            .flat_map(|&l| d.tau.iter().map(move |&t| (l, t)))
            .collect(),
        SweepKind::Axes => {
            let finest = *d.levels.last().unwrap();
            let smallest = *d.tau.last().unwrap();
            let mut runs: Vec<(u32, f64)> = d.levels.iter().map(|&l| (l, smallest)).collect();
            runs.extend(d.tau.iter().filter(|&&t| t != smallest).map(|&t| (finest, t)));
            runs
        }
    }
}

/// Sweep over mesh levels and step sizes with spatial and temporal orders.
pub fn cmd_converge(config: &ExperimentConfig, outputs: &Outputs) -> Result<Report> {
    let d = &config.discretization;
    if d.levels.len() < 2 && d.tau.len() < 2 {
        return Err(Error::config("converge needs at least two mesh levels or two step sizes"));
    }
    if config.problem.exact.is_none() {
        return Err(Error::config("converge needs problem.exact"));
    }
    outputs.prepare()?;
    let report = Report::new("converge", config);
    finish(report, &outputs.file(&config.output.summary), |report| {
        let mut results: Vec<((u32, f64), ErrorRecord)> = Vec::new();
        for (level, tau) in sweep_plan(config) {
            let mut plan = RunPlan::new(level, tau);
            plan.label = format!("level{level}_tau{tau}");
            let out = simulate(config, &plan)?;
            write_errors_csv(&outputs.file(&suffixed(&config.output.errors_csv, &plan.label)), &out.errors)?;
            let max = out.summary.errors.as_ref().expect("exact solution present").max;
            results.push(((level, tau), max));
            report.runs.push(out.summary);
        }
        let smallest = *d.tau.last().unwrap();
        let finest = *d.levels.last().unwrap();
        if d.levels.len() >= 2 {
            let rows: Vec<(f64, ErrorRecord)> = d
                .levels
                .iter()
                .map(|&l| {
                    let run = report.runs.iter().find(|r| r.level == l && r.tau == smallest).unwrap();
                    let rec = results.iter().find(|r| r.0 == (l, smallest)).unwrap().1;
                    (run.h, rec)
                })
                .collect();
            let tables = ConvergenceTables::new(smallest, &rows)?;
            tables.l2.write_csv(&outputs.file("eoc_spatial_l2.csv"))?;
            tables.h1.write_csv(&outputs.file("eoc_spatial_h1.csv"))?;
            report.spatial = Some(tables);
        }
        if d.tau.len() >= 2 {
            let rows: Vec<(f64, ErrorRecord)> = d
                .tau
                .iter()
                .map(|&t| (t, results.iter().find(|r| r.0 == (finest, t)).unwrap().1))
                .collect();
            let tables = ConvergenceTables::new(finest as f64, &rows)?;
            tables.l2.write_csv(&outputs.file("eoc_temporal_l2.csv"))?;
            tables.h1.write_csv(&outputs.file("eoc_temporal_h1.csv"))?;
            report.temporal = Some(tables);
        }
        Ok(())
    })
}

/// Energy and mass traces, one CSV per mesh level.
pub fn cmd_energy(config: &ExperimentConfig, outputs: &Outputs) -> Result<Report> {
    let d = &config.discretization;
    let tau = match d.tau.as_slice() {
        [tau] => *tau,
        _ => return Err(Error::config("energy takes exactly one step size")),
    };
    outputs.prepare()?;
    let report = Report::new("energy", config);
    finish(report, &outputs.file(&config.output.summary), |report| {
        for &level in &d.levels {
            let mut plan = RunPlan::new(level, tau);
            plan.label = format!("level{level}");
            plan.vtk = outputs.vtk(config, &plan.label);
            let out = simulate(config, &plan)?;
            let name = if d.levels.len() == 1 {
                config.output.trace_csv.clone()
            } else {
                suffixed(&config.output.trace_csv, &plan.label)
            };
            write_trace_csv(&outputs.file(&name), &out.trace)?;
            report.runs.push(out.summary);
        }
        Ok(())
    })
}

/// Interpolated initial data without ϑ next to Ritz initial data with ϑ.
pub fn cmd_theta(config: &ExperimentConfig, outputs: &Outputs) -> Result<Report> {
    let (level, tau) = single(config, "theta")?;
    outputs.prepare()?;
    let report = Report::new("theta", config);
    finish(report, &outputs.file(&config.output.summary), |report| {
        for (label, theta, initial) in [
            ("without_theta", ThetaMode::WithoutTheta, InitialMode::Interpolation),
            ("with_theta", ThetaMode::WithTheta, InitialMode::Ritz),
        ] {
            let mut plan = RunPlan::new(level, tau);
            plan.label = label.into();
            plan.theta = Some(theta);
            plan.initial_mode = Some(initial);
            plan.vtk = outputs.vtk(config, label);
            let out = simulate(config, &plan)?;
            write_trace_csv(&outputs.file(&suffixed(&config.output.trace_csv, label)), &out.trace)?;
            report.runs.push(out.summary);
        }
        Ok(())
    })
}

/// Size and quality of the initial mesh at every configured level.
pub fn cmd_mesh_info(config: &ExperimentConfig, outputs: &Outputs) -> Result<Report> {
    outputs.prepare()?;
    let report = Report::new("mesh-info", config);
    finish(report, &outputs.file(&config.output.summary), |report| {
        let surface = config.surface.build();
        for &level in &config.discretization.levels {
            let mesh = icosphere(level, config.surface.radius(), surface.as_ref(), 0.0)?;
            report.meshes.push(MeshInfo {
                level,
                nodes: mesh.node_count(),
                elements: mesh.element_count(),
                area: mesh.area(),
                level_set_residual: mesh.max_level_set_residual(surface.as_ref()),
                quality: mesh.quality(),
            });
        }
        Ok(())
    })
}
