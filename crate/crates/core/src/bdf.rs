//! Linearly implicit BDF methods of orders 1 to 5 for the semi-discrete
//! system. At step `n` the method solves
//!
//! ```text
//! δ₀ M u + τ A w   = τ f(ũ) - Σ_{j≥1} δ_j (M u)^{n-j}
//! -ε A u + M w     = ε⁻¹ g(ũ) + ϑ
//! ```
//!
//! with matrices at `t_n` and the extrapolation `ũ = Σ γ_j u^{n-1-j}`.

use std::collections::VecDeque;
use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::assembly::{ensure_finite, Assembler, Snapshot};
use crate::chsystem::{initial_state, interpolate, rhs_vectors, InitialData, ProblemSpec, StatePair, ThetaVector};
use crate::error::{Error, Result};
use crate::linsolve::{BlockMethod, BlockSolution, BlockSolver, BlockSystem};
use crate::mesh::{evolve_mesh, SurfaceMesh};

pub const MAX_ORDER: usize = 5;

/// Relative tolerance on the uniform spacing of history times.
const SPACING_TOLERANCE: f64 = 1e-9;

fn binomial(n: i64, k: i64) -> i64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Coefficients of `δ(ζ) = Σ_{ℓ=1}^s (1-ζ)^ℓ / ℓ` and
/// `γ(ζ) = (1 - (1-ζ)^s) / ζ`, exact and in floating point.
#[derive(Clone, Debug, PartialEq)]
pub struct BdfScheme {
    order: usize,
    delta_exact: Vec<Ratio<i64>>,
    gamma_exact: Vec<Ratio<i64>>,
    delta: Vec<f64>,
    gamma: Vec<f64>,
}

impl BdfScheme {
    pub fn new(order: usize) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::InvalidArgument(format!(
                "BDF order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let s = order as i64;
        let sign = |j: i64| if j % 2 == 0 { 1 } else { -1 };
        let delta_exact: Vec<Ratio<i64>> = (0..=s)
            .map(|j| {
                (j.max(1)..=s)
                    .map(|l| Ratio::new(sign(j) * binomial(l, j), l))
                    .sum()
            })
            .collect();
        let gamma_exact: Vec<Ratio<i64>> = (0..s)
            .map(|j| Ratio::from_integer(sign(j) * binomial(s, j + 1)))
            .collect();
        let to_f64 = |r: &Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
        Ok(BdfScheme {
            order,
            delta: delta_exact.iter().map(to_f64).collect(),
            gamma: gamma_exact.iter().map(to_f64).collect(),
            delta_exact,
            gamma_exact,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `δ₀, …, δ_s`.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// `γ₀, …, γ_{s-1}`.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn delta_rational(&self) -> &[Ratio<i64>] {
        &self.delta_exact
    }

    pub fn gamma_rational(&self) -> &[Ratio<i64>] {
        &self.gamma_exact
    }
}

#[derive(Clone, Debug)]
pub struct HistoryEntry {
    pub t: f64,
    pub u: Vec<f64>,
    /// `M(t) u`.
    pub mu: Vec<f64>,
}

/// The last `s` states, most recent first.
#[derive(Clone, Debug)]
pub struct HistoryRing {
    capacity: usize,
    tau: f64,
    entries: VecDeque<HistoryEntry>,
}

impl HistoryRing {
    pub fn new(capacity: usize, tau: f64) -> Self {
        HistoryRing {
            capacity,
            tau,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Entry `j` steps back from the most recent one.
    pub fn get(&self, j: usize) -> Option<&HistoryEntry> {
        self.entries.get(j)
    }

    pub fn latest(&self) -> Option<&HistoryEntry> {
        self.entries.front()
    }

    /// Times in increasing order.
    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().rev().map(|e| e.t).collect()
    }

    /// Adds a new most recent entry, dropping the oldest when full.
    pub fn push(&mut self, entry: HistoryEntry) -> Result<()> {
        if let Some(last) = self.entries.front() {
            let gap = entry.t - last.t;
            if (gap - self.tau).abs() > SPACING_TOLERANCE * self.tau.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "history spacing {gap} differs from the step size {}",
                    self.tau
                )));
            }
            if entry.u.len() != last.u.len() {
                return Err(Error::InvalidArgument("history vectors change length".into()));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front(entry);
        Ok(())
    }
}

/// `ũ = Σ γ_j u^{n-1-j}`.
pub fn extrapolate(history: &HistoryRing, scheme: &BdfScheme) -> Result<Vec<f64>> {
    let s = scheme.order();
    if history.len() < s {
        return Err(Error::InvalidArgument(format!(
            "order {s} extrapolation needs {s} past states, history has {}",
            history.len()
        )));
    }
    let mut out = vec![0.0; history.latest().map_or(0, |e| e.u.len())];
    for (j, gamma) in scheme.gamma().iter().enumerate() {
        let u = &history.get(j).unwrap().u;
        out.iter_mut().zip(u).for_each(|(o, v)| *o += gamma * v);
    }
    Ok(out)
}

/// Result of one accepted step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: StatePair,
    /// `M(t_n) u^n`.
    pub mass_u: Vec<f64>,
    pub solution: BlockSolution,
}

/// One linearly implicit BDF step onto the time level of `snapshot`.
pub fn step(
    snapshot: &Snapshot,
    scheme: &BdfScheme,
    history: &HistoryRing,
    problem: &ProblemSpec,
    theta: &ThetaVector,
    tau: f64,
    solver: &mut BlockSolver,
) -> Result<StepOutput> {
    let s = scheme.order();
    let t = snapshot.time();
    let latest = history
        .latest()
        .ok_or_else(|| Error::InvalidArgument("empty history".into()))?;
    if (t - latest.t - tau).abs() > SPACING_TOLERANCE * tau.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "snapshot time {t} is not one step after {}",
            latest.t
        )));
    }
    let u_tilde = extrapolate(history, scheme)?;
    ensure_finite(&u_tilde, t, "extrapolated u")?;
    let (f, g) = rhs_vectors(snapshot, problem, &u_tilde)?;
    let mut rhs_u: Vec<f64> = f.iter().map(|v| tau * v).collect();
    for j in 1..=s {
        let delta = scheme.delta()[j];
        let mu = &history.get(j - 1).unwrap().mu;
        rhs_u.iter_mut().zip(mu).for_each(|(r, m)| *r -= delta * m);
    }
    let rhs_w: Vec<f64> = g.iter().zip(theta.as_slice()).map(|(a, b)| a + b).collect();
    let system = BlockSystem::new(
        scheme.delta()[0],
        tau,
        problem.epsilon,
        &snapshot.mass,
        &snapshot.stiffness,
    )?;
    let solution = solver.solve(&system, &rhs_u, &rhs_w)?;
    let state = StatePair::new(solution.u.clone(), solution.w.clone(), t)?;
    let mass_u = snapshot.mass.mul_vec(&state.u);
    Ok(StepOutput {
        state,
        mass_u,
        solution,
    })
}

/// Source of the states at `t₁, …, t_{s-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartingMode {
    /// Exact values when an exact solution exists, cascade otherwise.
    Auto,
    /// Nodal interpolants of the exact solution.
    Exact,
    /// Step `i` taken with the order-`i` method.
    Cascade,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    Initial,
    ExactStart,
    Bdf,
}

/// Bookkeeping for one time level.
#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub index: usize,
    pub t: f64,
    pub kind: LevelKind,
    /// Order of the method that produced the level, zero if none did.
    pub order: usize,
    pub residual_u: f64,
    pub residual_w: f64,
    pub method: Option<BlockMethod>,
    pub mass: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    /// Largest RK4 step for the node trajectories; `None` takes one RK4
    /// step per time step. Sweeps over τ should pin it to the smallest τ so
    /// every run sees the same discrete surface.
    pub node_step: Option<f64>,
    pub starting: StartingMode,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            node_step: None,
            starting: StartingMode::Auto,
        }
    }
}

/// Full evolution: mesh motion, assembly, starting values and BDF steps.
pub struct Integrator {
    problem: ProblemSpec,
    scheme: BdfScheme,
    tau: f64,
    substeps: usize,
    starting: StartingMode,
    assembler: Arc<Assembler>,
    snapshot: Snapshot,
    state: StatePair,
    initial: InitialData,
    history: HistoryRing,
    solver: BlockSolver,
    index: usize,
    report: LevelReport,
}

impl Integrator {
    pub fn new(
        problem: ProblemSpec,
        mesh0: SurfaceMesh,
        order: usize,
        tau: f64,
        options: IntegratorOptions,
    ) -> Result<Self> {
        let scheme = BdfScheme::new(order)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
        }
        if options.node_step.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::InvalidArgument("node step must be positive".into()));
        }
        let starting = match options.starting {
            StartingMode::Auto if problem.exact_u.is_some() => StartingMode::Exact,
            StartingMode::Auto => StartingMode::Cascade,
            StartingMode::Exact if problem.exact_u.is_none() || problem.exact_w.is_none() => {
                return Err(Error::config("exact starting values need exact u and w"))
            }
            m => m,
        };
        let assembler = Arc::new(Assembler::new(&mesh0));
        let snapshot = Snapshot::new(&assembler, mesh0)?;
        let initial = initial_state(&snapshot, &problem)?;
        let state = initial.state.clone();
        let mass_u = snapshot.mass.mul_vec(&state.u);
        let mass = mass_u.iter().sum();
        let mut history = HistoryRing::new(order, tau);
        history.push(HistoryEntry {
            t: state.t,
            u: state.u.clone(),
            mu: mass_u,
        })?;
        Ok(Integrator {
            substeps: options.node_step.map_or(1, |h| (tau / h * (1.0 - 1e-12)).ceil().max(1.0) as usize),
            problem,
            scheme,
            tau,
            starting,
            assembler,
            report: LevelReport {
                index: 0,
                t: state.t,
                kind: LevelKind::Initial,
                order: 0,
                residual_u: 0.0,
                residual_w: 0.0,
                method: None,
                mass,
            },
            snapshot,
            state,
            initial,
            history,
            solver: BlockSolver::new(),
            index: 0,
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn scheme(&self) -> &BdfScheme {
        &self.scheme
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn state(&self) -> &StatePair {
        &self.state
    }

    pub fn report(&self) -> &LevelReport {
        &self.report
    }

    pub fn initial(&self) -> &InitialData {
        &self.initial
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.initial.theta
    }

    pub fn history(&self) -> &HistoryRing {
        &self.history
    }

    pub fn starting_mode(&self) -> StartingMode {
        self.starting
    }

    /// Moves to the next time level.
    pub fn advance(&mut self) -> Result<&LevelReport> {
        let n = self.index + 1;
        let t = n as f64 * self.tau + self.initial.state.t;
        let mesh = evolve_mesh(&self.snapshot.mesh, self.problem.surface.as_ref(), t, self.substeps)?;
        let snapshot = Snapshot::new(&self.assembler, mesh)?;
        let order = n.min(self.scheme.order());
        let (state, mass_u, report) = if n < self.scheme.order() && self.starting == StartingMode::Exact {
            let u = interpolate(&snapshot, self.problem.exact_u.as_ref().unwrap().as_ref());
            let w = interpolate(&snapshot, self.problem.exact_w.as_ref().unwrap().as_ref());
            let state = StatePair::new(u, w, t)?;
            let mass_u = snapshot.mass.mul_vec(&state.u);
            let report = LevelReport {
                index: n,
                t,
                kind: LevelKind::ExactStart,
                order: 0,
                residual_u: 0.0,
                residual_w: 0.0,
                method: None,
                mass: mass_u.iter().sum(),
            };
            (state, mass_u, report)
        } else {
            let lower;
            let scheme = if order < self.scheme.order() {
                lower = BdfScheme::new(order)?;
                &lower
            } else {
                &self.scheme
            };
            let out = step(
                &snapshot,
                scheme,
                &self.history,
                &self.problem,
                &self.initial.theta,
                self.tau,
                &mut self.solver,
            )?;
            let report = LevelReport {
                index: n,
                t,
                kind: LevelKind::Bdf,
                order,
                residual_u: out.solution.residual_u,
                residual_w: out.solution.residual_w,
                method: Some(out.solution.method),
                mass: out.mass_u.iter().sum(),
            };
            (out.state, out.mass_u, report)
        };
        self.history.push(HistoryEntry {
            t,
            u: state.u.clone(),
            mu: mass_u,
        })?;
        self.index = n;
        self.snapshot = snapshot;
        self.state = state;
        self.report = report;
        Ok(&self.report)
    }
}

/// History after the starting phase, holding states at `t₀, …, t_{s-1}`.
pub fn starting_cascade(
    mesh0: SurfaceMesh,
    problem: &ProblemSpec,
    order: usize,
    tau: f64,
    options: IntegratorOptions,
) -> Result<HistoryRing> {
    let mut integrator = Integrator::new(problem.clone(), mesh0, order, tau, options)?;
    for _ in 1..order {
        integrator.advance()?;
    }
    Ok(integrator.history.clone())
}
