//! Sample-average approximation of the expected terminal Hamiltonian and the
//! projected-gradient schedule optimizer.
//!
//! The objective for one fixed noise path telescopes the energy balance:
//!
//! ```text
//! J = (1/M) sum_k [ H_k(0) - B dt sum_{n=1..N_T} sum_i |V_i^k(t_n)|^2 ]
//!     + 3 N B dt sum_{n=1..N_T} u(t_n)
//! ```
//!
//! The heating coefficient is 3N: each of the three velocity components of
//! every particle gains B u of kinetic energy per unit time (dW^T dW = 3 dt
//! for a 3-d Wiener increment). Gradients are accumulated in reverse through
//! the step recursion with the noise increments held fixed.

use std::io::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::{sample_initial_states, InitialDistribution};
use crate::integrate::{rollout, ForceModel, TimeGrid, TrajectoryRecord};
use crate::noise::NoiseRealization;
use crate::par;
use crate::potential::{force_vjp, SystemParams, SystemState, Vec3};
use crate::schedule::{project_feasible, TemperatureSchedule};

/// Control values below this cannot be differentiated directly because
/// d sqrt(2Bu)/du blows up; the optimizer switches to s = sqrt(u) instead.
pub const U_FLOOR: f64 = 1e-12;

/// Objective contribution of one unresolved sample under the terminal form.
/// Far above any resolved Hamiltonian, far below overflow, and proportional to
/// the number of unresolved samples so the line search sees count changes.
pub const UNRESOLVED_PENALTY: f64 = 1e12;

/// Kinetic-energy injection rate per unit control: 3 components per particle.
pub fn heating_coefficient(n_particles: usize) -> f64 {
    3.0 * n_particles as f64
}

/// A fixed sample-average approximation instance: M initial states and one
/// frozen noise realization (common random numbers across all evaluations).
#[derive(Clone, Debug)]
pub struct SaaProblem {
    pub params: SystemParams,
    pub grid: TimeGrid,
    pub initial_states: Vec<SystemState>,
    pub noise: NoiseRealization,
    pub u_min: f64,
    pub u_max: f64,
    pub monotone: bool,
    pub force_model: ForceModel,
    /// Per-step kinetic-energy bound above which a sample path is treated as
    /// numerically unresolved (the time step cannot follow the repulsive core
    /// it has entered). `None` disables the check.
    pub kinetic_cap: Option<f64>,
}

impl SaaProblem {
    pub fn new(
        params: SystemParams,
        grid: TimeGrid,
        initial_states: Vec<SystemState>,
        noise: NoiseRealization,
        u_min: f64,
        u_max: f64,
        monotone: bool,
        force_model: ForceModel,
    ) -> Result<Self> {
        if initial_states.is_empty() {
            return Err(Error::Config("SAA problem needs at least one sample".into()));
        }
        if noise.n_samples < initial_states.len()
            || noise.n_steps < grid.n_steps()
            || noise.n_particles != params.n_particles
        {
            return Err(Error::Shape(format!(
                "noise dimensions ({}, {}, {}) do not cover (M = {}, N_T = {}, N = {})",
                noise.n_samples,
                noise.n_steps,
                noise.n_particles,
                initial_states.len(),
                grid.n_steps(),
                params.n_particles
            )));
        }
        for (k, s) in initial_states.iter().enumerate() {
            if s.n() != params.n_particles {
                return Err(Error::Shape(format!(
                    "initial state {k} has {} particles, expected {}",
                    s.n(),
                    params.n_particles
                )));
            }
        }
        if u_min > u_max {
            return Err(Error::Config(format!("u_min {u_min} > u_max {u_max}")));
        }
        Ok(Self {
            params,
            grid,
            initial_states,
            noise,
            u_min,
            u_max,
            monotone,
            force_model,
            kinetic_cap: None,
        })
    }

    /// Enable the kinetic-energy resolution check at the given cap.
    pub fn with_kinetic_cap(mut self, cap: f64) -> Result<Self> {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::InvalidParam(format!("kinetic cap must be > 0, got {cap}")));
        }
        self.kinetic_cap = Some(cap);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.initial_states.len()
    }

    fn check_schedule(&self, u: &TemperatureSchedule) -> Result<()> {
        if u.n_steps() != self.grid.n_steps() {
            return Err(Error::Shape(format!(
                "schedule has {} steps, problem grid has {}",
                u.n_steps(),
                self.grid.n_steps()
            )));
        }
        Ok(())
    }
}

/// Forward pass for one sample. Returns H(0), the velocity-square sum, and
/// (when `keep` is set) the per-step positions/velocities needed in reverse.
struct SampleForward {
    h0: f64,
    velocity_square_sum: f64,
    /// X(t_0)..X(t_{N_T - 1}), present only when kept for the backward pass.
    positions: Vec<Vec<Vec3>>,
    /// V(t_1)..V(t_{N_T}).
    velocities: Vec<Vec<Vec3>>,
}

fn forward_sample(
    u_values: &[f64],
    problem: &SaaProblem,
    k: usize,
    keep: bool,
) -> Result<SampleForward> {
    let p = &problem.params;
    let dt = problem.grid.dt();
    let damp = 1.0 + p.damping * dt;
    let path = problem.noise.path(k);
    let mut state = problem.initial_states[k].clone();
    let h0 = problem.force_model.energy(&state, p)?;
    let n_steps = problem.grid.n_steps();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    let mut velsum = 0.0;
    for n in 0..n_steps {
        if keep {
            positions.push(state.positions.clone());
        }
        let forces = problem
            .force_model
            .forces(&state, p)
            .map_err(|e| Error::StepFailed { step: n, source: Box::new(e) })?;
        let sigma = (2.0 * p.damping * u_values[n + 1]).sqrt();
        let dw = path.step(n);
        for i in 0..p.n_particles {
            let v = (state.velocities[i] + forces[i] * dt + sigma * dw[i]) / damp;
            state.positions[i] += v * dt;
            state.velocities[i] = v;
            velsum += v.norm_squared();
        }
        if keep {
            velocities.push(state.velocities.clone());
        }
    }
    Ok(SampleForward { h0, velocity_square_sum: velsum, positions, velocities })
}

/// Discretized sample-average objective (common random numbers).
pub fn saa_objective(u: &TemperatureSchedule, problem: &SaaProblem) -> Result<f64> {
    problem.check_schedule(u)?;
    saa_objective_raw(u.values(), problem)
}

fn saa_objective_raw(u_values: &[f64], problem: &SaaProblem) -> Result<f64> {
    let m = problem.n_samples();
    let per_sample = par::try_map_indices(m, |k| {
        forward_sample(u_values, problem, k, false)
            .map(|f| f.h0 - problem.params.damping * problem.grid.dt() * f.velocity_square_sum)
            .map_err(|e| Error::SampleFailed { sample: k, source: Box::new(e) })
    })?;
    let mean = per_sample.iter().sum::<f64>() / m as f64;
    let heating = heating_coefficient(problem.params.n_particles)
        * problem.params.damping
        * problem.grid.dt()
        * u_values[1..].iter().sum::<f64>();
    Ok(mean + heating)
}

/// Forward pass for the terminal-Hamiltonian objective. Unlike the telescoped
/// form, hard step failures and kinetic-cap violations are recorded rather
/// than propagated, so the solver can penalize unresolved samples instead of
/// aborting.
struct TerminalForward {
    /// H at the horizon; meaningless when `unresolved_at` is set.
    h_terminal: f64,
    /// First step at which the sample left the resolved regime, if any.
    unresolved_at: Option<usize>,
    terminal_state: SystemState,
    /// X(t_0)..X(t_{N_T - 1}), present only when kept for the backward pass.
    positions: Vec<Vec<Vec3>>,
}

fn terminal_forward(
    u_values: &[f64],
    problem: &SaaProblem,
    k: usize,
    keep: bool,
) -> TerminalForward {
    let p = &problem.params;
    let dt = problem.grid.dt();
    let damp = 1.0 + p.damping * dt;
    let path = problem.noise.path(k);
    let mut state = problem.initial_states[k].clone();
    let n_steps = problem.grid.n_steps();
    let mut positions = Vec::new();
    let mut unresolved_at = None;
    for n in 0..n_steps {
        if keep {
            positions.push(state.positions.clone());
        }
        let forces = match problem.force_model.forces(&state, p) {
            Ok(f) => f,
            Err(_) => {
                unresolved_at = Some(n);
                break;
            }
        };
        let sigma = (2.0 * p.damping * u_values[n + 1]).sqrt();
        let dw = path.step(n);
        for i in 0..p.n_particles {
            let v = (state.velocities[i] + forces[i] * dt + sigma * dw[i]) / damp;
            state.positions[i] += v * dt;
            state.velocities[i] = v;
        }
        if let Some(cap) = problem.kinetic_cap {
            if state.kinetic_energy() > cap {
                unresolved_at = Some(n);
                break;
            }
        }
    }
    let h_terminal = if unresolved_at.is_some() {
        UNRESOLVED_PENALTY
    } else {
        match problem.force_model.energy(&state, p) {
            Ok(h) if h.is_finite() => h,
            _ => {
                unresolved_at = Some(n_steps);
                UNRESOLVED_PENALTY
            }
        }
    };
    TerminalForward { h_terminal, unresolved_at, terminal_state: state, positions }
}

/// Direct sample-average estimator of E[H(T)] with unresolved samples
/// replaced by `UNRESOLVED_PENALTY`. Returns the mean and the unresolved
/// sample count.
fn terminal_objective_raw(u_values: &[f64], problem: &SaaProblem) -> Result<(f64, usize)> {
    let m = problem.n_samples();
    let per_sample = par::try_map_indices(m, |k| {
        let fwd = terminal_forward(u_values, problem, k, false);
        Ok((fwd.h_terminal, fwd.unresolved_at.is_some()))
    })?;
    let mean = per_sample.iter().map(|(h, _)| h).sum::<f64>() / m as f64;
    let unresolved = per_sample.iter().filter(|(_, bad)| *bad).count();
    Ok((mean, unresolved))
}

/// d(terminal objective)/d(sigma_n): reverse pass seeded by the terminal
/// Hamiltonian's state sensitivities dH/dV(T) = V(T), dH/dX(T) = -f(X(T)).
/// Unresolved samples carry a flat penalty and contribute no gradient.
fn terminal_sigma_gradient(u_values: &[f64], problem: &SaaProblem) -> Result<Vec<f64>> {
    let m = problem.n_samples();
    let n_steps = problem.grid.n_steps();
    let p = problem.params;
    let dt = problem.grid.dt();
    let damp_inv = 1.0 / (1.0 + p.damping * dt);
    let per_sample: Vec<Vec<f64>> = par::try_map_indices(m, |k| {
        let fwd = terminal_forward(u_values, problem, k, true);
        if fwd.unresolved_at.is_some() {
            return Ok(vec![0.0; n_steps]);
        }
        let path = problem.noise.path(k);
        let n = p.n_particles;
        let mut grad = vec![0.0; n_steps];
        let mut lambda = fwd.terminal_state.velocities.clone();
        let mut mu: Vec<Vec3> = match problem.force_model {
            ForceModel::LennardJones => {
                let f = problem
                    .force_model
                    .forces(&fwd.terminal_state, &p)
                    .map_err(|e| Error::SampleFailed { sample: k, source: Box::new(e) })?;
                f.iter().map(|fi| -fi).collect()
            }
            ForceModel::Disabled => vec![Vec3::zeros(); n],
        };
        for step in (0..n_steps).rev() {
            let tilde: Vec<Vec3> =
                (0..n).map(|i| damp_inv * (lambda[i] + dt * mu[i])).collect();
            let dw = path.step(step);
            grad[step] = tilde.iter().zip(dw).map(|(t, w)| t.dot(w)).sum();
            let x_state = SystemState {
                positions: fwd.positions[step].clone(),
                velocities: vec![Vec3::zeros(); n],
            };
            let vjp = match problem.force_model {
                ForceModel::LennardJones => force_vjp(&x_state, &tilde, &p)
                    .map_err(|e| Error::StepFailed { step, source: Box::new(e) })?,
                ForceModel::Disabled => vec![Vec3::zeros(); n],
            };
            for i in 0..n {
                let new_mu = mu[i] + dt * vjp[i];
                lambda[i] = tilde[i];
                mu[i] = new_mu;
            }
        }
        Ok(grad)
    })?;
    let mut grad = vec![0.0; n_steps];
    for g in &per_sample {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for g in &mut grad {
        *g /= m as f64;
    }
    Ok(grad)
}

/// d(objective)/d(sigma_n) for n = 1..N_T, where sigma_n = sqrt(2 B u(t_n)) is
/// the noise amplitude of step n-1. Reverse-mode through the step recursion.
fn sigma_gradient(u_values: &[f64], problem: &SaaProblem) -> Result<Vec<f64>> {
    let m = problem.n_samples();
    let n_steps = problem.grid.n_steps();
    let p = problem.params;
    let dt = problem.grid.dt();
    let damp_inv = 1.0 / (1.0 + p.damping * dt);
    let per_sample: Vec<Vec<f64>> = par::try_map_indices(m, |k| {
        let fwd = forward_sample(u_values, problem, k, true)
            .map_err(|e| Error::SampleFailed { sample: k, source: Box::new(e) })?;
        let path = problem.noise.path(k);
        let n = p.n_particles;
        let mut grad = vec![0.0; n_steps];
        // adjoints of V(t_{n+1}) and X(t_{n+1})
        let mut lambda = vec![Vec3::zeros(); n];
        let mut mu = vec![Vec3::zeros(); n];
        let vel_weight = -2.0 * p.damping * dt;
        for step in (0..n_steps).rev() {
            // direct objective contribution of V(t_{step+1})
            for i in 0..n {
                lambda[i] += vel_weight * fwd.velocities[step][i];
            }
            // combined adjoint of the pre-damping bracket
            let tilde: Vec<Vec3> =
                (0..n).map(|i| damp_inv * (lambda[i] + dt * mu[i])).collect();
            let dw = path.step(step);
            grad[step] = tilde.iter().zip(dw).map(|(t, w)| t.dot(w)).sum();
            // pull the adjoint back through f(X_step)
            let x_state = SystemState {
                positions: fwd.positions[step].clone(),
                velocities: vec![Vec3::zeros(); n],
            };
            let vjp = match problem.force_model {
                ForceModel::LennardJones => force_vjp(&x_state, &tilde, &p)
                    .map_err(|e| Error::StepFailed { step, source: Box::new(e) })?,
                ForceModel::Disabled => vec![Vec3::zeros(); n],
            };
            for i in 0..n {
                let new_mu = mu[i] + dt * vjp[i];
                lambda[i] = tilde[i];
                mu[i] = new_mu;
            }
        }
        Ok(grad)
    })?;
    let mut grad = vec![0.0; n_steps];
    for g in &per_sample {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for g in &mut grad {
        *g /= m as f64;
    }
    Ok(grad)
}

/// Gradient of the objective with respect to u(t_1)..u(t_{N_T}).
pub fn saa_gradient(u: &TemperatureSchedule, problem: &SaaProblem) -> Result<Vec<f64>> {
    problem.check_schedule(u)?;
    let vals = u.values();
    for (n, &v) in vals.iter().enumerate().skip(1) {
        if v < U_FLOOR {
            return Err(Error::Domain(format!(
                "u(t_{n}) = {v} below the gradient floor {U_FLOOR}; optimize in s = sqrt(u) instead"
            )));
        }
    }
    let sg = sigma_gradient(vals, problem)?;
    let b = problem.params.damping;
    let heat = heating_coefficient(problem.params.n_particles) * b * problem.grid.dt();
    Ok((0..problem.grid.n_steps())
        .map(|n| heat + sg[n] * (b / (2.0 * vals[n + 1])).sqrt())
        .collect())
}

/// Which sample-average estimator of E[H(T)] the solver minimizes.
///
/// The two agree in expectation. The telescoped form has an explicit heating
/// term and low variance when every sample stays well resolved; the terminal
/// form evaluates H at the horizon directly, which keeps the objective bounded
/// (and explosion-averse) when the grid step cannot resolve close encounters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObjectiveForm {
    #[default]
    Telescoped,
    Terminal,
}

/// Options for the projected-gradient solver.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Convergence threshold on the projected-gradient norm.
    pub tol: f64,
    pub step0: f64,
    pub objective: ObjectiveForm,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-6, step0: 1.0, objective: ObjectiveForm::Telescoped }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HoldoutEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    /// Paths dropped because the rollout failed or breached the kinetic cap.
    pub n_excluded: usize,
    /// Set when the sample is too small for a standard error (m = 1).
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationReport {
    pub schedule: TemperatureSchedule,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub holdout: Option<HoldoutEstimate>,
}

/// Working parametrization for the solver: identity, or s = sqrt(u) when the
/// lower bound is zero so the noise amplitude stays differentiable at u = 0.
#[derive(Clone, Copy, PartialEq)]
enum Param {
    Direct,
    Sqrt,
}

impl Param {
    fn to_u(self, w: &[f64]) -> Vec<f64> {
        match self {
            Param::Direct => w.to_vec(),
            Param::Sqrt => w.iter().map(|s| s * s).collect(),
        }
    }

    fn from_u(self, u: &[f64]) -> Vec<f64> {
        match self {
            Param::Direct => u.to_vec(),
            Param::Sqrt => u.iter().map(|v| v.max(0.0).sqrt()).collect(),
        }
    }

    fn bounds(self, u_min: f64, u_max: f64) -> (f64, f64) {
        match self {
            Param::Direct => (u_min, u_max),
            Param::Sqrt => (u_min.max(0.0).sqrt(), u_max.max(0.0).sqrt()),
        }
    }
}

fn dump_iterate(u: &[f64]) -> String {
    let path = std::env::temp_dir().join("saa_iterate_dump.json");
    let payload = serde_json::to_string(u).unwrap_or_default();
    let _ = std::fs::File::create(&path).and_then(|mut f| f.write_all(payload.as_bytes()));
    path.display().to_string()
}

/// Projected gradient descent with Armijo backtracking on the SAA objective.
/// The recorded objective history is non-increasing by the accepted-step rule.
pub fn optimize_schedule(
    problem: &SaaProblem,
    init: &TemperatureSchedule,
    opts: &SolverOptions,
) -> Result<OptimizationReport> {
    problem.check_schedule(init)?;
    let (u_min, u_max) = (problem.u_min, problem.u_max);
    let param = if u_min == 0.0 { Param::Sqrt } else { Param::Direct };
    let (w_min, w_max) = param.bounds(u_min, u_max);
    let b = problem.params.damping;
    let dt = problem.grid.dt();
    let heat = heating_coefficient(problem.params.n_particles) * b * dt;

    let form = opts.objective;
    let objective = |w: &[f64]| -> Result<f64> {
        let mut u = param.to_u(w);
        for v in &mut u {
            *v = v.clamp(u_min, u_max);
        }
        match form {
            ObjectiveForm::Telescoped => saa_objective_raw(&u, problem),
            ObjectiveForm::Terminal => terminal_objective_raw(&u, problem).map(|(mean, _)| mean),
        }
    };

    // gradient in working space; entry 0 is the reporting-only u(t_0)
    let gradient = |w: &[f64]| -> Result<Vec<f64>> {
        let mut u = param.to_u(w);
        for v in &mut u {
            *v = v.clamp(u_min, u_max);
        }
        let sg = match form {
            ObjectiveForm::Telescoped => sigma_gradient(&u, problem)?,
            ObjectiveForm::Terminal => terminal_sigma_gradient(&u, problem)?,
        };
        // the explicit heating term belongs to the telescoped form only; the
        // terminal form sees heating through the noise-product sensitivities
        let heat_term = match form {
            ObjectiveForm::Telescoped => heat,
            ObjectiveForm::Terminal => 0.0,
        };
        let mut g = vec![0.0; w.len()];
        for n in 1..w.len() {
            g[n] = match param {
                Param::Direct => heat_term + sg[n - 1] * (b / (2.0 * u[n].max(U_FLOOR))).sqrt(),
                Param::Sqrt => 2.0 * heat_term * w[n] + sg[n - 1] * (2.0 * b).sqrt(),
            };
        }
        Ok(g)
    };

    let project = |w: &[f64]| -> Result<Vec<f64>> {
        Ok(project_feasible(w, w_min, w_max, problem.monotone)?.values().to_vec())
    };

    let mut w = project(&param.from_u(init.values()))?;
    let mut f = objective(&w)?;
    // the coldest feasible schedule is always available as a second starting
    // point; it rescues warm starts whose every sample is unresolved (where
    // the penalty plateau has zero gradient)
    let cold = project(&vec![w_min; w.len()])?;
    let f_cold = objective(&cold)?;
    if f_cold < f {
        w = cold;
        f = f_cold;
    }
    if !f.is_finite() {
        return Err(Error::Solver(format!(
            "non-finite initial objective; iterate dumped to {}",
            dump_iterate(&param.to_u(&w))
        )));
    }
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut alpha = opts.step0;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..opts.max_iters {
        let g = gradient(&w)?;
        // projected-gradient stationarity measure at unit step
        let probe = project(&w.iter().zip(&g).map(|(x, gi)| x - gi).collect::<Vec<_>>())?;
        let pg_norm = norm(&w.iter().zip(&probe).map(|(a, b)| a - b).collect::<Vec<_>>());
        if pg_norm <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        let mut try_alpha = alpha;
        for _ in 0..60 {
            let cand =
                project(&w.iter().zip(&g).map(|(x, gi)| x - try_alpha * gi).collect::<Vec<_>>())?;
            let move_sq: f64 = cand.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
            if move_sq == 0.0 {
                break;
            }
            let f_cand = objective(&cand)?;
            if !f_cand.is_finite() {
                return Err(Error::Solver(format!(
                    "non-finite objective at iteration {iterations}; iterate dumped to {}",
                    dump_iterate(&param.to_u(&cand))
                )));
            }
            if f_cand <= f - 1e-4 * move_sq / try_alpha {
                w = cand;
                f = f_cand;
                history.push(f);
                alpha = (try_alpha * 2.0).min(1e6);
                accepted = true;
                break;
            }
            try_alpha *= 0.5;
        }
        if !accepted {
            // no descent step found; report stationarity as-is
            converged = pg_norm <= opts.tol;
            break;
        }
    }

    let mut u = param.to_u(&w);
    for v in &mut u {
        *v = v.clamp(u_min, u_max);
    }
    let schedule = project_feasible(&u, u_min, u_max, problem.monotone)?;
    Ok(OptimizationReport {
        schedule,
        objective_history: history,
        iterations,
        converged,
        holdout: None,
    })
}

/// Roll out fresh held-out sample paths under a schedule. The same seed yields
/// the same initial states and noise for any schedule (common random numbers).
pub fn holdout_trajectories(
    schedule: &TemperatureSchedule,
    params: &SystemParams,
    grid: &TimeGrid,
    dist: &InitialDistribution,
    model: ForceModel,
    m_holdout: usize,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>> {
    if m_holdout == 0 {
        return Err(Error::Config("holdout sample count must be >= 1".into()));
    }
    let initials = sample_initial_states(dist, params, seed, m_holdout)?;
    let noise =
        NoiseRealization::generate(seed, m_holdout, grid.n_steps(), params.n_particles, grid.dt())?;
    par::try_map_indices(m_holdout, |k| {
        rollout(&initials[k], schedule, &noise.path(k), grid, params, model)
            .map_err(|e| Error::SampleFailed { sample: k, source: Box::new(e) })
    })
}

/// Roll out fresh held-out paths like [`holdout_trajectories`], but return
/// `None` for paths the integrator cannot resolve — a failed step, or (when a
/// cap is given) a recorded kinetic energy above `kinetic_cap`.
pub fn holdout_rollouts(
    schedule: &TemperatureSchedule,
    params: &SystemParams,
    grid: &TimeGrid,
    dist: &InitialDistribution,
    model: ForceModel,
    m_holdout: usize,
    seed: u64,
    kinetic_cap: Option<f64>,
) -> Result<Vec<Option<TrajectoryRecord>>> {
    if m_holdout == 0 {
        return Err(Error::Config("holdout sample count must be >= 1".into()));
    }
    let initials = sample_initial_states(dist, params, seed, m_holdout)?;
    let noise =
        NoiseRealization::generate(seed, m_holdout, grid.n_steps(), params.n_particles, grid.dt())?;
    par::try_map_indices(m_holdout, |k| {
        match rollout(&initials[k], schedule, &noise.path(k), grid, params, model) {
            Ok(traj) => {
                let resolved = match kinetic_cap {
                    Some(cap) => traj.states.iter().all(|s| s.kinetic_energy() <= cap),
                    None => true,
                };
                Ok(resolved.then_some(traj))
            }
            Err(Error::StepFailed { .. }) => Ok(None),
            Err(e) => Err(Error::SampleFailed { sample: k, source: Box::new(e) }),
        }
    })
}

/// Mean and standard error of the terminal Hamiltonian over the resolved
/// fresh sample paths.
pub fn evaluate_holdout(
    schedule: &TemperatureSchedule,
    params: &SystemParams,
    grid: &TimeGrid,
    dist: &InitialDistribution,
    model: ForceModel,
    m_holdout: usize,
    seed: u64,
    kinetic_cap: Option<f64>,
) -> Result<HoldoutEstimate> {
    let trajs =
        holdout_rollouts(schedule, params, grid, dist, model, m_holdout, seed, kinetic_cap)?;
    let terminal: Vec<f64> = trajs
        .iter()
        .flatten()
        .map(|t| *t.hamiltonians.last().unwrap())
        .collect();
    let n_excluded = m_holdout - terminal.len();
    if terminal.is_empty() {
        return Err(Error::Misuse(format!(
            "all {m_holdout} holdout paths were unresolved under this schedule"
        )));
    }
    let m = terminal.len() as f64;
    let mean = terminal.iter().sum::<f64>() / m;
    if terminal.len() == 1 {
        return Ok(HoldoutEstimate { mean, stderr: 0.0, n_samples: 1, n_excluded, degenerate: true });
    }
    let var = terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(HoldoutEstimate {
        mean,
        stderr: (var / m).sqrt(),
        n_samples: terminal.len(),
        n_excluded,
        degenerate: false,
    })
}
