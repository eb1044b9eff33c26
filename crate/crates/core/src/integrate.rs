//! Time-steppers for the damped particle dynamics.
//!
//! The Langevin step is drift-implicit in the damping term only:
//!
//! ```text
//! V' = (V + f(X) dt + sqrt(2 B u') dW) / (1 + B dt)
//! X' = X + V' dt
//! ```
//!
//! With u' = 0 and zero increments this reduces exactly to the noise-free
//! stepper. The control is sampled at the end of the step, so a schedule of
//! N_T + 1 values uses entries 1..=N_T; entry 0 is reporting-only.

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::potential::{hamiltonian, total_forces, SystemParams, SystemState, Vec3};
use crate::schedule::TemperatureSchedule;

/// Uniform discretization of [0, T].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    /// A grid with `n_steps >= 1` steps, or the degenerate zero-step grid when
    /// both horizon and step count are zero.
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::InvalidParam(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        if n_steps == 0 {
            if horizon != 0.0 {
                return Err(Error::InvalidParam("a zero-step grid requires horizon = 0".into()));
            }
            return Ok(Self { horizon: 0.0, n_steps: 0, dt: 0.0 });
        }
        if horizon <= 0.0 {
            return Err(Error::InvalidParam("horizon must be > 0 when n_steps >= 1".into()));
        }
        Ok(Self { horizon, n_steps, dt: horizon / n_steps as f64 })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Interaction model used by the steppers. `Disabled` keeps only damping and
/// noise, which is useful for free-particle checks and toy optimization
/// problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForceModel {
    LennardJones,
    Disabled,
}

impl ForceModel {
    pub fn forces(&self, state: &SystemState, params: &SystemParams) -> Result<Vec<Vec3>> {
        match self {
            ForceModel::LennardJones => total_forces(state, params),
            ForceModel::Disabled => Ok(vec![Vec3::zeros(); state.n()]),
        }
    }

    /// Hamiltonian consistent with the model: kinetic plus pair potential, or
    /// kinetic only when forces are disabled.
    pub fn energy(&self, state: &SystemState, params: &SystemParams) -> Result<f64> {
        match self {
            ForceModel::LennardJones => hamiltonian(state, params),
            ForceModel::Disabled => Ok(state.kinetic_energy()),
        }
    }
}

/// One noise-free step (Langevin step with the noise term removed).
pub fn step_noise_free(
    state: &SystemState,
    dt: f64,
    params: &SystemParams,
    model: ForceModel,
) -> Result<SystemState> {
    step_inner(state, dt, None, params, model)
}

/// One Langevin step with control value `u_next` (sampled at the end of the
/// step) and per-particle Wiener increments `dw` of variance dt.
pub fn step_langevin(
    state: &SystemState,
    dt: f64,
    u_next: f64,
    dw: &[Vec3],
    params: &SystemParams,
    model: ForceModel,
) -> Result<SystemState> {
    if !(u_next.is_finite() && u_next >= 0.0) {
        return Err(Error::Domain(format!("control value must be >= 0, got {u_next}")));
    }
    if dw.len() != state.n() {
        return Err(Error::Shape(format!(
            "noise increment count {} != particle count {}",
            dw.len(),
            state.n()
        )));
    }
    step_inner(state, dt, Some((u_next, dw)), params, model)
}

fn step_inner(
    state: &SystemState,
    dt: f64,
    noise: Option<(f64, &[Vec3])>,
    params: &SystemParams,
    model: ForceModel,
) -> Result<SystemState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be > 0, got {dt}")));
    }
    let forces = model.forces(state, params)?;
    let damp = 1.0 + params.damping * dt;
    let scale = match noise {
        Some((u, _)) => (2.0 * params.damping * u).sqrt(),
        None => 0.0,
    };
    let n = state.n();
    let mut velocities = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let kick = match noise {
            Some((_, dw)) => scale * dw[i],
            None => Vec3::zeros(),
        };
        let v = (state.velocities[i] + forces[i] * dt + kick) / damp;
        positions.push(state.positions[i] + v * dt);
        velocities.push(v);
    }
    Ok(SystemState { positions, velocities })
}

/// Time series recorded along one rollout.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub hamiltonians: Vec<f64>,
    pub min_pair_distance: Vec<f64>,
    /// Largest control value applied along the rollout; 0 for noise-free runs.
    pub max_control: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &SystemState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &SystemState {
        self.states.last().expect("trajectory has at least one state")
    }
}

fn record_point(
    traj: &mut TrajectoryRecord,
    time: f64,
    state: SystemState,
    params: &SystemParams,
    model: ForceModel,
) -> Result<()> {
    traj.times.push(time);
    traj.hamiltonians.push(model.energy(&state, params)?);
    traj.min_pair_distance.push(state.min_pair_distance());
    traj.states.push(state);
    Ok(())
}

/// Roll a full trajectory under a schedule and one pre-drawn noise path,
/// recording state, Hamiltonian and minimum pair distance at every grid point.
pub fn rollout(
    initial: &SystemState,
    schedule: &TemperatureSchedule,
    noise_path: &NoisePath<'_>,
    grid: &TimeGrid,
    params: &SystemParams,
    model: ForceModel,
) -> Result<TrajectoryRecord> {
    if schedule.n_steps() != grid.n_steps() {
        return Err(Error::Shape(format!(
            "schedule has {} steps but grid has {}",
            schedule.n_steps(),
            grid.n_steps()
        )));
    }
    if noise_path.n_steps() < grid.n_steps() {
        return Err(Error::Shape(format!(
            "noise path has {} steps but grid needs {}",
            noise_path.n_steps(),
            grid.n_steps()
        )));
    }
    let mut traj = empty_record(grid.n_steps());
    record_point(&mut traj, 0.0, initial.clone(), params, model)?;
    let mut state = initial.clone();
    for n in 0..grid.n_steps() {
        let u_next = schedule.values()[n + 1];
        state = step_langevin(&state, grid.dt(), u_next, noise_path.step(n), params, model)
            .map_err(|e| Error::StepFailed { step: n, source: Box::new(e) })?;
        traj.max_control = traj.max_control.max(u_next);
        record_point(&mut traj, grid.time(n + 1), state.clone(), params, model)?;
    }
    Ok(traj)
}

/// Noise-free rollout of the damped dynamics.
pub fn rollout_noise_free(
    initial: &SystemState,
    grid: &TimeGrid,
    params: &SystemParams,
    model: ForceModel,
) -> Result<TrajectoryRecord> {
    let mut traj = empty_record(grid.n_steps());
    record_point(&mut traj, 0.0, initial.clone(), params, model)?;
    let mut state = initial.clone();
    for n in 0..grid.n_steps() {
        state = step_noise_free(&state, grid.dt(), params, model)
            .map_err(|e| Error::StepFailed { step: n, source: Box::new(e) })?;
        record_point(&mut traj, grid.time(n + 1), state.clone(), params, model)?;
    }
    Ok(traj)
}

fn empty_record(n_steps: usize) -> TrajectoryRecord {
    TrajectoryRecord {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        hamiltonians: Vec::with_capacity(n_steps + 1),
        min_pair_distance: Vec::with_capacity(n_steps + 1),
        max_control: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseRealization;
    use approx::assert_abs_diff_eq;

    fn free_particle(v: Vec3) -> SystemState {
        SystemState::new(vec![Vec3::zeros()], vec![v]).unwrap()
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = SystemParams::new(2, 1.0, 1.0, 2.0).unwrap();
        let s = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)],
            vec![Vec3::zeros(); 2],
        )
        .unwrap();
        let next = step_noise_free(&s, 0.1, &p, ForceModel::LennardJones).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn noise_free_hand_values() {
        // single free particle, B = 2, dt = 0.1: V' = V / 1.2, X' = X + 0.1 V'
        let p = SystemParams::new(1, 2.0, 1.0, 2.0).unwrap();
        let s = free_particle(Vec3::new(1.0, 0.0, 0.0));
        let next = step_noise_free(&s, 0.1, &p, ForceModel::LennardJones).unwrap();
        assert_abs_diff_eq!(next.velocities[0].x, 1.0 / 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(next.positions[0].x, 0.1 / 1.2, epsilon = 1e-15);
    }

    #[test]
    fn langevin_with_zero_control_equals_noise_free() {
        let p = SystemParams::new(2, 1.5, 1.0, 2.0).unwrap();
        let s = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(3.0, 0.5, -0.2)],
            vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(-0.3, 0.2, 0.1)],
        )
        .unwrap();
        let dw = vec![Vec3::new(5.0, -5.0, 5.0); 2]; // arbitrary, must be ignored
        let a = step_langevin(&s, 0.05, 0.0, &dw, &p, ForceModel::LennardJones).unwrap();
        let b = step_noise_free(&s, 0.05, &p, ForceModel::LennardJones).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn langevin_hand_value() {
        // f = 0, B = 2, dt = 0.1, u = 2, dw = (0.1,0,0): V' = sqrt(8) * 0.1 / 1.2
        let p = SystemParams::new(1, 2.0, 1.0, 2.0).unwrap();
        let s = free_particle(Vec3::zeros());
        let dw = vec![Vec3::new(0.1, 0.0, 0.0)];
        let next = step_langevin(&s, 0.1, 2.0, &dw, &p, ForceModel::LennardJones).unwrap();
        assert_abs_diff_eq!(next.velocities[0].x, 8.0_f64.sqrt() * 0.1 / 1.2, epsilon = 1e-15);
    }

    #[test]
    fn langevin_rejects_bad_inputs() {
        let p = SystemParams::new(1, 2.0, 1.0, 2.0).unwrap();
        let s = free_particle(Vec3::zeros());
        let dw = vec![Vec3::zeros()];
        assert!(step_langevin(&s, 0.1, -1.0, &dw, &p, ForceModel::LennardJones).is_err());
        assert!(step_langevin(&s, 0.1, 1.0, &[], &p, ForceModel::LennardJones).is_err());
    }

    // Reference solution by classical RK4 on the damped ODE, used as an
    // independent oracle for the first-order stepper.
    fn rk4_reference(
        initial: &SystemState,
        t_end: f64,
        steps: usize,
        p: &SystemParams,
    ) -> SystemState {
        let h = t_end / steps as f64;
        let deriv = |s: &SystemState| -> (Vec<Vec3>, Vec<Vec3>) {
            let f = total_forces(s, p).unwrap();
            let dv: Vec<Vec3> = s
                .velocities
                .iter()
                .zip(&f)
                .map(|(v, fi)| -p.damping * v + fi)
                .collect();
            (s.velocities.clone(), dv)
        };
        let add = |s: &SystemState, dx: &[Vec3], dv: &[Vec3], c: f64| SystemState {
            positions: s.positions.iter().zip(dx).map(|(x, d)| x + c * d).collect(),
            velocities: s.velocities.iter().zip(dv).map(|(v, d)| v + c * d).collect(),
        };
        let mut s = initial.clone();
        for _ in 0..steps {
            let (k1x, k1v) = deriv(&s);
            let (k2x, k2v) = deriv(&add(&s, &k1x, &k1v, h / 2.0));
            let (k3x, k3v) = deriv(&add(&s, &k2x, &k2v, h / 2.0));
            let (k4x, k4v) = deriv(&add(&s, &k3x, &k3v, h));
            for i in 0..s.n() {
                s.positions[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
                s.velocities[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            }
        }
        s
    }

    fn two_body_error(dt: f64, p: &SystemParams, reference: &SystemState, t_end: f64) -> f64 {
        let initial = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)],
            vec![Vec3::zeros(); 2],
        )
        .unwrap();
        let steps = (t_end / dt).round() as usize;
        let grid = TimeGrid::new(t_end, steps).unwrap();
        let traj = rollout_noise_free(&initial, &grid, p, ForceModel::LennardJones).unwrap();
        let term = traj.terminal();
        let mut err: f64 = 0.0;
        for i in 0..2 {
            err = err.max((term.positions[i] - reference.positions[i]).norm());
            err = err.max((term.velocities[i] - reference.velocities[i]).norm());
        }
        err
    }

    #[test]
    fn noise_free_stepper_is_first_order() {
        let p = SystemParams::new(2, 1.0, 1.0, 2.0).unwrap();
        let t_end = 1.0;
        let initial = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)],
            vec![Vec3::zeros(); 2],
        )
        .unwrap();
        let reference = rk4_reference(&initial, t_end, 100_000, &p);
        let e1 = two_body_error(0.004, &p, &reference, t_end);
        let e2 = two_body_error(0.002, &p, &reference, t_end);
        let ratio = e1 / e2;
        assert!(
            (1.7..=2.3).contains(&ratio),
            "halving dt changed the error by {ratio:.3}, expected ~2 (e1 = {e1:.3e}, e2 = {e2:.3e})"
        );
    }

    #[test]
    fn zero_step_rollout_keeps_initial_state() {
        let p = SystemParams::new(1, 1.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(0.0, 0).unwrap();
        let s = free_particle(Vec3::new(1.0, 0.0, 0.0));
        let traj = rollout_noise_free(&s, &grid, &p, ForceModel::LennardJones).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0], s);
    }

    #[test]
    fn zero_noise_zero_schedule_matches_noise_free() {
        let p = SystemParams::new(3, 1.0, 1.0, 2.0).unwrap();
        let s = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(2.5, 0.0, 0.0), Vec3::new(0.0, 2.8, 0.0)],
            vec![Vec3::new(0.1, 0.0, 0.0); 3],
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let noise = NoiseRealization::zeros(1, 20, 3, grid.dt());
        let sched = TemperatureSchedule::constant(0.0, 20, 0.0, 50.0).unwrap();
        let a = rollout(&s, &sched, &noise.path(0), &grid, &p, ForceModel::LennardJones).unwrap();
        let b = rollout_noise_free(&s, &grid, &p, ForceModel::LennardJones).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.hamiltonians, b.hamiltonians);
    }

    #[test]
    fn rollout_is_bit_reproducible() {
        let p = SystemParams::new(4, 2.0, 3.0, 2.0).unwrap();
        let s = SystemState::new(
            vec![
                Vec3::zeros(),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 3.0, 0.0),
                Vec3::new(3.0, 3.0, 0.5),
            ],
            vec![Vec3::new(0.2, -0.1, 0.0); 4],
        )
        .unwrap();
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let noise = NoiseRealization::generate(123, 1, 40, 4, grid.dt()).unwrap();
        let sched = TemperatureSchedule::constant(1.5, 40, 0.0, 50.0).unwrap();
        let run = || {
            rollout(&s, &sched, &noise.path(0), &grid, &p, ForceModel::LennardJones).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.states, b.states);
        assert_eq!(a.hamiltonians, b.hamiltonians);
        assert_eq!(a.min_pair_distance, b.min_pair_distance);
    }

    #[test]
    fn ou_stationary_velocity_variance_matches_control() {
        // free particle, constant u: per-component stationary variance -> u
        let b = 2.0;
        let u = 1.5;
        let dt = 0.01;
        let steps = 60_000;
        let p = SystemParams::new(1, b, 1.0, 2.0).unwrap();
        let noise = NoiseRealization::generate(77, 1, steps, 1, dt).unwrap();
        let path = noise.path(0);
        let mut s = free_particle(Vec3::zeros());
        let mut samples = Vec::new();
        for n in 0..steps {
            s = step_langevin(&s, dt, u, path.step(n), &p, ForceModel::Disabled).unwrap();
            if n > steps / 10 {
                samples.extend_from_slice(&[s.velocities[0].x, s.velocities[0].y, s.velocities[0].z]);
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - u).abs() < 0.1 * u, "stationary variance {var} vs u {u}");
    }
}
