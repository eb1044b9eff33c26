//! Runtime checks derived from the noise-free convergence analysis: energy
//! dissipation, terminal velocity/force convergence, the pair-distance floor,
//! and the stochastic energy-balance identity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::TrajectoryRecord;
use crate::optimize::heating_coefficient;
use crate::potential::{pairwise_distance_floor, total_forces, SystemParams};
use crate::schedule::TemperatureSchedule;

/// Slack on the distance floor absorbing first-order discretization error.
pub const DISTANCE_FLOOR_SLACK: f64 = 0.9;

/// Per-step tolerance for the dissipation check.
pub fn dissipation_step_tolerance(dt: f64, h: f64) -> f64 {
    10.0 * dt * dt * (1.0 + h.abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub h_monotone: bool,
    pub worst_step_violation: f64,
    pub terminal_speed: f64,
    pub terminal_force: f64,
    pub distance_floor_ok: bool,
    pub min_observed_distance: f64,
    pub distance_floor: f64,
    pub equilibrium_reached: bool,
}

fn require_noise_free(traj: &TrajectoryRecord) -> Result<()> {
    if traj.max_control > 0.0 {
        return Err(Error::Misuse(format!(
            "trajectory was generated with control up to {}; this check applies to noise-free runs",
            traj.max_control
        )));
    }
    Ok(())
}

/// Verify H(t_{n+1}) <= H(t_n) + tol_step along a noise-free trajectory.
/// Returns (pass, worst per-step violation); negative worst means slack left.
pub fn check_dissipation(traj: &TrajectoryRecord, _params: &SystemParams) -> Result<(bool, f64)> {
    require_noise_free(traj)?;
    if traj.len() < 2 {
        return Ok((true, 0.0));
    }
    let dt = traj.times[1] - traj.times[0];
    let mut worst = f64::NEG_INFINITY;
    for n in 0..traj.len() - 1 {
        let tol = dissipation_step_tolerance(dt, traj.hamiltonians[n]);
        let violation = traj.hamiltonians[n + 1] - traj.hamiltonians[n] - tol;
        if violation > worst {
            worst = violation;
        }
    }
    Ok((worst <= 0.0, worst))
}

/// Residual of the discrete energy-dissipation identity
/// (H(t_{n+1}) - H(t_n)) / dt = -B sum_i |V_i(t_{n+1})|^2, reported as the
/// worst absolute residual over the trajectory. Shrinks ~linearly in dt.
pub fn dissipation_identity_residual(traj: &TrajectoryRecord, params: &SystemParams) -> Result<f64> {
    require_noise_free(traj)?;
    let dt = traj.times[1] - traj.times[0];
    let mut worst: f64 = 0.0;
    for n in 0..traj.len() - 1 {
        let dh = (traj.hamiltonians[n + 1] - traj.hamiltonians[n]) / dt;
        let diss: f64 = traj.states[n + 1]
            .velocities
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            * params.damping;
        worst = worst.max((dh + diss).abs());
    }
    Ok(worst)
}

/// Terminal speed/force norms and the windowed equilibrium verdict: both norms
/// below tolerance and not growing over the final 10% of steps (first-half vs
/// second-half window maxima).
pub fn check_equilibrium(
    traj: &TrajectoryRecord,
    params: &SystemParams,
    v_tol: f64,
    f_tol: f64,
) -> Result<ConvergenceReport> {
    require_noise_free(traj)?;
    let (h_ok, worst) = check_dissipation(traj, params)?;
    let (floor_ok, min_obs, floor) = check_distance_floor(traj, params)?;

    let max_speed = |idx: usize| -> f64 {
        traj.states[idx].velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    };
    let max_force = |idx: usize| -> Result<f64> {
        Ok(total_forces(&traj.states[idx], params)?
            .iter()
            .map(|f| f.norm())
            .fold(0.0, f64::max))
    };
    let last = traj.len() - 1;
    let terminal_speed = max_speed(last);
    let terminal_force = max_force(last)?;

    let window = (traj.len() / 10).max(2).min(traj.len());
    let start = traj.len() - window;
    let mid = start + window / 2;
    let mut first_speed: f64 = 0.0;
    let mut second_speed: f64 = 0.0;
    let mut first_force: f64 = 0.0;
    let mut second_force: f64 = 0.0;
    for idx in start..traj.len() {
        let s = max_speed(idx);
        let f = max_force(idx)?;
        if idx < mid {
            first_speed = first_speed.max(s);
            first_force = first_force.max(f);
        } else {
            second_speed = second_speed.max(s);
            second_force = second_force.max(f);
        }
    }
    let decreasing = second_speed <= first_speed + 1e-12 && second_force <= first_force + 1e-12;
    let equilibrium_reached = terminal_speed < v_tol && terminal_force < f_tol && decreasing;

    Ok(ConvergenceReport {
        h_monotone: h_ok,
        worst_step_violation: worst,
        terminal_speed,
        terminal_force,
        distance_floor_ok: floor_ok,
        min_observed_distance: min_obs,
        distance_floor: floor,
        equilibrium_reached,
    })
}

/// Check that the recorded minimum pair distance never drops below
/// 0.9 x the energy-derived floor. Returns (pass, min observed, floor).
pub fn check_distance_floor(
    traj: &TrajectoryRecord,
    params: &SystemParams,
) -> Result<(bool, f64, f64)> {
    require_noise_free(traj)?;
    let floor = pairwise_distance_floor(traj.hamiltonians[0], params);
    let min_obs = traj.min_pair_distance.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((min_obs >= DISTANCE_FLOOR_SLACK * floor, min_obs, floor))
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyBalance {
    pub gap: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Compare the direct terminal-energy estimator against the integral-form
/// estimator over an ensemble of independent noisy trajectories.
///
/// The discrete right-hand side uses the dissipation term
/// B dt (V_{n+1} + V_n) . V_{n+1} / 2 and heating 3 N B u dt / (1 + B dt),
/// which makes the identity exact in expectation for the free particle under
/// the semi-implicit step; residuals with interactions are O(dt^2) per step.
pub fn check_energy_balance_stochastic(
    trajs: &[TrajectoryRecord],
    schedule: &TemperatureSchedule,
    params: &SystemParams,
) -> Result<EnergyBalance> {
    if trajs.len() < 30 {
        return Err(Error::StatisticalPower(format!(
            "energy-balance check needs at least 30 trajectories, got {}",
            trajs.len()
        )));
    }
    let heat = heating_coefficient(params.n_particles);
    let mut diffs = Vec::with_capacity(trajs.len());
    for traj in trajs {
        if traj.len() != schedule.n_steps() + 1 {
            return Err(Error::Shape(format!(
                "trajectory has {} points, schedule implies {}",
                traj.len(),
                schedule.n_steps() + 1
            )));
        }
        let direct = *traj.hamiltonians.last().unwrap();
        let mut rhs = traj.hamiltonians[0];
        if traj.len() > 1 {
            let dt = traj.times[1] - traj.times[0];
            let damp_inv = 1.0 / (1.0 + params.damping * dt);
            for n in 0..traj.len() - 1 {
                let diss: f64 = traj.states[n]
                    .velocities
                    .iter()
                    .zip(&traj.states[n + 1].velocities)
                    .map(|(v0, v1)| 0.5 * (v0 + v1).dot(v1))
                    .sum();
                rhs += -params.damping * dt * diss
                    + heat * params.damping * damp_inv * schedule.values()[n + 1] * dt;
            }
        }
        diffs.push(direct - rhs);
    }
    let m = diffs.len() as f64;
    let gap = diffs.iter().sum::<f64>() / m;
    let var = diffs.iter().map(|d| (d - gap).powi(2)).sum::<f64>() / (m - 1.0);
    let stderr = (var / m).sqrt();
    Ok(EnergyBalance { gap, stderr, pass: gap.abs() <= 3.0 * stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{rollout, rollout_noise_free, ForceModel, TimeGrid};
    use crate::noise::NoiseRealization;
    use crate::potential::{SystemState, Vec3};

    fn pair_state(r: f64) -> SystemState {
        SystemState::new(
            vec![Vec3::zeros(), Vec3::new(r, 0.0, 0.0)],
            vec![Vec3::zeros(); 2],
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_detected_on_relaxing_pair() {
        let p = SystemParams::new(2, 2.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(60.0, 6000).unwrap();
        let traj = rollout_noise_free(&pair_state(2.3), &grid, &p, ForceModel::LennardJones).unwrap();
        let report = check_equilibrium(&traj, &p, 1e-4, 1e-4).unwrap();
        assert!(report.h_monotone, "worst violation {}", report.worst_step_violation);
        assert!(report.distance_floor_ok);
        assert!(report.equilibrium_reached, "{report:?}");
        // the pair should settle at the potential minimum r = rm
        let d = (traj.terminal().positions[1] - traj.terminal().positions[0]).norm();
        assert!((d - 2.0).abs() < 1e-3, "settled at {d}");
    }

    #[test]
    fn dissipation_residual_shrinks_linearly_in_dt() {
        let p = SystemParams::new(3, 1.0, 1.0, 2.0).unwrap();
        let state = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(2.6, 0.3, 0.0), Vec3::new(0.4, 2.8, 0.2)],
            vec![Vec3::new(0.2, 0.0, 0.1), Vec3::zeros(), Vec3::new(0.0, -0.1, 0.0)],
        )
        .unwrap();
        let coarse = rollout_noise_free(
            &state,
            &TimeGrid::new(1.0, 100).unwrap(),
            &p,
            ForceModel::LennardJones,
        )
        .unwrap();
        let fine = rollout_noise_free(
            &state,
            &TimeGrid::new(1.0, 200).unwrap(),
            &p,
            ForceModel::LennardJones,
        )
        .unwrap();
        let rc = dissipation_identity_residual(&coarse, &p).unwrap();
        let rf = dissipation_identity_residual(&fine, &p).unwrap();
        let ratio = rc / rf;
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio} (coarse {rc}, fine {rf})");
    }

    #[test]
    fn distance_floor_reported_values() {
        let p = SystemParams::new(2, 1.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(5.0, 500).unwrap();
        let traj = rollout_noise_free(&pair_state(3.0), &grid, &p, ForceModel::LennardJones).unwrap();
        let (ok, min_obs, floor) = check_distance_floor(&traj, &p).unwrap();
        assert!(ok);
        assert!(min_obs <= 3.0 && min_obs > floor);
        assert!(floor > 0.0 && floor < 2.0);
    }

    #[test]
    fn single_particle_floor_is_vacuous() {
        let p = SystemParams::new(1, 1.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let s = SystemState::new(vec![Vec3::zeros()], vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let traj = rollout_noise_free(&s, &grid, &p, ForceModel::LennardJones).unwrap();
        let (ok, min_obs, _) = check_distance_floor(&traj, &p).unwrap();
        assert!(ok);
        assert!(min_obs.is_infinite());
    }

    #[test]
    fn noise_free_checks_reject_driven_trajectories() {
        let p = SystemParams::new(2, 1.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(0.5, 50).unwrap();
        let u = crate::schedule::TemperatureSchedule::constant(2.0, 50, 0.0, 50.0).unwrap();
        let noise = NoiseRealization::generate(3, 1, 50, 2, grid.dt()).unwrap();
        let traj =
            rollout(&pair_state(3.0), &u, &noise.path(0), &grid, &p, ForceModel::LennardJones)
                .unwrap();
        assert!(matches!(check_dissipation(&traj, &p), Err(Error::Misuse(_))));
        assert!(matches!(check_distance_floor(&traj, &p), Err(Error::Misuse(_))));
        assert!(matches!(check_equilibrium(&traj, &p, 1e-3, 1e-3), Err(Error::Misuse(_))));
    }

    #[test]
    fn energy_balance_needs_statistical_power() {
        let p = SystemParams::new(2, 1.0, 1.0, 2.0).unwrap();
        let u = crate::schedule::TemperatureSchedule::constant(2.0, 10, 0.0, 50.0).unwrap();
        match check_energy_balance_stochastic(&[], &u, &p) {
            Err(Error::StatisticalPower(_)) => {}
            other => panic!("expected statistical-power error, got {other:?}"),
        }
    }

    #[test]
    fn energy_balance_rejects_shape_mismatch() {
        let p = SystemParams::new(2, 1.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(0.5, 50).unwrap();
        let u_run = crate::schedule::TemperatureSchedule::constant(2.0, 50, 0.0, 50.0).unwrap();
        let u_wrong = crate::schedule::TemperatureSchedule::constant(2.0, 10, 0.0, 50.0).unwrap();
        let noise = NoiseRealization::generate(9, 30, 50, 2, grid.dt()).unwrap();
        let trajs: Vec<_> = (0..30)
            .map(|k| {
                rollout(&pair_state(3.0), &u_run, &noise.path(k), &grid, &p, ForceModel::LennardJones)
                    .unwrap()
            })
            .collect();
        assert!(matches!(
            check_energy_balance_stochastic(&trajs, &u_wrong, &p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn energy_balance_free_particles_pass() {
        // forces disabled: the discrete identity is exact in expectation, so
        // the gap stays within 3 standard errors
        let p = SystemParams::new(3, 1.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(2.0, 100).unwrap();
        let u = crate::schedule::TemperatureSchedule::constant(2.0, 100, 0.0, 50.0).unwrap();
        let noise = NoiseRealization::generate(17, 100, 100, 3, grid.dt()).unwrap();
        let state = SystemState::new(
            vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0), Vec3::new(0.0, 5.0, 0.0)],
            vec![Vec3::zeros(); 3],
        )
        .unwrap();
        let trajs: Vec<_> = (0..100)
            .map(|k| {
                rollout(&state, &u, &noise.path(k), &grid, &p, ForceModel::Disabled).unwrap()
            })
            .collect();
        let balance = check_energy_balance_stochastic(&trajs, &u, &p).unwrap();
        assert!(balance.pass, "gap {} stderr {}", balance.gap, balance.stderr);
        assert!(balance.stderr > 0.0);
    }
}
