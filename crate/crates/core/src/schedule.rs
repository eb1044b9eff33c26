//! Temperature schedules: box bounds, the optional non-increasing constraint,
//! exact Euclidean projection (pool-adjacent-violators plus clamping), and the
//! Newton's-law-of-cooling baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::TimeGrid;

/// Control values u(t_0..t_{N_T}) on a uniform grid. Entry 0 is reporting-only;
/// entries 1..=N_T drive steps 0..N_T-1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    values: Vec<f64>,
    u_min: f64,
    u_max: f64,
    monotone_nonincreasing: bool,
}

impl TemperatureSchedule {
    pub fn new(values: Vec<f64>, u_min: f64, u_max: f64, monotone: bool) -> Result<Self> {
        if u_min > u_max {
            return Err(Error::Config(format!("u_min {u_min} > u_max {u_max}")));
        }
        if values.is_empty() {
            return Err(Error::Config("schedule must contain at least one value".into()));
        }
        for (n, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < u_min || v > u_max {
                return Err(Error::Config(format!(
                    "schedule value u(t_{n}) = {v} outside [{u_min}, {u_max}]"
                )));
            }
        }
        if monotone {
            for n in 0..values.len() - 1 {
                if values[n + 1] > values[n] {
                    return Err(Error::Config(format!(
                        "schedule not non-increasing at step {n}: {} -> {}",
                        values[n],
                        values[n + 1]
                    )));
                }
            }
        }
        Ok(Self { values, u_min, u_max, monotone_nonincreasing: monotone })
    }

    pub fn constant(u: f64, n_steps: usize, u_min: f64, u_max: f64) -> Result<Self> {
        Self::new(vec![u; n_steps + 1], u_min, u_max, true)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }

    pub fn monotone_nonincreasing(&self) -> bool {
        self.monotone_nonincreasing
    }

    /// Sum of the control values that actually drive steps (n = 1..=N_T).
    pub fn driving_sum(&self) -> f64 {
        self.values[1..].iter().sum()
    }
}

/// Euclidean projection onto non-increasing sequences (antitonic regression
/// with unit weights), by pool-adjacent-violators.
fn pava_nonincreasing(v: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        let mut mean = x;
        let mut count = 1usize;
        while let Some(&(m, c)) = blocks.last() {
            if m < mean {
                blocks.pop();
                mean = (m * c as f64 + mean * count as f64) / (c + count) as f64;
                count += c;
            } else {
                break;
            }
        }
        blocks.push((mean, count));
    }
    let mut out = Vec::with_capacity(v.len());
    for (m, c) in blocks {
        out.extend(std::iter::repeat(m).take(c));
    }
    out
}

/// Euclidean projection onto the feasible set: box bounds intersected with
/// (optionally) the non-increasing cone. PAVA followed by clamping is exact
/// for uniform bounds.
pub fn project_feasible(
    u_raw: &[f64],
    u_min: f64,
    u_max: f64,
    monotone: bool,
) -> Result<TemperatureSchedule> {
    if u_min > u_max {
        return Err(Error::Config(format!("u_min {u_min} > u_max {u_max}")));
    }
    if u_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("projection input contains non-finite entries".into()));
    }
    let mut vals = if monotone { pava_nonincreasing(u_raw) } else { u_raw.to_vec() };
    for v in &mut vals {
        *v = v.clamp(u_min, u_max);
    }
    TemperatureSchedule::new(vals, u_min, u_max, monotone)
}

/// Newton's law of cooling: u(t) = u_env + (u0 - u_env) exp(-k t).
pub fn newton_cooling_schedule(
    u0: f64,
    u_env: f64,
    rate_k: f64,
    grid: &TimeGrid,
) -> Result<TemperatureSchedule> {
    if !(rate_k.is_finite() && rate_k > 0.0) {
        return Err(Error::Config(format!("cooling rate must be > 0, got {rate_k}")));
    }
    if !(u0.is_finite() && u_env.is_finite() && u0 >= u_env && u_env >= 0.0) {
        return Err(Error::Config(format!("cooling requires u0 >= u_env >= 0, got u0 = {u0}, u_env = {u_env}")));
    }
    let values: Vec<f64> = (0..=grid.n_steps())
        .map(|n| u_env + (u0 - u_env) * (-rate_k * grid.time(n)).exp())
        .collect();
    TemperatureSchedule::new(values, u_env, u0, true)
}

/// Default cooling rate: u(T) lands at u_env + 1% of the initial gap.
pub fn default_cooling_rate(horizon: f64) -> f64 {
    (1.0 / 0.01f64).ln() / horizon
}

/// Clamp a schedule into new bounds, preserving the monotone flag.
pub fn clip_to_bounds(
    schedule: &TemperatureSchedule,
    u_min: f64,
    u_max: f64,
) -> Result<TemperatureSchedule> {
    let vals: Vec<f64> = schedule.values().iter().map(|v| v.clamp(u_min, u_max)).collect();
    TemperatureSchedule::new(vals, u_min, u_max, schedule.monotone_nonincreasing())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn feasible_input_is_unchanged() {
        let v = vec![5.0, 4.0, 4.0, 1.0];
        let s = project_feasible(&v, 0.0, 50.0, true).unwrap();
        assert_eq!(s.values(), &v[..]);
    }

    #[test]
    fn two_point_violation_pools_to_mean() {
        // brute-force 2-variable oracle: minimize (a-1)^2 + (b-3)^2 s.t. b <= a
        // has solution a = b = 2
        let s = project_feasible(&[1.0, 3.0], 0.0, 50.0, true).unwrap();
        assert_eq!(s.values(), &[2.0, 2.0]);
    }

    #[test]
    fn clamping_after_pooling() {
        let s = project_feasible(&[60.0, 40.0], 0.0, 50.0, true).unwrap();
        assert_eq!(s.values(), &[50.0, 40.0]);
    }

    #[test]
    fn infeasible_bounds_rejected() {
        assert!(project_feasible(&[1.0], 5.0, 1.0, false).is_err());
    }

    fn grid_distance_oracle(z: &[f64], u_min: f64, u_max: f64, levels: usize) -> f64 {
        // best distance from z to any non-increasing sequence on a value grid
        fn recurse(
            z: &[f64],
            idx: usize,
            max_level: usize,
            grid: &[f64],
            acc: f64,
            best: &mut f64,
        ) {
            if idx == z.len() {
                *best = best.min(acc);
                return;
            }
            for lvl in (0..=max_level).rev() {
                let d = acc + (z[idx] - grid[lvl]).powi(2);
                if d < *best {
                    recurse(z, idx + 1, lvl, grid, d, best);
                }
            }
        }
        let grid: Vec<f64> = (0..levels)
            .map(|i| u_min + (u_max - u_min) * i as f64 / (levels - 1) as f64)
            .collect();
        let mut best = f64::INFINITY;
        recurse(z, 0, levels - 1, &grid, 0.0, &mut best);
        best.sqrt()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn projection_beats_every_grid_point(
            raw in proptest::collection::vec(-10.0..60.0f64, 2..7),
        ) {
            let s = project_feasible(&raw, 0.0, 50.0, true).unwrap();
            let ours: f64 = s
                .values()
                .iter()
                .zip(&raw)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let grid_best = grid_distance_oracle(&raw, 0.0, 50.0, 16);
            prop_assert!(ours <= grid_best + 1e-8, "ours {ours} grid best {grid_best}");
        }

        #[test]
        fn projection_output_is_feasible(
            raw in proptest::collection::vec(-100.0..100.0f64, 1..12),
            monotone in proptest::bool::ANY,
        ) {
            let s = project_feasible(&raw, 0.0, 50.0, monotone).unwrap();
            // TemperatureSchedule::new re-validates feasibility exactly
            prop_assert_eq!(s.n_steps() + 1, raw.len());
        }
    }

    #[test]
    fn newton_cooling_values() {
        let grid = TimeGrid::new(10.0, 100).unwrap();
        let rate = (100.0f64).ln() / 10.0;
        let s = newton_cooling_schedule(50.0, 0.0, rate, &grid).unwrap();
        assert_abs_diff_eq!(s.values()[0], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[100], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(rate, 0.4605170185988091, epsilon = 1e-15);
        // monotone by construction
        assert!(s.monotone_nonincreasing());
    }

    #[test]
    fn newton_cooling_decays_to_environment() {
        let grid = TimeGrid::new(10.0, 10).unwrap();
        let s = newton_cooling_schedule(50.0, 1.0, 5.0, &grid).unwrap();
        assert_abs_diff_eq!(*s.values().last().unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn newton_cooling_rejects_bad_rate() {
        let grid = TimeGrid::new(10.0, 10).unwrap();
        assert!(newton_cooling_schedule(50.0, 0.0, 0.0, &grid).is_err());
        assert!(newton_cooling_schedule(50.0, 0.0, -1.0, &grid).is_err());
    }
}
