//! Flat `key = value` experiment configuration with dotted namespaces.
//!
//! Unknown keys and malformed values are reported with the offending line and
//! field. `canonical()` re-serializes every key (including defaults) in sorted
//! order, so parse -> serialize is idempotent on the canonical form.

use std::fmt::Write as _;
use std::path::PathBuf;

use assembly_core::init::{InitialDistribution, VelocityDist};
use assembly_core::integrate::{ForceModel, TimeGrid};
use assembly_core::optimize::{ObjectiveForm, SolverOptions};
use assembly_core::potential::SystemParams;
use assembly_core::schedule::default_cooling_rate;
use assembly_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system_n: usize,
    pub system_b: f64,
    pub system_forces: bool,
    pub lj_epsilon: f64,
    pub lj_rmin: f64,
    pub grid_horizon: f64,
    pub grid_steps: usize,
    pub init_box: (f64, f64),
    pub init_vel_dist: String,
    pub init_vel_variance: f64,
    pub init_vel_lo: f64,
    pub init_vel_hi: f64,
    /// 0 means the sampler default (0.1 rm).
    pub init_min_sep: f64,
    /// Per-step kinetic-energy resolution cap for optimizer training and
    /// holdout evaluation; 0 disables the check.
    pub limits_kinetic_cap: f64,
    pub control_umin: f64,
    pub control_umax: f64,
    pub control_monotone: bool,
    pub schedule_source: String,
    pub schedule_constant: f64,
    pub schedule_file: String,
    pub newton_u0: f64,
    pub newton_u_env: f64,
    /// 0 means "choose automatically from the horizon".
    pub newton_rate: f64,
    pub samples_train: usize,
    pub samples_holdout: usize,
    pub solver_max_iters: usize,
    pub solver_tol: f64,
    pub solver_step0: f64,
    /// `telescoped` (energy-balance form) or `terminal` (direct H(T) mean).
    pub solver_objective: String,
    pub seed_train: u64,
    pub seed_holdout: u64,
    pub verify_v_tol: f64,
    pub verify_f_tol: f64,
    pub compare_a: String,
    pub compare_b: String,
    pub compare_expect: String,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Defaults mirror the N = 30 annealing experiment.
    fn default() -> Self {
        Self {
            system_n: 30,
            system_b: 2.0,
            system_forces: true,
            lj_epsilon: 3.0,
            lj_rmin: 2.0,
            grid_horizon: 10.0,
            grid_steps: 100,
            init_box: (0.0, 10.0),
            init_vel_dist: "gaussian".into(),
            init_vel_variance: 4.0,
            init_vel_lo: 0.0,
            init_vel_hi: 1.0,
            init_min_sep: 0.0,
            limits_kinetic_cap: 0.0,
            control_umin: 0.0,
            control_umax: 50.0,
            control_monotone: true,
            schedule_source: "optimize".into(),
            schedule_constant: 0.0,
            schedule_file: String::new(),
            newton_u0: 50.0,
            newton_u_env: 0.0,
            newton_rate: 0.0,
            samples_train: 100,
            samples_holdout: 200,
            solver_max_iters: 500,
            solver_tol: 1e-6,
            solver_step0: 1.0,
            solver_objective: "telescoped".into(),
            seed_train: 1,
            seed_holdout: 2,
            verify_v_tol: 1e-4,
            verify_f_tol: 1e-3,
            compare_a: "optimize".into(),
            compare_b: "newton".into(),
            compare_expect: "none".into(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value.parse().map_err(|_| bad(key, value, "a number"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(bad(key, value, "a boolean (true/false)")),
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override (the `--set` flag).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "system.n" => self.system_n = parse_usize(key, value)?,
            "system.b" => self.system_b = parse_f64(key, value)?,
            "system.forces" => self.system_forces = parse_bool(key, value)?,
            "lj.epsilon" => self.lj_epsilon = parse_f64(key, value)?,
            "lj.rmin" => self.lj_rmin = parse_f64(key, value)?,
            "grid.horizon" => self.grid_horizon = parse_f64(key, value)?,
            "grid.steps" => self.grid_steps = parse_usize(key, value)?,
            "init.box" => {
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| bad(key, value, "`lo,hi`"))?;
                self.init_box = (parse_f64(key, lo.trim())?, parse_f64(key, hi.trim())?);
            }
            "init.vel_dist" => match value {
                "gaussian" | "uniform" => self.init_vel_dist = value.into(),
                _ => return Err(bad(key, value, "`gaussian` or `uniform`")),
            },
            "init.vel_variance" => self.init_vel_variance = parse_f64(key, value)?,
            "init.vel_lo" => self.init_vel_lo = parse_f64(key, value)?,
            "init.vel_hi" => self.init_vel_hi = parse_f64(key, value)?,
            "init.min_sep" => self.init_min_sep = parse_f64(key, value)?,
            "limits.kinetic_cap" => self.limits_kinetic_cap = parse_f64(key, value)?,
            "control.umin" => self.control_umin = parse_f64(key, value)?,
            "control.umax" => self.control_umax = parse_f64(key, value)?,
            "control.monotone" => self.control_monotone = parse_bool(key, value)?,
            "schedule.source" => match value {
                "optimize" | "newton" | "constant" | "file" | "zero" => {
                    self.schedule_source = value.into()
                }
                _ => {
                    return Err(bad(
                        key,
                        value,
                        "`optimize`, `newton`, `constant`, `file`, or `zero`",
                    ))
                }
            },
            "schedule.constant" => self.schedule_constant = parse_f64(key, value)?,
            "schedule.file" => self.schedule_file = value.into(),
            "newton.u0" => self.newton_u0 = parse_f64(key, value)?,
            "newton.u_env" => self.newton_u_env = parse_f64(key, value)?,
            "newton.rate" => self.newton_rate = parse_f64(key, value)?,
            "samples.train" => self.samples_train = parse_usize(key, value)?,
            "samples.holdout" => self.samples_holdout = parse_usize(key, value)?,
            "solver.max_iters" => self.solver_max_iters = parse_usize(key, value)?,
            "solver.tol" => self.solver_tol = parse_f64(key, value)?,
            "solver.step0" => self.solver_step0 = parse_f64(key, value)?,
            "solver.objective" => match value {
                "telescoped" | "terminal" => self.solver_objective = value.into(),
                _ => return Err(bad(key, value, "`telescoped` or `terminal`")),
            },
            "seed.train" => self.seed_train = parse_u64(key, value)?,
            "seed.holdout" => self.seed_holdout = parse_u64(key, value)?,
            "verify.v_tol" => self.verify_v_tol = parse_f64(key, value)?,
            "verify.f_tol" => self.verify_f_tol = parse_f64(key, value)?,
            "compare.a" | "compare.b" => {
                match value {
                    "optimize" | "newton" | "constant" | "file" | "zero" => {}
                    _ => {
                        return Err(bad(
                            key,
                            value,
                            "`optimize`, `newton`, `constant`, `file`, or `zero`",
                        ))
                    }
                }
                if key == "compare.a" {
                    self.compare_a = value.into();
                } else {
                    self.compare_b = value.into();
                }
            }
            "compare.expect" => match value {
                "none" | "a_le_b" => self.compare_expect = value.into(),
                _ => return Err(bad(key, value, "`none` or `a_le_b`")),
            },
            "out.dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.system_n == 0 {
            return err("system.n must be >= 1".into());
        }
        if !(self.system_b.is_finite() && self.system_b > 0.0) {
            return err(format!("system.b must be > 0, got {}", self.system_b));
        }
        if !(self.lj_epsilon > 0.0 && self.lj_rmin > 0.0) {
            return err("lj.epsilon and lj.rmin must be > 0".into());
        }
        if !(self.grid_horizon.is_finite() && self.grid_horizon >= 0.0) {
            return err(format!("grid.horizon must be >= 0, got {}", self.grid_horizon));
        }
        if self.grid_horizon > 0.0 && self.grid_steps == 0 {
            return err("grid.steps must be >= 1 when grid.horizon > 0".into());
        }
        if self.init_box.0 >= self.init_box.1 {
            return err(format!(
                "init.box must satisfy lo < hi, got {},{}",
                self.init_box.0, self.init_box.1
            ));
        }
        if self.init_vel_variance < 0.0 {
            return err("init.vel_variance must be >= 0".into());
        }
        if self.init_vel_lo > self.init_vel_hi {
            return err("init.vel_lo must be <= init.vel_hi".into());
        }
        if !(self.init_min_sep.is_finite() && self.init_min_sep >= 0.0) {
            return err("init.min_sep must be >= 0 (0 selects the sampler default)".into());
        }
        if !(self.limits_kinetic_cap.is_finite() && self.limits_kinetic_cap >= 0.0) {
            return err("limits.kinetic_cap must be >= 0 (0 disables the check)".into());
        }
        if !(self.control_umin >= 0.0 && self.control_umin <= self.control_umax) {
            return err(format!(
                "control bounds must satisfy 0 <= umin <= umax, got {} and {}",
                self.control_umin, self.control_umax
            ));
        }
        if self.schedule_source == "file" && self.schedule_file.is_empty() {
            return err("schedule.source = file requires schedule.file".into());
        }
        if self.newton_rate < 0.0 {
            return err("newton.rate must be >= 0 (0 selects the automatic rate)".into());
        }
        if self.newton_u0 < self.newton_u_env || self.newton_u_env < 0.0 {
            return err("newton temperatures must satisfy u0 >= u_env >= 0".into());
        }
        if self.samples_train == 0 || self.samples_holdout == 0 {
            return err("samples.train and samples.holdout must be >= 1".into());
        }
        if self.solver_max_iters == 0 || self.solver_tol <= 0.0 || self.solver_step0 <= 0.0 {
            return err("solver options must be positive".into());
        }
        if self.seed_train == self.seed_holdout {
            return err(format!(
                "seed.train and seed.holdout must differ (both are {})",
                self.seed_train
            ));
        }
        if self.verify_v_tol <= 0.0 || self.verify_f_tol <= 0.0 {
            return err("verify tolerances must be > 0".into());
        }
        Ok(())
    }

    /// Canonical serialization: every key, sorted, one per line.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("compare.a", self.compare_a.clone());
        kv("compare.b", self.compare_b.clone());
        kv("compare.expect", self.compare_expect.clone());
        kv("control.monotone", self.control_monotone.to_string());
        kv("control.umax", self.control_umax.to_string());
        kv("control.umin", self.control_umin.to_string());
        kv("grid.horizon", self.grid_horizon.to_string());
        kv("grid.steps", self.grid_steps.to_string());
        kv("init.box", format!("{},{}", self.init_box.0, self.init_box.1));
        kv("init.min_sep", self.init_min_sep.to_string());
        kv("init.vel_dist", self.init_vel_dist.clone());
        kv("init.vel_hi", self.init_vel_hi.to_string());
        kv("init.vel_lo", self.init_vel_lo.to_string());
        kv("init.vel_variance", self.init_vel_variance.to_string());
        kv("limits.kinetic_cap", self.limits_kinetic_cap.to_string());
        kv("lj.epsilon", self.lj_epsilon.to_string());
        kv("lj.rmin", self.lj_rmin.to_string());
        kv("newton.rate", self.newton_rate.to_string());
        kv("newton.u0", self.newton_u0.to_string());
        kv("newton.u_env", self.newton_u_env.to_string());
        kv("out.dir", self.out_dir.display().to_string());
        kv("samples.holdout", self.samples_holdout.to_string());
        kv("samples.train", self.samples_train.to_string());
        kv("schedule.constant", self.schedule_constant.to_string());
        kv("schedule.file", self.schedule_file.clone());
        kv("schedule.source", self.schedule_source.clone());
        kv("seed.holdout", self.seed_holdout.to_string());
        kv("seed.train", self.seed_train.to_string());
        kv("solver.max_iters", self.solver_max_iters.to_string());
        kv("solver.objective", self.solver_objective.clone());
        kv("solver.step0", self.solver_step0.to_string());
        kv("solver.tol", self.solver_tol.to_string());
        kv("system.b", self.system_b.to_string());
        kv("system.forces", self.system_forces.to_string());
        kv("system.n", self.system_n.to_string());
        kv("verify.f_tol", self.verify_f_tol.to_string());
        kv("verify.v_tol", self.verify_v_tol.to_string());
        s
    }

    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::new(self.system_n, self.system_b, self.lj_epsilon, self.lj_rmin)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid_horizon, self.grid_steps)
    }

    pub fn force_model(&self) -> ForceModel {
        if self.system_forces {
            ForceModel::LennardJones
        } else {
            ForceModel::Disabled
        }
    }

    pub fn initial_distribution(&self) -> Result<InitialDistribution> {
        let velocity = match self.init_vel_dist.as_str() {
            "uniform" => VelocityDist::Uniform { lo: self.init_vel_lo, hi: self.init_vel_hi },
            _ => VelocityDist::Gaussian { variance: self.init_vel_variance },
        };
        let dist = InitialDistribution::new(self.init_box.0, self.init_box.1, velocity)?;
        if self.init_min_sep > 0.0 {
            dist.with_min_sep(self.init_min_sep)
        } else {
            Ok(dist)
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.solver_max_iters,
            tol: self.solver_tol,
            step0: self.solver_step0,
            objective: if self.solver_objective == "terminal" {
                ObjectiveForm::Terminal
            } else {
                ObjectiveForm::Telescoped
            },
        }
    }

    /// Kinetic-energy resolution cap, with 0 meaning "disabled".
    pub fn kinetic_cap(&self) -> Option<f64> {
        (self.limits_kinetic_cap > 0.0).then_some(self.limits_kinetic_cap)
    }

    /// Newton-cooling rate, with 0 meaning "derive from the horizon".
    pub fn effective_newton_rate(&self) -> f64 {
        if self.newton_rate > 0.0 {
            self.newton_rate
        } else {
            default_cooling_rate(self.grid_horizon.max(f64::MIN_POSITIVE))
        }
    }
}
