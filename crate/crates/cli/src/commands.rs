//! Implementations of the `simulate`, `optimize`, `compare`, and `verify`
//! subcommands. Each returns `Ok(true)` on success, `Ok(false)` when a check
//! or comparison fails (exit 1), and `Err` for configuration/runtime errors.

use std::path::PathBuf;

use assembly_core::init::{sample_initial_state, sample_initial_states};
use assembly_core::integrate::{rollout, rollout_noise_free, TrajectoryRecord};
use assembly_core::noise::NoiseRealization;
use assembly_core::optimize::{
    evaluate_holdout, holdout_rollouts, optimize_schedule, OptimizationReport, SaaProblem,
};
use assembly_core::report::{
    line_svg, plot_csv, schedule_csv, schedule_from_csv, summary_csv, trajectory_csv, write_json,
    write_text,
};
use assembly_core::schedule::{clip_to_bounds, newton_cooling_schedule, TemperatureSchedule};
use assembly_core::verify::check_equilibrium;
use assembly_core::{Error, Result};

use crate::config::ExperimentConfig;

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn persist_config(cfg: &ExperimentConfig) -> Result<()> {
    write_text(&out_path(cfg, "config.txt"), &cfg.canonical())
}

fn grid_times(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let grid = cfg.grid()?;
    Ok((0..=grid.n_steps()).map(|n| grid.time(n)).collect())
}

fn build_problem(cfg: &ExperimentConfig) -> Result<SaaProblem> {
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let dist = cfg.initial_distribution()?;
    let initials = sample_initial_states(&dist, &params, cfg.seed_train, cfg.samples_train)?;
    let noise = NoiseRealization::generate(
        cfg.seed_train,
        cfg.samples_train,
        grid.n_steps(),
        params.n_particles,
        grid.dt(),
    )?;
    let problem = SaaProblem::new(
        params,
        grid,
        initials,
        noise,
        cfg.control_umin,
        cfg.control_umax,
        cfg.control_monotone,
        cfg.force_model(),
    )?;
    match cfg.kinetic_cap() {
        Some(cap) => problem.with_kinetic_cap(cap),
        None => Ok(problem),
    }
}

fn newton_schedule(cfg: &ExperimentConfig) -> Result<TemperatureSchedule> {
    let grid = cfg.grid()?;
    let s = newton_cooling_schedule(cfg.newton_u0, cfg.newton_u_env, cfg.effective_newton_rate(), &grid)?;
    clip_to_bounds(&s, cfg.control_umin, cfg.control_umax)
}

fn run_optimizer(cfg: &ExperimentConfig) -> Result<OptimizationReport> {
    let problem = build_problem(cfg)?;
    let init = newton_schedule(cfg)?;
    optimize_schedule(&problem, &init, &cfg.solver_options())
}

/// Resolve one schedule source name to a concrete schedule. `optimize` runs
/// the full solver; `file` reads the schedule CSV named by `schedule.file`.
pub fn resolve_schedule(cfg: &ExperimentConfig, source: &str) -> Result<TemperatureSchedule> {
    let grid = cfg.grid()?;
    let schedule = match source {
        "optimize" => run_optimizer(cfg)?.schedule,
        "newton" => newton_schedule(cfg)?,
        "constant" => TemperatureSchedule::constant(
            cfg.schedule_constant,
            grid.n_steps(),
            cfg.control_umin,
            cfg.control_umax,
        )?,
        "zero" => TemperatureSchedule::constant(
            0.0,
            grid.n_steps(),
            cfg.control_umin,
            cfg.control_umax,
        )?,
        "file" => {
            let text = std::fs::read_to_string(&cfg.schedule_file)?;
            schedule_from_csv(&text, cfg.control_umin, cfg.control_umax, cfg.control_monotone)?
        }
        other => return Err(Error::Config(format!("unknown schedule source `{other}`"))),
    };
    if schedule.n_steps() != grid.n_steps() {
        return Err(Error::Config(format!(
            "schedule from `{source}` has {} steps but the grid has {}",
            schedule.n_steps(),
            grid.n_steps()
        )));
    }
    Ok(schedule)
}

fn simulate_trajectory(
    cfg: &ExperimentConfig,
    schedule: &TemperatureSchedule,
) -> Result<TrajectoryRecord> {
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let dist = cfg.initial_distribution()?;
    let state = sample_initial_state(&dist, &params, cfg.seed_train)?;
    if schedule.driving_sum() == 0.0 {
        rollout_noise_free(&state, &grid, &params, cfg.force_model())
    } else {
        let noise =
            NoiseRealization::generate(cfg.seed_train, 1, grid.n_steps(), params.n_particles, grid.dt())?;
        rollout(&state, schedule, &noise.path(0), &grid, &params, cfg.force_model())
    }
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<bool> {
    let schedule = resolve_schedule(cfg, &cfg.schedule_source)?;
    let traj = simulate_trajectory(cfg, &schedule)?;
    persist_config(cfg)?;
    write_text(&out_path(cfg, "trajectory.csv"), &trajectory_csv(&traj))?;
    write_text(&out_path(cfg, "summary.csv"), &summary_csv(&traj, Some(&schedule)))?;
    let energy: Vec<(f64, f64)> =
        traj.times.iter().copied().zip(traj.hamiltonians.iter().copied()).collect();
    write_text(&out_path(cfg, "energy.csv"), &plot_csv("time,hamiltonian", &energy))?;
    write_text(
        &out_path(cfg, "energy.svg"),
        &line_svg("Hamiltonian over time", &[("H(t)".into(), energy)]),
    )?;
    println!(
        "simulate: {} steps, H(0) = {}, H(T) = {}",
        traj.len() - 1,
        traj.hamiltonians.first().unwrap(),
        traj.hamiltonians.last().unwrap()
    );
    println!("artifacts written to {}", cfg.out_dir.display());
    Ok(true)
}

pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<bool> {
    if cfg.schedule_source != "optimize" {
        return Err(Error::Config(format!(
            "optimize requires schedule.source = optimize, got `{}`",
            cfg.schedule_source
        )));
    }
    let mut report = run_optimizer(cfg)?;
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let dist = cfg.initial_distribution()?;
    report.holdout = Some(evaluate_holdout(
        &report.schedule,
        &params,
        &grid,
        &dist,
        cfg.force_model(),
        cfg.samples_holdout,
        cfg.seed_holdout,
        cfg.kinetic_cap(),
    )?);
    persist_config(cfg)?;
    let times = grid_times(cfg)?;
    write_text(&out_path(cfg, "schedule.csv"), &schedule_csv(&report.schedule, &times))?;
    let curve: Vec<(f64, f64)> =
        times.iter().copied().zip(report.schedule.values().iter().copied()).collect();
    write_text(
        &out_path(cfg, "schedule.svg"),
        &line_svg("Optimized temperature schedule", &[("u(t)".into(), curve)]),
    )?;
    write_json(&out_path(cfg, "report.json"), &report)?;
    let holdout = report.holdout.as_ref().unwrap();
    println!(
        "optimize: {} iterations, converged = {}, final objective = {}",
        report.iterations,
        report.converged,
        report.objective_history.last().unwrap()
    );
    println!(
        "holdout mean H(T) = {} (stderr {}, {} paths)",
        holdout.mean, holdout.stderr, holdout.n_samples
    );
    println!("artifacts written to {}", cfg.out_dir.display());
    Ok(true)
}

fn mean_energy_curve(trajs: &[&TrajectoryRecord]) -> Vec<f64> {
    let steps = trajs[0].len();
    let mut mean = vec![0.0; steps];
    for t in trajs {
        for (acc, h) in mean.iter_mut().zip(&t.hamiltonians) {
            *acc += h;
        }
    }
    for v in &mut mean {
        *v /= trajs.len() as f64;
    }
    mean
}

fn terminal_stats(vals: &[f64]) -> (f64, f64) {
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<bool> {
    let sched_a = resolve_schedule(cfg, &cfg.compare_a)?;
    let sched_b = resolve_schedule(cfg, &cfg.compare_b)?;
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let dist = cfg.initial_distribution()?;
    let cap = cfg.kinetic_cap();
    // common random numbers: identical holdout initials and noise for both
    let trajs_a = holdout_rollouts(
        &sched_a, &params, &grid, &dist, cfg.force_model(), cfg.samples_holdout, cfg.seed_holdout,
        cap,
    )?;
    let trajs_b = holdout_rollouts(
        &sched_b, &params, &grid, &dist, cfg.force_model(), cfg.samples_holdout, cfg.seed_holdout,
        cap,
    )?;
    // statistics are paired, so they run over paths both schedules resolve
    let pairs: Vec<(&TrajectoryRecord, &TrajectoryRecord)> = trajs_a
        .iter()
        .zip(&trajs_b)
        .filter_map(|(a, b)| Some((a.as_ref()?, b.as_ref()?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Misuse(format!(
            "no holdout path is resolved under both schedules ({} requested)",
            cfg.samples_holdout
        )));
    }
    let n_excluded = cfg.samples_holdout - pairs.len();
    let term_a: Vec<f64> =
        pairs.iter().map(|(a, _)| *a.hamiltonians.last().unwrap()).collect();
    let term_b: Vec<f64> =
        pairs.iter().map(|(_, b)| *b.hamiltonians.last().unwrap()).collect();
    let (mean_a, se_a) = terminal_stats(&term_a);
    let (mean_b, se_b) = terminal_stats(&term_b);
    let diffs: Vec<f64> = term_a.iter().zip(&term_b).map(|(a, b)| a - b).collect();
    let (diff_mean, diff_se) = terminal_stats(&diffs);

    persist_config(cfg)?;
    let table = format!(
        "schedule,mean_terminal_h,stderr,paths,excluded\n\
         a_{},{},{},{},{}\nb_{},{},{},{},{}\na_minus_b,{},{},{},{}\n",
        cfg.compare_a, mean_a, se_a, pairs.len(), n_excluded,
        cfg.compare_b, mean_b, se_b, pairs.len(), n_excluded,
        diff_mean, diff_se, pairs.len(), n_excluded
    );
    write_text(&out_path(cfg, "comparison.csv"), &table)?;
    let times = grid_times(cfg)?;
    let resolved_a: Vec<&TrajectoryRecord> = pairs.iter().map(|(a, _)| *a).collect();
    let resolved_b: Vec<&TrajectoryRecord> = pairs.iter().map(|(_, b)| *b).collect();
    let curve_a = mean_energy_curve(&resolved_a);
    let curve_b = mean_energy_curve(&resolved_b);
    let mut plot = String::from("time,mean_h_a,mean_h_b\n");
    for n in 0..times.len() {
        plot.push_str(&format!("{},{},{}\n", times[n], curve_a[n], curve_b[n]));
    }
    write_text(&out_path(cfg, "comparison_curves.csv"), &plot)?;
    write_text(
        &out_path(cfg, "comparison.svg"),
        &line_svg(
            "Mean Hamiltonian over time",
            &[
                (format!("a: {}", cfg.compare_a), times.iter().copied().zip(curve_a).collect()),
                (format!("b: {}", cfg.compare_b), times.iter().copied().zip(curve_b).collect()),
            ],
        ),
    )?;
    println!("compare: a = {} mean H(T) = {mean_a} (stderr {se_a})", cfg.compare_a);
    println!("compare: b = {} mean H(T) = {mean_b} (stderr {se_b})", cfg.compare_b);
    println!(
        "paired difference a - b = {diff_mean} (stderr {diff_se}, {} paths, {} excluded)",
        pairs.len(),
        n_excluded
    );
    println!("artifacts written to {}", cfg.out_dir.display());
    if cfg.compare_expect == "a_le_b" && diff_mean > -diff_se {
        eprintln!(
            "comparison failed: expected mean H(T) of `a` at least one paired stderr below `b`"
        );
        return Ok(false);
    }
    Ok(true)
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<bool> {
    let schedule = resolve_schedule(cfg, &cfg.schedule_source)?;
    if schedule.driving_sum() > 0.0 {
        return Err(Error::Misuse(
            "verify applies to noise-free runs; set schedule.source = zero".into(),
        ));
    }
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let dist = cfg.initial_distribution()?;
    let state = sample_initial_state(&dist, &params, cfg.seed_train)?;
    let traj = rollout_noise_free(&state, &grid, &params, cfg.force_model())?;
    let report = check_equilibrium(&traj, &params, cfg.verify_v_tol, cfg.verify_f_tol)?;
    persist_config(cfg)?;
    write_json(&out_path(cfg, "verify.json"), &report)?;
    write_text(&out_path(cfg, "summary.csv"), &summary_csv(&traj, Some(&schedule)))?;

    let line = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    line(
        "dissipation",
        report.h_monotone,
        if report.h_monotone {
            format!("H non-increasing (worst slack {})", -report.worst_step_violation)
        } else {
            let step = worst_dissipation_step(&traj);
            format!("H increases beyond tolerance at step {step} (violation {})", report.worst_step_violation)
        },
    );
    line(
        "distance-floor",
        report.distance_floor_ok,
        format!("min distance {} vs floor {}", report.min_observed_distance, report.distance_floor),
    );
    line(
        "equilibrium",
        report.equilibrium_reached,
        format!(
            "terminal max speed {} (tol {}), terminal max force {} (tol {})",
            report.terminal_speed, cfg.verify_v_tol, report.terminal_force, cfg.verify_f_tol
        ),
    );
    Ok(report.h_monotone && report.distance_floor_ok && report.equilibrium_reached)
}

fn worst_dissipation_step(traj: &TrajectoryRecord) -> usize {
    use assembly_core::verify::dissipation_step_tolerance;
    if traj.len() < 2 {
        return 0;
    }
    let dt = traj.times[1] - traj.times[0];
    let mut worst = f64::NEG_INFINITY;
    let mut arg = 0;
    for n in 0..traj.len() - 1 {
        let v = traj.hamiltonians[n + 1]
            - traj.hamiltonians[n]
            - dissipation_step_tolerance(dt, traj.hamiltonians[n]);
        if v > worst {
            worst = v;
            arg = n;
        }
    }
    arg
}
