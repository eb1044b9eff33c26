//! CSV / JSON / SVG emission for trajectories, schedules, and reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! produced from identical inputs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::TrajectoryRecord;
use crate::schedule::TemperatureSchedule;

/// Per-particle trajectory CSV: `step,time,particle,x,y,z,vx,vy,vz`.
pub fn trajectory_csv(traj: &TrajectoryRecord) -> String {
    let mut out = String::from("step,time,particle,x,y,z,vx,vy,vz\n");
    for (n, state) in traj.states.iter().enumerate() {
        for i in 0..state.n() {
            let x = state.positions[i];
            let v = state.velocities[i];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                n, traj.times[n], i, x.x, x.y, x.z, v.x, v.y, v.z
            );
        }
    }
    out
}

/// Per-step summary CSV: `step,time,hamiltonian,min_pair_distance,u`.
/// Without a schedule the control column is 0.
pub fn summary_csv(traj: &TrajectoryRecord, schedule: Option<&TemperatureSchedule>) -> String {
    let mut out = String::from("step,time,hamiltonian,min_pair_distance,u\n");
    for n in 0..traj.len() {
        let u = schedule.map_or(0.0, |s| s.values()[n]);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            n, traj.times[n], traj.hamiltonians[n], traj.min_pair_distance[n], u
        );
    }
    out
}

/// Schedule CSV: `step,time,u`.
pub fn schedule_csv(schedule: &TemperatureSchedule, times: &[f64]) -> String {
    let mut out = String::from("step,time,u\n");
    for (n, &u) in schedule.values().iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", n, times[n], u);
    }
    out
}

/// Read a schedule back from `step,time,u` CSV.
pub fn schedule_from_csv(
    text: &str,
    u_min: f64,
    u_max: f64,
    monotone: bool,
) -> Result<TemperatureSchedule> {
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "step,time,u" {
                return Err(Error::Config(format!(
                    "schedule CSV must start with `step,time,u`, got `{line}`"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!("schedule CSV line {lineno}: expected 3 fields")));
        }
        let u: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("schedule CSV line {lineno}: bad value `{}`", fields[2])))?;
        values.push(u);
    }
    TemperatureSchedule::new(values, u_min, u_max, monotone)
}

/// Two-column plot data file.
pub fn plot_csv(header: &str, series: &[(f64, f64)]) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in series {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Minimal self-contained SVG line plot; one polyline per named series.
pub fn line_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const M: f64 = 50.0;
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in series {
        for &(x, y) in pts {
            xs.push(x);
            ys.push(y);
        }
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| M + (x - x0) / (x1 - x0).max(1e-300) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0).max(1e-300) * (H - 2.0 * M);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M,
    );
    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = palette[idx % palette.len()];
        let path: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            W - M - 150.0,
            M + 16.0 * idx as f64
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{M}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{x0:.3} .. {x1:.3}</text>",
        H - M + 20.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"{M}\" font-family=\"sans-serif\" font-size=\"11\">{y0:.3} .. {y1:.3}</text>"
    );
    svg.push_str("</svg>\n");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() && lo < hi {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 1.0, lo + 1.0)
    } else {
        (0.0, 1.0)
    }
}
