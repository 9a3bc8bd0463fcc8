//! CSV writers for run artifacts.
//!
//! Every file has a header row. Reals are written in scientific notation
//! with 15 significant digits; counts and indices are plain integers.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use crate::agents::QTable;
use crate::detector::DetectorEstimate;
use crate::mdp::{Policy, ValueFunction};
use crate::sim::{Method, Metrics, SweepRow};
use crate::system::{StateSpace, SystemParams};

/// Fixed-width scientific notation, 15 significant digits.
pub fn real(x: f64) -> String {
    format!("{x:.14e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_policy(
    path: &Path,
    space: StateSpace,
    values: &ValueFunction,
    policy: &Policy,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "state_index",
        "battery_units",
        "gain_index",
        "value",
        "action",
    ])?;
    for (i, s) in space.iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.battery.to_string(),
            s.gain.to_string(),
            real(values.values[i]),
            policy.action(i).label().to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_qtable(path: &Path, q: &QTable, params: &SystemParams) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "state_index",
        "battery_units",
        "gain_index",
        "q_harvest",
        "q_backscatter",
        "chosen_action",
    ])?;
    let policy = q.policy(params);
    for (i, (s, qs)) in q.space().iter().zip(q.entries()).enumerate() {
        w.write_record([
            i.to_string(),
            s.battery.to_string(),
            s.gain.to_string(),
            real(qs[0]),
            real(qs[1]),
            policy.action(i).label().to_string(),
        ])?;
    }
    finish(w, path)
}

/// `step` is the 1-based index of the last step inside each window.
pub fn write_learning_curve(path: &Path, rolling: &[f64], window: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "rolling_avg_bits"])?;
    for (i, v) in rolling.iter().enumerate() {
        w.write_record([(i + window).to_string(), real(*v)])?;
    }
    finish(w, path)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["p_t", "method", "mean_throughput_bits_per_slot"])?;
    for r in rows {
        w.write_record([real(r.p_t), r.method.to_string(), real(r.mean_throughput)])?;
    }
    finish(w, path)
}

/// Simulated and stationary-distribution throughput side by side.
pub fn write_sweep_analytic(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "p_t",
        "method",
        "mean_throughput_bits_per_slot",
        "long_run_average_bits_per_slot",
    ])?;
    for r in rows {
        w.write_record([
            real(r.p_t),
            r.method.to_string(),
            real(r.mean_throughput),
            real(r.analytic_throughput),
        ])?;
    }
    finish(w, path)
}

pub fn write_battery_hist<'a>(
    path: &Path,
    runs: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "level", "probability"])?;
    for (name, hist) in runs {
        for (level, p) in hist.iter().enumerate() {
            w.write_record([name.to_string(), level.to_string(), real(*p)])?;
        }
    }
    finish(w, path)
}

/// Per-method totals of a simulation on one channel path.
pub fn write_throughput<'a>(
    path: &Path,
    runs: impl IntoIterator<Item = (Method, &'a Metrics, f64)>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "method",
        "mean_throughput_bits_per_slot",
        "long_run_average_bits_per_slot",
        "harvest_slots",
        "backscatter_slots",
    ])?;
    for (method, m, analytic) in runs {
        w.write_record([
            method.to_string(),
            real(m.mean_throughput),
            real(analytic),
            m.mode_counts[0].to_string(),
            m.mode_counts[1].to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_rolling<'a>(
    path: &Path,
    runs: impl IntoIterator<Item = (Method, &'a Metrics)>,
    window: usize,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "slot", "rolling_avg_bits"])?;
    for (method, m) in runs {
        for (i, v) in m.rolling_average.iter().enumerate() {
            w.write_record([method.to_string(), (i + window).to_string(), real(*v)])?;
        }
    }
    finish(w, path)
}

/// One row per detector test point.
pub struct DetectorRow<'a> {
    pub gain: f64,
    pub params: &'a SystemParams,
    pub estimate: &'a DetectorEstimate,
    pub ber_formula: f64,
}

pub fn write_detector(path: &Path, rows: &[DetectorRow<'_>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "g",
        "h",
        "p_t",
        "mu",
        "n_s",
        "bits",
        "ber_mc",
        "stderr",
        "ber_formula",
        "z_mean_0",
        "z_mean_1",
    ])?;
    for r in rows {
        let p = r.params;
        let e = r.estimate;
        w.write_record([
            real(r.gain),
            real(p.h),
            real(p.p_t),
            real(p.mu),
            p.n_s.to_string(),
            e.bits.to_string(),
            real(e.ber),
            real(e.stderr),
            real(r.ber_formula),
            real(e.z_mean[0]),
            real(e.z_mean[1]),
        ])?;
    }
    finish(w, path)
}

/// Key/value summary lines, values already formatted.
pub fn write_summary(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in entries {
        w.write_record([*k, v.as_str()])?;
    }
    finish(w, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))
}
