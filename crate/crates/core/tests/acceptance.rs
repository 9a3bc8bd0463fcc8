//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use backscatter::agents::{greedy_policy, train_q_learning};
use backscatter::config::{Preset, RunConfig};
use backscatter::detector::{detector_ber_mc, DetectorConfig};
use backscatter::mdp::{
    brute_force_optimal, build_mdp, long_run_average, policy_evaluation_exact, value_iteration,
};
use backscatter::sim::{
    compare_policies, rolling_average, run_policy, sweep_power, Method, SimConfig, SweepRow,
};
use backscatter::system::{Quantization, SystemParams, UnitEnergy};
use backscatter::GainMarkov;
use statrs::function::erf::erfc_inv;

const POWERS: [f64; 4] = [1.0, 1.5, 2.0, 2.5];
const THETA: f64 = 1e-9;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn preset() -> RunConfig {
    Preset::PaperSec4.config()
}

fn timed(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (
        t < limit,
        format!("{:.2}s of {:.0}s", t.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn solver_correctness() -> Outcome {
    let start = Instant::now();
    let mut params = SystemParams::reference(2.0);
    params.b_c = 3;
    params.k_cost = 2;
    params.gains = params.gains[..2].to_vec();
    params.quantization = Quantization::LevelIndex;
    params.e0 = UnitEnergy::HarvestAtG1;
    let chain = GainMarkov::new(vec![vec![0.6, 0.4], vec![0.3, 0.7]]).map_err(|e| e.to_string())?;
    let small = build_mdp(&params, &chain).map_err(|e| e.to_string())?;
    let vi = value_iteration(&small, params.gamma, THETA).map_err(|e| e.to_string())?;
    let vi_value =
        policy_evaluation_exact(&small, &vi.policy, params.gamma).map_err(|e| e.to_string())?;
    let (best, _) = brute_force_optimal(&small, params.gamma, 0).map_err(|e| e.to_string())?;
    let gap = vi_value.sup_distance(&best);

    let config = preset();
    let model =
        build_mdp(&config.system, &config.channel.transitions).map_err(|e| e.to_string())?;
    let full = value_iteration(&model, config.system.gamma, THETA).map_err(|e| e.to_string())?;
    let (fast, time) = timed(Duration::from_secs(1), start);
    verdict(
        small.n_states() == 8 && gap < 1e-9 && full.bellman_residual < THETA && fast,
        format!(
            "8 states: |V_vi - V_bf| = {gap:.2e}; 50 states: Bellman residual {:.2e} after {} sweeps; {time}",
            full.bellman_residual, full.sweeps
        ),
    )
}

fn kernel_normalization() -> Outcome {
    let config = preset();
    let model =
        build_mdp(&config.system, &config.channel.transitions).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for s in 0..model.n_states() {
        for a in model.feasible_actions(s).collect::<Vec<_>>() {
            let sum: f64 = model.kernel_row(s, a).iter().sum();
            worst = worst.max((sum - 1.0).abs());
            pairs += 1;
        }
    }
    verdict(
        model.n_states() == 50 && worst <= 1e-12,
        format!(
            "{} states, {pairs} feasible pairs, max |row sum - 1| = {worst:.2e}",
            model.n_states()
        ),
    )
}

struct Curve {
    peak: f64,
    final_decile: f64,
    seconds: f64,
}

fn learning_curve(p_t: f64) -> Result<Curve, String> {
    let config = preset();
    let start = Instant::now();
    let params = config.system.with_source_power(p_t);
    let run = train_q_learning(&params, &config.channel.transitions, &config.ql_config())
        .map_err(|e| e.to_string())?;
    let curve = rolling_average(&run.rewards, config.sim.window);
    let tail = &curve[curve.len() - curve.len() / 10..];
    Ok(Curve {
        peak: curve.iter().copied().fold(f64::MIN, f64::max),
        final_decile: tail.iter().sum::<f64>() / tail.len() as f64,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn learning_saturation() -> Outcome {
    let low = learning_curve(1.0)?;
    let high = learning_curve(2.5)?;
    let ratio = |c: &Curve| c.final_decile / c.peak;
    verdict(
        ratio(&low) >= 0.95 && ratio(&high) >= 0.95 && high.final_decile >= low.final_decile && low.seconds.max(high.seconds) < 30.0,
        format!(
            "final-decile / peak window: {:.4} at 1 W, {:.4} at 2.5 W (need >= 0.95); saturated level {:.1} at 2.5 W vs {:.1} at 1 W; slowest curve {:.2}s",
            ratio(&low),
            ratio(&high),
            high.final_decile,
            low.final_decile,
            low.seconds.max(high.seconds)
        ),
    )
}

fn sweep_rows() -> Result<Vec<SweepRow>, String> {
    let config = preset();
    sweep_power(
        &config.system,
        &POWERS,
        &config.channel.transitions,
        &Method::ALL,
        THETA,
        &config.ql_config(),
        &config.sim_config(),
    )
    .map_err(|e| e.to_string())
}

fn throughput(rows: &[SweepRow], p_t: f64, method: Method) -> f64 {
    rows.iter()
        .find(|r| r.p_t == p_t && r.method == method)
        .expect("sweep cell")
        .mean_throughput
}

fn ql_near_optimal(rows: &[SweepRow]) -> Outcome {
    let ratios: Vec<f64> = POWERS
        .iter()
        .map(|&p| throughput(rows, p, Method::Ql) / throughput(rows, p, Method::Vi))
        .collect();
    let text: Vec<String> = POWERS
        .iter()
        .zip(&ratios)
        .map(|(p, r)| format!("{p} W {r:.4}"))
        .collect();
    verdict(
        ratios.iter().all(|&r| r >= 0.95),
        format!("QL/VI: {} (need >= 0.95)", text.join(", ")),
    )
}

fn greedy_gap(rows: &[SweepRow]) -> Outcome {
    let below_ql: Vec<bool> = POWERS
        .iter()
        .map(|&p| throughput(rows, p, Method::Greedy) <= throughput(rows, p, Method::Ql))
        .collect();
    let greedy_vi = |p| throughput(rows, p, Method::Greedy) / throughput(rows, p, Method::Vi);
    let (at_low, at_high) = (greedy_vi(1.0), greedy_vi(2.5));
    let pairs: Vec<String> = POWERS
        .iter()
        .map(|&p| {
            format!(
                "{p} W {:.1}/{:.1}",
                throughput(rows, p, Method::Greedy),
                throughput(rows, p, Method::Ql)
            )
        })
        .collect();
    verdict(
        below_ql.iter().all(|&b| b) && at_high < at_low,
        format!(
            "greedy/QL bits: {}; greedy/VI {at_low:.5} at 1 W, {at_high:.5} at 2.5 W",
            pairs.join(", ")
        ),
    )
}

fn battery_occupancy() -> Outcome {
    let config = preset();
    let params = &config.system;
    let channel = &config.channel.transitions;
    let model = build_mdp(params, channel).map_err(|e| e.to_string())?;
    let vi = value_iteration(&model, params.gamma, THETA).map_err(|e| e.to_string())?;
    let policies = vec![
        ("greedy".to_string(), greedy_policy(params)),
        ("vi".to_string(), vi.policy),
    ];
    let runs = compare_policies(params, channel, &policies, &config.sim_config())
        .map_err(|e| e.to_string())?;
    let (greedy, optimal) = (&runs[0].metrics, &runs[1].metrics);
    let low = greedy.battery_histogram[..3].iter().sum::<f64>();
    let high = |h: &[f64]| h[7..].iter().sum::<f64>();
    let (g_high, v_high) = (
        high(&greedy.battery_histogram),
        high(&optimal.battery_histogram),
    );
    verdict(
        low > 0.6 && g_high < v_high,
        format!("greedy P(b < 3) = {low:.4}; P(b >= 7) greedy {g_high:.4} vs VI {v_high:.4}"),
    )
}

/// Detector points in one regime (`mu sqrt(h) = 1000`, 100 samples per bit),
/// with the gain chosen so the closed form gives the target BER.
fn detector_point(ber_target: f64) -> DetectorConfig {
    let mut params = SystemParams::reference(1.0);
    params.mu = 0.5;
    params.h = 4e6;
    params.n_s = 100;
    let noise = params.delta0_sq + params.delta1_sq;
    let gain = erfc_inv(2.0 * ber_target) * 4.0 * noise
        / (params.mu * params.mu * params.p_t * params.h * f64::from(params.n_s).sqrt());
    DetectorConfig {
        gain,
        params,
        bits: 100_000,
        seed: 7,
    }
}

fn lemma_validation() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for target in [0.4, 0.1, 0.01] {
        let c = detector_point(target);
        let formula = c.params.ber(c.gain).map_err(|e| e.to_string())?;
        let est = detector_ber_mc(&c).map_err(|e| e.to_string())?;
        let tol = (3.0 * est.stderr).max(0.1 * formula);
        let pass = (est.ber - formula).abs() <= tol;
        ok &= pass;
        parts.push(format!(
            "{formula:.3} -> mc {:.5} (tol {tol:.4}{})",
            est.ber,
            if pass { "" } else { ", miss" }
        ));
    }
    let mut silent = detector_point(0.1);
    silent.params.mu = 0.0;
    let coin = detector_ber_mc(&silent).map_err(|e| e.to_string())?;
    let coin_ok = (coin.ber - 0.5).abs() <= 3.0 * coin.stderr
        && silent.params.ber(silent.gain).unwrap() == 0.5;
    let mut loud = detector_point(0.01);
    loud.gain *= 10.0;
    let clear = detector_ber_mc(&loud).map_err(|e| e.to_string())?;
    let clear_ok = clear.ber < 1e-4 && loud.params.ber(loud.gain).unwrap() < 1e-4;
    parts.push(format!("mu = 0 -> {:.4}", coin.ber));
    parts.push(format!("high SNR -> {:.1e}", clear.ber));
    let (fast, time) = timed(Duration::from_secs(60), start);
    verdict(
        ok && coin_ok && clear_ok && fast,
        format!("{}; {time}", parts.join("; ")),
    )
}

fn ergodic_consistency() -> Outcome {
    let config = preset();
    let params = &config.system;
    let channel = &config.channel.transitions;
    let model = build_mdp(params, channel).map_err(|e| e.to_string())?;
    let vi = value_iteration(&model, params.gamma, THETA).map_err(|e| e.to_string())?;
    let sim = SimConfig {
        n_slots: 1_000_000,
        ..config.sim_config()
    };
    let metrics = run_policy(params, channel, &vi.policy, &sim).map_err(|e| e.to_string())?;
    let init = sim
        .initial_distribution(params, channel)
        .map_err(|e| e.to_string())?;
    let exact = long_run_average(&model, &vi.policy, &init).map_err(|e| e.to_string())?;
    let rel = (metrics.mean_throughput - exact).abs() / exact;
    verdict(
        rel < 0.005,
        format!(
            "simulated {:.3} vs stationary {exact:.3} bits/slot, relative gap {rel:.2e}",
            metrics.mean_throughput
        ),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_backscatter"))
        .args(args)
        .arg("--output")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {status}"))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let base = root.join("base.toml");
    std::fs::write(
        &base,
        "seed = 11\n[detector]\nbits = 5000\ngains = [1e-16, 3e-16]\n[system]\nh = 4e6\n",
    )
    .map_err(|e| e.to_string())?;
    let base = base.to_str().unwrap();
    let mut compared = 0;
    for command in ["solve", "train", "simulate", "sweep", "detector-check"] {
        let first = root.join(format!("{command}-first"));
        run_cli(&[command, "--config", base], &first)?;
        let manifest = first.join("manifest.toml");
        let manifest = manifest.to_str().unwrap();
        let (a, b) = (
            root.join(format!("{command}-a")),
            root.join(format!("{command}-b")),
        );
        run_cli(&[command, "--config", manifest], &a)?;
        run_cli(&[command, "--config", manifest], &b)?;
        for entry in std::fs::read_dir(&first).map_err(|e| e.to_string())? {
            let name = entry.map_err(|e| e.to_string())?.file_name();
            let read =
                |dir: &Path| std::fs::read(dir.join(&name)).map_err(|e| format!("{name:?}: {e}"));
            let reference = read(&first)?;
            if read(&a)? != reference || read(&b)? != reference {
                return Err(format!("{command}: {name:?} differs between runs"));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} file comparisons across 5 commands, all byte-identical"
    ))
}

fn main() -> ExitCode {
    let rows = sweep_rows();
    let from_sweep = |f: fn(&[SweepRow]) -> Outcome| match &rows {
        Ok(rows) => f(rows),
        Err(e) => Err(e.clone()),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("solver correctness", solver_correctness()),
        ("kernel normalization", kernel_normalization()),
        ("learning-curve saturation", learning_saturation()),
        ("QL near-optimality", from_sweep(ql_near_optimal)),
        ("greedy gap", from_sweep(greedy_gap)),
        ("battery occupancy", battery_occupancy()),
        ("detector BER vs closed form", lemma_validation()),
        ("ergodic consistency", ergodic_consistency()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
