use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use backscatter::agents::train_q_learning;
use backscatter::config::{Overrides, Preset, RunConfig};
use backscatter::detector::detector_ber_mc;
use backscatter::mdp::{build_mdp, long_run_average, value_iteration};
use backscatter::output::{self, real, DetectorRow};
use backscatter::sim::{compare_policies, derive_policy, sweep_power, Method};

/// Harvest-or-backscatter mode selection for an ambient backscatter tag.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// TOML run configuration (a manifest from an earlier run works too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named base configuration that the file overlays.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Directory for CSV outputs and the manifest.
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Source power in watts.
    #[arg(long, global = true)]
    pt: Option<f64>,
    /// Discount factor.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration: optimal policy and values.
    Solve,
    /// Q-learning: Q-table and learning curve.
    Train,
    /// Run one or all methods on a shared channel path.
    Simulate,
    /// Re-derive and compare methods across source powers.
    Sweep,
    /// Monte Carlo of the energy detector against the closed-form BER.
    DetectorCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Train => "train",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::DetectorCheck => "detector-check",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path, cli.preset)?,
        None => cli.preset.unwrap_or(Preset::PaperSec4).config(),
    };
    config.apply(&Overrides {
        seed: cli.seed,
        p_t: cli.pt,
        gamma: cli.gamma,
        method: cli.method,
    })?;
    config.command = Some(cli.command.name().to_string());
    Ok(config)
}

fn methods(config: &RunConfig) -> Vec<Method> {
    config
        .method
        .map_or_else(|| Method::ALL.to_vec(), |m| vec![m])
}

fn solve(config: &RunConfig, out: &Path) -> Result<()> {
    let params = &config.system;
    let channel = &config.channel.transitions;
    let model = build_mdp(params, channel)?;
    let vi = value_iteration(&model, params.gamma, config.solver.theta)?;
    let init = config.sim_config().initial_distribution(params, channel)?;
    let average = long_run_average(&model, &vi.policy, &init)?;
    output::write_policy(
        &out.join("policy.csv"),
        params.state_space(),
        &vi.values,
        &vi.policy,
    )?;
    output::write_summary(
        &out.join("summary.csv"),
        &[
            ("sweeps", vi.sweeps.to_string()),
            ("last_delta", real(vi.last_delta)),
            ("bellman_residual", real(vi.bellman_residual)),
            ("theta", real(config.solver.theta)),
            ("long_run_average_bits_per_slot", real(average)),
        ],
    )?;
    println!(
        "value iteration: {} sweeps, Bellman residual {:.3e}, long-run average {:.6} bits/slot",
        vi.sweeps, vi.bellman_residual, average
    );
    Ok(())
}

fn train(config: &RunConfig, out: &Path) -> Result<()> {
    let params = &config.system;
    let window = config.sim.window;
    let run = train_q_learning(params, &config.channel.transitions, &config.ql_config())?;
    let curve = backscatter::sim::rolling_average(&run.rewards, window);
    output::write_qtable(&out.join("qtable.csv"), &run.q, params)?;
    output::write_learning_curve(&out.join("learning_curve.csv"), &curve, window)?;
    let mean = run.rewards.iter().sum::<f64>() / run.rewards.len() as f64;
    let peak = curve.iter().copied().fold(f64::NAN, f64::max);
    let tail = &curve[curve.len() - curve.len() / 10..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    output::write_summary(
        &out.join("summary.csv"),
        &[
            ("steps", run.rewards.len().to_string()),
            ("mean_reward_bits_per_slot", real(mean)),
            ("max_window_mean_bits", real(peak)),
            ("final_decile_window_mean_bits", real(tail_mean)),
        ],
    )?;
    println!(
        "q-learning: {} steps, mean reward {mean:.3}, final-decile window mean {tail_mean:.3} (max {peak:.3})",
        run.rewards.len()
    );
    Ok(())
}

fn simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let params = &config.system;
    let channel = &config.channel.transitions;
    let sim = config.sim_config();
    let model = build_mdp(params, channel)?;
    let methods = methods(config);
    let policies = methods
        .iter()
        .map(|&m| {
            Ok((
                m.name().to_string(),
                derive_policy(
                    m,
                    params,
                    channel,
                    &model,
                    config.solver.theta,
                    &config.ql_config(),
                )?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = compare_policies(params, channel, &policies, &sim)?;
    let init = sim.initial_distribution(params, channel)?;
    let analytic = policies
        .iter()
        .map(|(_, p)| long_run_average(&model, p, &init))
        .collect::<backscatter::Result<Vec<_>>>()?;
    output::write_throughput(
        &out.join("throughput.csv"),
        methods
            .iter()
            .zip(&runs)
            .zip(&analytic)
            .map(|((&m, r), &a)| (m, &r.metrics, a)),
    )?;
    output::write_battery_hist(
        &out.join("battery_hist.csv"),
        runs.iter()
            .map(|r| (r.name.as_str(), r.metrics.battery_histogram.as_slice())),
    )?;
    output::write_rolling(
        &out.join("rolling_average.csv"),
        methods.iter().zip(&runs).map(|(&m, r)| (m, &r.metrics)),
        sim.window,
    )?;
    for (run, a) in runs.iter().zip(&analytic) {
        println!(
            "{:>6}: {:.3} bits/slot simulated, {a:.3} long-run average",
            run.name, run.metrics.mean_throughput
        );
    }
    Ok(())
}

fn sweep(config: &RunConfig, out: &Path) -> Result<()> {
    let methods = config
        .method
        .map_or_else(|| config.sweep.methods.clone(), |m| vec![m]);
    let rows = sweep_power(
        &config.system,
        &config.sweep.powers,
        &config.channel.transitions,
        &methods,
        config.solver.theta,
        &config.ql_config(),
        &config.sim_config(),
    )?;
    output::write_sweep(&out.join("sweep.csv"), &rows)?;
    output::write_sweep_analytic(&out.join("sweep_analytic.csv"), &rows)?;
    for r in &rows {
        println!(
            "P_t {:>5} W {:>6}: {:.3} bits/slot",
            r.p_t,
            r.method.name(),
            r.mean_throughput
        );
    }
    Ok(())
}

fn detector_check(config: &RunConfig, out: &Path) -> Result<()> {
    let mut estimates = Vec::with_capacity(config.detector.gains.len());
    for &gain in &config.detector.gains {
        let est = detector_ber_mc(&config.detector_config(gain))?;
        let formula = config.system.ber(gain)?;
        println!(
            "g {gain:.4e}: BER {:.5e} ± {:.1e} simulated, {formula:.5e} closed form",
            est.ber, est.stderr
        );
        estimates.push((gain, est, formula));
    }
    let rows: Vec<DetectorRow<'_>> = estimates
        .iter()
        .map(|(gain, estimate, ber_formula)| DetectorRow {
            gain: *gain,
            params: &config.system,
            estimate,
            ber_formula: *ber_formula,
        })
        .collect();
    output::write_detector(&out.join("detector.csv"), &rows)
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    let out = &cli.output;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    output::write_text(&out.join("manifest.toml"), &config.to_manifest())?;
    match cli.command {
        Command::Solve => solve(&config, out),
        Command::Train => train(&config, out),
        Command::Simulate => simulate(&config, out),
        Command::Sweep => sweep(&config, out),
        Command::DetectorCheck => detector_check(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
