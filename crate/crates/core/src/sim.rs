//! Slot-level simulation of a policy on a realized channel path, policy
//! comparisons on common random numbers, and source-power sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{greedy_policy, train_q_learning, QLConfig};
use crate::channel::{generate_path, GainMarkov, InitialGain};
use crate::error::{Error, Result};
use crate::mdp::{build_mdp, long_run_average, value_iteration, MdpModel, Policy};
use crate::rng::{stream, CHANNEL_STREAM};
use crate::system::{Action, State, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_slots: usize,
    /// Rolling-average window in slots.
    pub window: usize,
    /// Battery units at slot 0.
    pub e_initial: u32,
    pub initial_gain: InitialGain,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_slots: 10_000,
            window: 1_000,
            e_initial: 0,
            initial_gain: InitialGain::Stationary,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if self.n_slots == 0 {
            return Err(Error::InvalidParam {
                key: "n_slots",
                reason: "must be positive".into(),
            });
        }
        if self.window == 0 {
            return Err(Error::InvalidParam {
                key: "window",
                reason: "must be positive".into(),
            });
        }
        if self.e_initial > params.b_c {
            return Err(Error::InvalidParam {
                key: "e_initial",
                reason: format!("{} exceeds battery capacity {}", self.e_initial, params.b_c),
            });
        }
        Ok(())
    }

    /// Distribution of the first state: fixed battery, gain per `initial_gain`.
    pub fn initial_distribution(
        &self,
        params: &SystemParams,
        channel: &GainMarkov,
    ) -> Result<Vec<f64>> {
        let space = params.state_space();
        let gains = match self.initial_gain {
            InitialGain::Stationary => channel.stationary()?,
            InitialGain::Fixed(g) => {
                let mut d = vec![0.0; space.levels];
                *d.get_mut(g).ok_or(Error::GainIndexOutOfRange {
                    index: g,
                    levels: space.levels,
                })? = 1.0;
                d
            }
        };
        let mut init = vec![0.0; space.len()];
        for (g, p) in gains.into_iter().enumerate() {
            init[space.index(State {
                battery: self.e_initial,
                gain: g,
            })] = p;
        }
        Ok(init)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Bits delivered in each slot.
    pub per_slot_rate: Vec<f64>,
    /// Trailing means over `window` slots; entry `i` covers slots `i..i + window`.
    pub rolling_average: Vec<f64>,
    /// Fraction of slots spent at each battery level `0..=B_c`.
    pub battery_histogram: Vec<f64>,
    /// Slots spent harvesting and backscattering.
    pub mode_counts: [usize; 2],
    pub mean_throughput: f64,
    pub batteries: Vec<u32>,
    pub actions: Vec<Action>,
    pub gains: Vec<usize>,
}

/// Trailing-window means; empty when the series is shorter than the window.
pub fn rolling_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in values {
        acc += v;
        prefix.push(acc);
    }
    (window..=values.len())
        .map(|end| (prefix[end] - prefix[end - window]) / window as f64)
        .collect()
}

/// Runs `policy` along a realized gain path.
pub fn simulate_on_path(
    params: &SystemParams,
    policy: &Policy,
    path: &[usize],
    e_initial: u32,
    window: usize,
) -> Result<Metrics> {
    let space = params.state_space();
    if policy.len() != space.len() {
        return Err(Error::Model(format!(
            "policy covers {} states, expected {}",
            policy.len(),
            space.len()
        )));
    }
    let rates: Vec<f64> = (0..params.levels())
        .map(|g| params.slot_rate(g))
        .collect::<Result<_>>()?;
    let harvest: Vec<u32> = (0..params.levels())
        .map(|g| params.harvested_units(g))
        .collect::<Result<_>>()?;

    let n = path.len();
    let mut per_slot_rate = Vec::with_capacity(n);
    let mut batteries = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut counts = vec![0usize; params.b_c as usize + 1];
    let mut mode_counts = [0usize; 2];
    let mut battery = e_initial;
    for &gain in path {
        let state = State { battery, gain };
        let action = policy.action(space.index(state));
        if !params.is_feasible(state, action) {
            return Err(Error::InfeasiblePolicy(space.index(state)));
        }
        counts[battery as usize] += 1;
        mode_counts[action.index()] += 1;
        batteries.push(battery);
        actions.push(action);
        per_slot_rate.push(if action == Action::Backscatter {
            rates[gain]
        } else {
            0.0
        });
        battery = params.battery_next(battery, action, harvest[gain])?;
    }
    let mean_throughput = per_slot_rate.iter().sum::<f64>() / n.max(1) as f64;
    Ok(Metrics {
        rolling_average: rolling_average(&per_slot_rate, window),
        battery_histogram: counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect(),
        per_slot_rate,
        mode_counts,
        mean_throughput,
        batteries,
        actions,
        gains: path.to_vec(),
    })
}

/// The realized gain path of a run; shared by every policy evaluated with this seed.
pub fn channel_path(channel: &GainMarkov, sim: &SimConfig) -> Result<Vec<usize>> {
    let mut rng = stream(sim.seed, CHANNEL_STREAM);
    generate_path(channel, sim.initial_gain, sim.n_slots, &mut rng)
}

pub fn run_policy(
    params: &SystemParams,
    channel: &GainMarkov,
    policy: &Policy,
    sim: &SimConfig,
) -> Result<Metrics> {
    params.validate()?;
    sim.validate(params)?;
    let path = channel_path(channel, sim)?;
    simulate_on_path(params, policy, &path, sim.e_initial, sim.window)
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub name: String,
    pub metrics: Metrics,
}

/// Evaluates every policy on one pre-generated channel path.
pub fn compare_policies(
    params: &SystemParams,
    channel: &GainMarkov,
    policies: &[(String, Policy)],
    sim: &SimConfig,
) -> Result<Vec<PolicyRun>> {
    params.validate()?;
    sim.validate(params)?;
    let path = channel_path(channel, sim)?;
    policies
        .iter()
        .map(|(name, policy)| {
            Ok(PolicyRun {
                name: name.clone(),
                metrics: simulate_on_path(params, policy, &path, sim.e_initial, sim.window)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vi,
    Ql,
    Greedy,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vi, Method::Ql, Method::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vi => "vi",
            Method::Ql => "ql",
            Method::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vi" => Ok(Method::Vi),
            "ql" => Ok(Method::Ql),
            "greedy" => Ok(Method::Greedy),
            other => Err(format!(
                "unknown method `{other}` (expected vi, ql or greedy)"
            )),
        }
    }
}

/// Derives the policy of `method` for `params`.
pub fn derive_policy(
    method: Method,
    params: &SystemParams,
    channel: &GainMarkov,
    model: &MdpModel,
    theta: f64,
    ql: &QLConfig,
) -> Result<Policy> {
    Ok(match method {
        Method::Vi => value_iteration(model, params.gamma, theta)?.policy,
        Method::Ql => train_q_learning(params, channel, ql)?.policy,
        Method::Greedy => greedy_policy(params),
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub p_t: f64,
    pub method: Method,
    /// Mean bits per slot over the shared simulated path.
    pub mean_throughput: f64,
    /// Long-run average bits per slot from the stationary distribution.
    pub analytic_throughput: f64,
    pub battery_histogram: Vec<f64>,
}

/// For each source power: rebuild the model (the unit energy follows the
/// power when it is tied to `G_1`), derive each method's policy, and compare
/// them on common random numbers. Powers run in parallel; rows come back in
/// input order.
pub fn sweep_power(
    base: &SystemParams,
    powers: &[f64],
    channel: &GainMarkov,
    methods: &[Method],
    theta: f64,
    ql: &QLConfig,
    sim: &SimConfig,
) -> Result<Vec<SweepRow>> {
    if powers.is_empty() {
        return Err(Error::InvalidParam {
            key: "powers",
            reason: "need at least one power".into(),
        });
    }
    if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::InvalidParam {
            key: "powers",
            reason: format!("{p} is not a positive power"),
        });
    }
    let per_power: Vec<Vec<SweepRow>> = powers
        .par_iter()
        .map(|&p_t| {
            let params = base.with_source_power(p_t);
            let model = build_mdp(&params, channel)?;
            let policies = methods
                .iter()
                .map(|&m| {
                    Ok((
                        m.name().to_string(),
                        derive_policy(m, &params, channel, &model, theta, ql)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let runs = compare_policies(&params, channel, &policies, sim)?;
            let init = sim.initial_distribution(&params, channel)?;
            methods
                .iter()
                .zip(policies.iter().zip(runs))
                .map(|(&method, ((_, policy), run))| {
                    Ok(SweepRow {
                        p_t,
                        method,
                        mean_throughput: run.metrics.mean_throughput,
                        analytic_throughput: long_run_average(&model, policy, &init)?,
                        battery_histogram: run.metrics.battery_histogram,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_power.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SystemParams, GainMarkov) {
        (SystemParams::reference(2.0), GainMarkov::reference())
    }

    #[test]
    fn rolling_average_windows() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(rolling_average(&v, 2), vec![1.5, 2.5, 3.5, 4.5]);
        assert_eq!(rolling_average(&v, 5), vec![3.0]);
        assert!(rolling_average(&v, 6).is_empty());
    }

    #[test]
    fn never_backscatter_has_zero_throughput() {
        let (params, chain) = setup();
        let policy = Policy::constant(50, Action::Harvest);
        let m = run_policy(&params, &chain, &policy, &SimConfig::default()).unwrap();
        assert_eq!(m.mean_throughput, 0.0);
        assert!(m.per_slot_rate.iter().all(|&r| r == 0.0));
        assert_eq!(m.mode_counts, [10_000, 0]);
    }

    #[test]
    fn metrics_invariants_and_determinism() {
        let (params, chain) = setup();
        let model = build_mdp(&params, &chain).unwrap();
        let sim = SimConfig {
            seed: 17,
            ..SimConfig::default()
        };
        for policy in [
            greedy_policy(&params),
            value_iteration(&model, 0.9, 1e-9).unwrap().policy,
        ] {
            let a = run_policy(&params, &chain, &policy, &sim).unwrap();
            let b = run_policy(&params, &chain, &policy, &sim).unwrap();
            assert_eq!(a, b);
            assert!((a.battery_histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mean = a.per_slot_rate.iter().sum::<f64>() / a.per_slot_rate.len() as f64;
            assert_eq!(a.mean_throughput, mean);
            for ((&r, &act), &b) in a.per_slot_rate.iter().zip(&a.actions).zip(&a.batteries) {
                assert!(b <= params.b_c);
                if act == Action::Harvest {
                    assert_eq!(r, 0.0);
                } else {
                    assert!(b >= params.k_cost);
                }
            }
            assert_eq!(a.rolling_average.len(), 10_000 - 1_000 + 1);
        }
    }

    #[test]
    fn comparison_shares_channel_path() {
        let (params, chain) = setup();
        let model = build_mdp(&params, &chain).unwrap();
        let vi = value_iteration(&model, 0.9, 1e-9).unwrap().policy;
        let greedy = greedy_policy(&params);
        let sim = SimConfig {
            seed: 4,
            ..SimConfig::default()
        };
        let runs = compare_policies(
            &params,
            &chain,
            &[
                ("vi".into(), vi.clone()),
                ("greedy".into(), greedy),
                ("vi-again".into(), vi),
            ],
            &sim,
        )
        .unwrap();
        assert_eq!(runs[0].metrics.gains, runs[1].metrics.gains);
        assert_eq!(runs[0].metrics, runs[2].metrics);
    }

    #[test]
    fn single_point_sweep_reduces_to_comparison() {
        let (params, chain) = setup();
        let sim = SimConfig {
            seed: 8,
            ..SimConfig::default()
        };
        let rows = sweep_power(
            &params,
            &[2.0],
            &chain,
            &[Method::Greedy],
            1e-9,
            &QLConfig::default(),
            &sim,
        )
        .unwrap();
        let direct = compare_policies(
            &params,
            &chain,
            &[("greedy".into(), greedy_policy(&params))],
            &sim,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_throughput, direct[0].metrics.mean_throughput);
        assert!(sweep_power(
            &params,
            &[],
            &chain,
            &[Method::Greedy],
            1e-9,
            &QLConfig::default(),
            &sim
        )
        .is_err());
        assert!(sweep_power(
            &params,
            &[-1.0],
            &chain,
            &[Method::Greedy],
            1e-9,
            &QLConfig::default(),
            &sim
        )
        .is_err());
    }

    #[test]
    fn infeasible_policy_rejected() {
        let (params, chain) = setup();
        let policy = Policy::constant(50, Action::Backscatter);
        assert!(matches!(
            run_policy(&params, &chain, &policy, &SimConfig::default()),
            Err(Error::InfeasiblePolicy(_))
        ));
    }
}
