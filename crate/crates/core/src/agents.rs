//! Tabular Q-learning with a decaying epsilon-greedy behaviour policy, and
//! the greedy "transmit whenever possible" baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_path, GainMarkov, InitialGain};
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::rng::{stream, CHANNEL_STREAM, EXPLORATION_STREAM};
use crate::system::{Action, State, StateSpace, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLConfig {
    /// Constant learning rate in (0, 1].
    pub alpha: f64,
    /// Base exploration probability; step `t` explores with `eps0 / sqrt(t)`.
    pub eps0: f64,
    pub max_steps: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for QLConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            eps0: 0.2,
            max_steps: 100_000,
            gamma: 0.9,
            seed: 1,
        }
    }
}

impl QLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParam {
                key: "alpha",
                reason: format!("{} not in (0, 1]", self.alpha),
            });
        }
        if !(0.0..=1.0).contains(&self.eps0) {
            return Err(Error::InvalidParam {
                key: "eps0",
                reason: format!("{} not in [0, 1]", self.eps0),
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParam {
                key: "gamma",
                reason: format!("{} not in (0, 1)", self.gamma),
            });
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParam {
                key: "max_steps",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Exploration probability at step `t >= 1`.
pub fn epsilon_schedule(t: usize, eps0: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidParam {
            key: "t",
            reason: "steps are counted from 1".into(),
        });
    }
    Ok((eps0 / (t as f64).sqrt()).clamp(0.0, 1.0))
}

/// State-action values, all zero initially.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    space: StateSpace,
    q: Vec<[f64; 2]>,
}

impl QTable {
    pub fn zeros(space: StateSpace) -> Self {
        Self {
            space,
            q: vec![[0.0; 2]; space.len()],
        }
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.q[s][a.index()]
    }

    pub fn set(&mut self, s: usize, a: Action, value: f64) {
        self.q[s][a.index()] = value;
    }

    pub fn entries(&self) -> &[[f64; 2]] {
        &self.q
    }

    /// Best action among `feasible`, ties to the first listed (Harvest).
    pub fn argmax(&self, s: usize, feasible: &[Action]) -> Action {
        let mut best = feasible[0];
        for &a in &feasible[1..] {
            if self.get(s, a) > self.get(s, best) {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, s: usize, feasible: &[Action]) -> f64 {
        self.get(s, self.argmax(s, feasible))
    }

    /// One temporal-difference step on entry `(s, a)`:
    /// `Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))`, the max
    /// running over actions feasible at `s_next`.
    ///
    /// Writing the max around the whole bracket gives the same update since
    /// `r` and `Q(s,a)` do not depend on `a'`.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        s: usize,
        a: Action,
        r: f64,
        s_next: usize,
        next_feasible: &[Action],
        alpha: f64,
        gamma: f64,
    ) {
        let target = r + gamma * self.max_value(s_next, next_feasible);
        let q = &mut self.q[s][a.index()];
        *q += alpha * (target - *q);
    }

    /// Greedy policy over feasible actions.
    pub fn policy(&self, params: &SystemParams) -> Policy {
        Policy {
            actions: self
                .space
                .iter()
                .enumerate()
                .map(|(s, state)| self.argmax(s, params.feasible_actions(state)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub q: QTable,
    pub policy: Policy,
    /// Reward collected at each training step.
    pub rewards: Vec<f64>,
    /// Action taken at each training step.
    pub actions: Vec<Action>,
    /// Battery level at the start of each training step.
    pub batteries: Vec<u32>,
}

/// Online Q-learning against the simulated link.
///
/// The channel path is drawn from the run's channel stream exactly as the
/// evaluation harness draws it, so a trained agent and a later evaluation
/// with the same seed see the same realization. Each step consumes two
/// exploration variates whether or not it explores.
pub fn train_q_learning(
    params: &SystemParams,
    channel: &GainMarkov,
    config: &QLConfig,
) -> Result<TrainingResult> {
    params.validate()?;
    config.validate()?;
    let space = params.state_space();
    let rates: Vec<f64> = (0..params.levels())
        .map(|g| params.slot_rate(g))
        .collect::<Result<_>>()?;
    let harvest: Vec<u32> = (0..params.levels())
        .map(|g| params.harvested_units(g))
        .collect::<Result<_>>()?;
    let r_max = rates.iter().copied().fold(0.0, f64::max);
    let bound = r_max / (1.0 - config.gamma) + r_max;

    let mut channel_rng = stream(config.seed, CHANNEL_STREAM);
    let path = generate_path(
        channel,
        InitialGain::Stationary,
        config.max_steps + 1,
        &mut channel_rng,
    )?;
    let mut rng = stream(config.seed, EXPLORATION_STREAM);

    let mut q = QTable::zeros(space);
    let mut state = State {
        battery: rng.random_range(0..=params.b_c),
        gain: path[0],
    };
    let mut rewards = Vec::with_capacity(config.max_steps);
    let mut actions = Vec::with_capacity(config.max_steps);
    let mut batteries = Vec::with_capacity(config.max_steps);

    for (t, &gain_next) in path.iter().enumerate().skip(1) {
        let s = space.index(state);
        let feasible = params.feasible_actions(state);
        let p0: f64 = rng.random();
        let pick: f64 = rng.random();
        let action = if p0 <= epsilon_schedule(t, config.eps0)? {
            feasible[((pick * feasible.len() as f64) as usize).min(feasible.len() - 1)]
        } else {
            q.argmax(s, feasible)
        };
        let reward = match action {
            Action::Backscatter => rates[state.gain],
            Action::Harvest => 0.0,
        };
        let next = State {
            battery: params.battery_next(state.battery, action, harvest[state.gain])?,
            gain: gain_next,
        };
        let s_next = space.index(next);
        q.update(
            s,
            action,
            reward,
            s_next,
            params.feasible_actions(next),
            config.alpha,
            config.gamma,
        );
        let updated = q.get(s, action);
        if updated.is_nan() || updated.abs() > bound {
            return Err(Error::QDiverged {
                value: updated.abs(),
                bound,
            });
        }
        rewards.push(reward);
        actions.push(action);
        batteries.push(state.battery);
        state = next;
    }
    let policy = q.policy(params);
    Ok(TrainingResult {
        q,
        policy,
        rewards,
        actions,
        batteries,
    })
}

/// Backscatter whenever the battery holds at least `k` units.
pub fn greedy_policy(params: &SystemParams) -> Policy {
    let space = params.state_space();
    Policy {
        actions: space
            .iter()
            .map(|s| {
                if s.battery >= params.k_cost {
                    Action::Backscatter
                } else {
                    Action::Harvest
                }
            })
            .collect(),
    }
}
