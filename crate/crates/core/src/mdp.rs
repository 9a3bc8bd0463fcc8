//! Exact MDP over (battery, gain) states: model construction, value
//! iteration, exact policy evaluation, long-run average reward and an
//! exhaustive small-instance oracle.
//!
//! Actions are the two tag modes. Infeasible (state, action) pairs are
//! masked out of every maximization and carry no kernel mass.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::channel::{GainMarkov, ROW_SUM_TOL};
use crate::error::{Error, Result};
use crate::system::{Action, StateSpace, SystemParams};

pub const DEFAULT_THETA: f64 = 1e-9;
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;
/// Largest state space `brute_force_optimal` accepts.
pub const BRUTE_FORCE_LIMIT: usize = 12;

const EVAL_RESIDUAL_TOL: f64 = 1e-10;

/// Rewards `R(s, a)` and kernel `P(s' | s, a)` over a finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    reward: Vec<[f64; 2]>,
    kernel: Vec<[Vec<f64>; 2]>,
    feasible: Vec<[bool; 2]>,
    space: Option<StateSpace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_norm_diff(&self.values, &other.values)
    }
}

/// Deterministic action per state index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    pub actions: Vec<Action>,
}

impl Policy {
    pub fn constant(n: usize, action: Action) -> Self {
        Self {
            actions: vec![action; n],
        }
    }

    pub fn action(&self, state: usize) -> Action {
        self.actions[state]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: ValueFunction,
    pub policy: Policy,
    pub sweeps: usize,
    /// Sup-norm change of the last sweep.
    pub last_delta: f64,
    /// `max_s |V(s) - (T V)(s)|` at the returned values.
    pub bellman_residual: f64,
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

impl MdpModel {
    /// Builds a model from raw tables. Feasible rows must be stochastic,
    /// infeasible rows must be empty of mass, and every state needs a feasible action.
    pub fn from_tables(
        reward: Vec<[f64; 2]>,
        kernel: Vec<[Vec<f64>; 2]>,
        feasible: Vec<[bool; 2]>,
    ) -> Result<Self> {
        let n = reward.len();
        if kernel.len() != n || feasible.len() != n {
            return Err(Error::Model(format!(
                "table lengths differ: reward {n}, kernel {}, feasible {}",
                kernel.len(),
                feasible.len()
            )));
        }
        for s in 0..n {
            if !feasible[s].iter().any(|&f| f) {
                return Err(Error::Model(format!("state {s} has no feasible action")));
            }
            for a in 0..2 {
                let row = &kernel[s][a];
                if row.len() != n {
                    return Err(Error::Model(format!(
                        "kernel row ({s},{a}) has length {}",
                        row.len()
                    )));
                }
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Model(format!(
                        "kernel row ({s},{a}) has an entry outside [0,1]"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if feasible[s][a] {
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::RowSum {
                            row: s,
                            sum,
                            residual: (sum - 1.0).abs(),
                        });
                    }
                    if !reward[s][a].is_finite() {
                        return Err(Error::Model(format!("reward ({s},{a}) is not finite")));
                    }
                } else if sum != 0.0 {
                    return Err(Error::Model(format!(
                        "infeasible pair ({s},{a}) carries kernel mass"
                    )));
                }
            }
        }
        Ok(Self {
            reward,
            kernel,
            feasible,
            space: None,
        })
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn space(&self) -> Option<StateSpace> {
        self.space
    }

    pub fn reward(&self, s: usize, a: Action) -> f64 {
        self.reward[s][a.index()]
    }

    pub fn kernel_row(&self, s: usize, a: Action) -> &[f64] {
        &self.kernel[s][a.index()]
    }

    pub fn is_feasible(&self, s: usize, a: Action) -> bool {
        self.feasible[s][a.index()]
    }

    pub fn feasible_actions(&self, s: usize) -> impl Iterator<Item = Action> + '_ {
        Action::ALL
            .into_iter()
            .filter(move |&a| self.is_feasible(s, a))
    }

    pub fn max_abs_reward(&self) -> f64 {
        (0..self.n_states())
            .flat_map(|s| self.feasible_actions(s).map(move |a| (s, a)))
            .map(|(s, a)| self.reward(s, a).abs())
            .fold(0.0, f64::max)
    }

    /// `R(s, a) + gamma * sum_s' P(s' | s, a) V(s')`.
    pub fn action_value(&self, s: usize, a: Action, values: &[f64], gamma: f64) -> f64 {
        let future: f64 = self
            .kernel_row(s, a)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum();
        self.reward(s, a) + gamma * future
    }

    /// Greedy action with respect to `values`; ties go to `Harvest`.
    pub fn greedy_action(&self, s: usize, values: &[f64], gamma: f64) -> (Action, f64) {
        let mut best: Option<(Action, f64)> = None;
        for a in self.feasible_actions(s) {
            let q = self.action_value(s, a, values, gamma);
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((a, q));
            }
        }
        best.expect("every state has a feasible action")
    }

    pub fn greedy_policy(&self, values: &[f64], gamma: f64) -> Policy {
        Policy {
            actions: (0..self.n_states())
                .map(|s| self.greedy_action(s, values, gamma).0)
                .collect(),
        }
    }

    pub fn bellman_residual(&self, values: &[f64], gamma: f64) -> f64 {
        (0..self.n_states())
            .map(|s| (self.greedy_action(s, values, gamma).1 - values[s]).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.len() != self.n_states() {
            return Err(Error::Model(format!(
                "policy covers {} states, model has {}",
                policy.len(),
                self.n_states()
            )));
        }
        match (0..self.n_states()).find(|&s| !self.is_feasible(s, policy.action(s))) {
            Some(s) => Err(Error::InfeasiblePolicy(s)),
            None => Ok(()),
        }
    }

    /// Transition matrix `P_pi` and reward vector `R_pi` induced by `policy`.
    fn induced(&self, policy: &Policy) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_states();
        let p = DMatrix::from_fn(n, n, |i, j| self.kernel_row(i, policy.action(i))[j]);
        let r = DVector::from_fn(n, |i, _| self.reward(i, policy.action(i)));
        (p, r)
    }
}

/// Builds the tag MDP: the battery moves deterministically given (state,
/// action) and the gain follows `channel`.
pub fn build_mdp(params: &SystemParams, channel: &GainMarkov) -> Result<MdpModel> {
    params.validate()?;
    if channel.levels() != params.levels() {
        return Err(Error::InvalidParam {
            key: "channel",
            reason: format!(
                "matrix has {} levels but {} gains are configured",
                channel.levels(),
                params.levels()
            ),
        });
    }
    let space = params.state_space();
    let n = space.len();
    let rates: Vec<f64> = (0..params.levels())
        .map(|g| params.slot_rate(g))
        .collect::<Result<_>>()?;

    let mut reward = Vec::with_capacity(n);
    let mut kernel = Vec::with_capacity(n);
    let mut feasible = Vec::with_capacity(n);
    for state in space.iter() {
        let harvested = params.harvested_units(state.gain)?;
        let mut rows = [vec![0.0; n], vec![0.0; n]];
        let mut mask = [false; 2];
        for a in Action::ALL {
            if !params.is_feasible(state, a) {
                continue;
            }
            mask[a.index()] = true;
            let battery = params.battery_next(state.battery, a, harvested)?;
            for (g_next, &p) in channel.row(state.gain).iter().enumerate() {
                rows[a.index()][space.index(crate::system::State {
                    battery,
                    gain: g_next,
                })] = p;
            }
        }
        reward.push([0.0, if mask[1] { rates[state.gain] } else { 0.0 }]);
        kernel.push(rows);
        feasible.push(mask);
    }
    let mut model = MdpModel::from_tables(reward, kernel, feasible)?;
    model.space = Some(space);
    Ok(model)
}

fn check_discount(gamma: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero {
        (0.0..1.0).contains(&gamma)
    } else {
        gamma > 0.0 && gamma < 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam {
            key: "gamma",
            reason: format!("{gamma} outside the admissible range"),
        })
    }
}

pub fn value_iteration(model: &MdpModel, gamma: f64, theta: f64) -> Result<ValueIterationResult> {
    value_iteration_capped(model, gamma, theta, DEFAULT_MAX_SWEEPS)
}

/// Synchronous value iteration from `V = 0`, stopped once a sweep changes
/// no state by `theta` or more.
pub fn value_iteration_capped(
    model: &MdpModel,
    gamma: f64,
    theta: f64,
    max_sweeps: usize,
) -> Result<ValueIterationResult> {
    check_discount(gamma, false)?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParam {
            key: "theta",
            reason: format!("{theta} must be > 0"),
        });
    }
    let n = model.n_states();
    let mut values = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let next: Vec<f64> = (0..n)
            .map(|s| model.greedy_action(s, &values, gamma).1)
            .collect();
        delta = sup_norm_diff(&next, &values);
        values = next;
        if delta < theta {
            let policy = model.greedy_policy(&values, gamma);
            let bellman_residual = model.bellman_residual(&values, gamma);
            return Ok(ValueIterationResult {
                values: ValueFunction { values },
                policy,
                sweeps: sweep,
                last_delta: delta,
                bellman_residual,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "value iteration",
        iterations: max_sweeps,
        residual: delta,
    })
}

/// Solves `V = R_pi + gamma P_pi V` directly.
pub fn policy_evaluation_exact(
    model: &MdpModel,
    policy: &Policy,
    gamma: f64,
) -> Result<ValueFunction> {
    check_discount(gamma, true)?;
    model.check_policy(policy)?;
    let n = model.n_states();
    let (p, r) = model.induced(policy);
    let a = DMatrix::<f64>::identity(n, n) - p.clone() * gamma;
    let lu = a.clone().lu();
    let mut v = lu.solve(&r).ok_or(Error::Singular("I - gamma P_pi"))?;
    // One round of iterative refinement.
    let correction = lu
        .solve(&(&r - &a * &v))
        .ok_or(Error::Singular("I - gamma P_pi"))?;
    v += correction;

    let residual = (&r + p * &v * gamma - &v).amax();
    if residual >= EVAL_RESIDUAL_TOL {
        return Err(Error::NoConvergence {
            what: "exact policy evaluation",
            iterations: 1,
            residual,
        });
    }
    Ok(ValueFunction {
        values: v.iter().copied().collect(),
    })
}

/// Long-run average reward per step of `policy`, starting from `initial`
/// (a distribution over state indices).
///
/// Recurrent classes reachable from the start are weighted by their
/// absorption probabilities, so reducible chains are handled too.
pub fn long_run_average(model: &MdpModel, policy: &Policy, initial: &[f64]) -> Result<f64> {
    model.check_policy(policy)?;
    let n = model.n_states();
    if initial.len() != n {
        return Err(Error::Model(format!(
            "initial distribution has length {}",
            initial.len()
        )));
    }
    let (p, r) = model.induced(policy);

    // Reachable set from the support of the initial distribution.
    let mut reachable = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&s| initial[s] > 0.0).collect();
    stack.iter().for_each(|&s| reachable[s] = true);
    while let Some(s) = stack.pop() {
        for t in 0..n {
            if p[(s, t)] > 0.0 && !reachable[t] {
                reachable[t] = true;
                stack.push(t);
            }
        }
    }

    let mut graph = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..n).map(|s| graph.add_node(s)).collect();
    for s in (0..n).filter(|&s| reachable[s]) {
        for t in 0..n {
            if p[(s, t)] > 0.0 {
                graph.add_edge(nodes[s], nodes[t], ());
            }
        }
    }
    let mut class_of = vec![usize::MAX; n];
    let mut closed: Vec<Vec<usize>> = Vec::new();
    for scc in tarjan_scc(&graph) {
        let members: Vec<usize> = scc
            .iter()
            .map(|&ix| graph[ix])
            .filter(|&s| reachable[s])
            .collect();
        if members.is_empty() {
            continue;
        }
        let leaves = members
            .iter()
            .any(|&s| (0..n).any(|t| p[(s, t)] > 0.0 && !members.contains(&t)));
        if !leaves {
            for &s in &members {
                class_of[s] = closed.len();
            }
            closed.push(members);
        }
    }

    // Stationary reward of each closed class.
    let mut class_gain = Vec::with_capacity(closed.len());
    for members in &closed {
        let m = members.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (i, &si) in members.iter().enumerate() {
            for (j, &sj) in members.iter().enumerate() {
                a[(j, i)] = if i == j { 1.0 } else { 0.0 } - p[(si, sj)];
            }
        }
        let mut b = DVector::<f64>::zeros(m);
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        b[m - 1] = 1.0;
        let d = a
            .lu()
            .solve(&b)
            .ok_or(Error::Singular("stationary system"))?;
        if d.iter().any(|x| !x.is_finite() || *x < -1e-9) {
            return Err(Error::NoConvergence {
                what: "stationary solve",
                iterations: 1,
                residual: d.min(),
            });
        }
        class_gain.push(
            members
                .iter()
                .enumerate()
                .map(|(i, &s)| d[i] * r[s])
                .sum::<f64>(),
        );
    }

    // Absorption probabilities from transient reachable states.
    let transient: Vec<usize> = (0..n)
        .filter(|&s| reachable[s] && class_of[s] == usize::MAX)
        .collect();
    let mut weight = vec![0.0; closed.len()];
    for s in 0..n {
        if class_of[s] != usize::MAX {
            weight[class_of[s]] += initial[s];
        }
    }
    if !transient.is_empty() {
        let m = transient.len();
        let a = DMatrix::from_fn(m, m, |i, j| {
            let identity = if i == j { 1.0 } else { 0.0 };
            identity - p[(transient[i], transient[j])]
        });
        let lu = a.lu();
        for (c, members) in closed.iter().enumerate() {
            let b = DVector::from_fn(m, |i, _| {
                members.iter().map(|&t| p[(transient[i], t)]).sum::<f64>()
            });
            let h = lu.solve(&b).ok_or(Error::Singular("absorption system"))?;
            weight[c] += transient
                .iter()
                .enumerate()
                .map(|(i, &s)| initial[s] * h[i])
                .sum::<f64>();
        }
    }
    Ok(weight.iter().zip(&class_gain).map(|(w, g)| w * g).sum())
}

/// Exhaustive search over deterministic feasible policies. Picks the policy
/// with the highest value at `initial_state` and verifies it dominates every
/// other policy at every state.
pub fn brute_force_optimal(
    model: &MdpModel,
    gamma: f64,
    initial_state: usize,
) -> Result<(ValueFunction, Policy)> {
    let n = model.n_states();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyStates {
            states: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if initial_state >= n {
        return Err(Error::Model(format!(
            "initial state {initial_state} out of range"
        )));
    }
    let base: Vec<Action> = (0..n)
        .map(|s| model.feasible_actions(s).next().expect("feasible action"))
        .collect();
    let choice: Vec<usize> = (0..n)
        .filter(|&s| model.feasible_actions(s).count() == 2)
        .collect();

    let mut evaluated = Vec::with_capacity(1 << choice.len());
    for mask in 0u32..(1 << choice.len()) {
        let mut actions = base.clone();
        for (bit, &s) in choice.iter().enumerate() {
            actions[s] = if mask >> bit & 1 == 1 {
                Action::Backscatter
            } else {
                Action::Harvest
            };
        }
        let policy = Policy { actions };
        let v = policy_evaluation_exact(model, &policy, gamma)?;
        evaluated.push((v, policy));
    }
    // The optimum dominates componentwise, so it also has the largest total;
    // ranking by total breaks ties at the initial state toward that policy.
    let total = |v: &ValueFunction| v.values.iter().sum::<f64>();
    let best = (0..evaluated.len()).fold(0, |b, i| {
        let (vi, vb) = (&evaluated[i].0, &evaluated[b].0);
        let at_init = vi.values[initial_state] - vb.values[initial_state];
        if at_init > 0.0 || (at_init == 0.0 && total(vi) > total(vb)) {
            i
        } else {
            b
        }
    });
    let (best_v, _) = &evaluated[best];
    let tol = 1e-9 * best_v.values.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for (v, _) in &evaluated {
        for s in 0..n {
            if v.values[s] > best_v.values[s] + tol {
                return Err(Error::Dominance {
                    state: s,
                    best: best_v.values[s],
                    other: v.values[s],
                });
            }
        }
    }
    Ok(evaluated.swap_remove(best))
}
