//! Exact ground truth for enumerable instances: full state enumeration
//! (optionally region-restricted), partition function and target law, exact
//! flow solutions under the uniform backward policy, and total variation.

use std::collections::{HashMap, HashSet};

use crate::env::{Environment, RewardEnv};
use crate::error::{Error, Result};
use crate::nn::HeadOutputs;
use crate::policy::StateScorer;
use crate::region::RegionMask;
use crate::scalar::Scalar;

/// Default cap on the number of states an enumeration may touch.
pub const DEFAULT_ENUM_BUDGET: usize = 1_000_000;

/// All states grouped by depth, plus the terminal list.
#[derive(Clone, Debug)]
pub struct Enumeration<St> {
    pub states_by_depth: Vec<Vec<St>>,
    pub terminals: Vec<St>,
}

/// Exhaustive, duplicate-free breadth-first expansion from the initial
/// state, following only mask-valid actions when a mask is given.
pub fn enumerate<E: Environment>(
    env: &E,
    mask: Option<&RegionMask>,
) -> Result<Enumeration<E::State>> {
    enumerate_with_budget(env, mask, DEFAULT_ENUM_BUDGET)
}

pub fn enumerate_with_budget<E: Environment>(
    env: &E,
    mask: Option<&RegionMask>,
    budget: usize,
) -> Result<Enumeration<E::State>> {
    let mut states_by_depth: Vec<Vec<E::State>> = vec![vec![env.initial_state()]];
    let mut terminals: Vec<E::State> = Vec::new();
    let mut total = 1usize;
    loop {
        let frontier = states_by_depth.last().unwrap();
        let mut next: Vec<E::State> = Vec::new();
        let mut seen: HashSet<E::State> = HashSet::new();
        for s in frontier {
            if env.is_terminal(s) {
                terminals.push(s.clone());
                continue;
            }
            let mut actions = env.valid_actions(s);
            if let Some(m) = mask {
                actions = m.filter_actions(&actions);
            }
            for a in actions {
                let child = env.apply(s, a)?;
                if seen.insert(child.clone()) {
                    total += 1;
                    if total > budget {
                        return Err(Error::BudgetExceeded { budget });
                    }
                    next.push(child);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        states_by_depth.push(next);
    }
    Ok(Enumeration { states_by_depth, terminals })
}

/// Per-depth state counts `|S_l|` (or `|R_l|` under a mask).
pub fn depth_profile<E: Environment>(env: &E, mask: Option<&RegionMask>) -> Result<Vec<u64>> {
    Ok(enumerate(env, mask)?
        .states_by_depth
        .iter()
        .map(|level| level.len() as u64)
        .collect())
}

/// The exact sampling law: terminals, rewards, partition function and the
/// normalized probabilities.
#[derive(Clone, Debug)]
pub struct ExactTarget<St, S> {
    pub terminals: Vec<(St, S)>,
    pub z: S,
    pub probs: Vec<S>,
}

impl<St, S: Scalar> ExactTarget<St, S> {
    /// Probabilities keyed by canonical terminal string.
    pub fn prob_map<E>(&self, env: &E) -> HashMap<String, S>
    where
        E: Environment<State = St>,
    {
        self.terminals
            .iter()
            .zip(&self.probs)
            .map(|((s, _), p)| (env.canonical_string(s), *p))
            .collect()
    }
}

/// Enumerate the (possibly region-restricted) terminals and normalize their
/// rewards into the target distribution.
pub fn exact_target<S, E>(env: &E, mask: Option<&RegionMask>) -> Result<ExactTarget<E::State, S>>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let enumeration = enumerate(env, mask)?;
    let mut terminals = Vec::with_capacity(enumeration.terminals.len());
    let mut z = S::zero();
    for t in enumeration.terminals {
        let r = env.reward(&t)?;
        z += r;
        terminals.push((t, r));
    }
    if terminals.is_empty() || z <= S::zero() {
        return Err(Error::EmptySpace);
    }
    let probs = terminals.iter().map(|(_, r)| *r / z).collect();
    Ok(ExactTarget { terminals, z, probs })
}

/// Exact state and edge flows realizing the target law under the
/// uniform-over-parents backward policy, exposed as a lookup scorer.
///
/// Loading this table into the objective evaluations drives all four losses
/// to zero, which is the oracle-equivalence check on the training code.
#[derive(Clone, Debug)]
pub struct ExactFlowTable<St, S> {
    flow: HashMap<St, S>,
    edges: HashMap<St, Vec<(usize, S)>>,
    n_actions: usize,
    log_z: S,
}

impl<St: Clone + Eq + std::hash::Hash, S: Scalar> ExactFlowTable<St, S> {
    pub fn log_z(&self) -> S {
        self.log_z
    }

    pub fn z(&self) -> S {
        self.log_z.exp()
    }

    pub fn state_flow(&self, s: &St) -> Option<S> {
        self.flow.get(s).copied()
    }

    /// Linear edge flows out of a state, by action index.
    pub fn edge_flows(&self, s: &St) -> Option<&[(usize, S)]> {
        self.edges.get(s).map(|v| v.as_slice())
    }
}

/// Backward dynamic programming from the terminals: `F(x) = R(x)` at
/// terminals, each state's flow split uniformly over its parents, parent
/// flows accumulated as the sum of their outgoing edges.
pub fn solve_exact_flows<S, E>(env: &E) -> Result<ExactFlowTable<E::State, S>>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let enumeration = enumerate(env, None)?;
    let mut flow: HashMap<E::State, S> = HashMap::new();
    let mut edges: HashMap<E::State, Vec<(usize, S)>> = HashMap::new();
    for level in enumeration.states_by_depth.iter().rev() {
        for s in level {
            let mut f = S::zero();
            if env.is_terminal(s) {
                f = env.reward(s)?;
            } else {
                for a in env.valid_actions(s) {
                    let child = env.apply(s, a)?;
                    let child_flow = flow[&child];
                    let share = child_flow / S::of_usize(env.parents(&child)?.len());
                    f += share;
                    edges.entry(s.clone()).or_default().push((env.action_index(a), share));
                }
            }
            flow.insert(s.clone(), f);
        }
    }
    let z = flow[&env.initial_state()];
    Ok(ExactFlowTable { flow, edges, n_actions: env.n_actions(), log_z: z.ln() })
}

impl<S, E> StateScorer<S, E> for ExactFlowTable<E::State, S>
where
    S: Scalar,
    E: Environment,
{
    fn score(&self, _env: &E, s: &E::State) -> Result<HeadOutputs<S>> {
        let log_flow = self
            .flow
            .get(s)
            .copied()
            .ok_or_else(|| Error::BadSpec("state outside the solved flow table".into()))?
            .ln();
        let mut edge_log = vec![S::neg_infinity(); self.n_actions];
        if let Some(out) = self.edges.get(s) {
            for (idx, f) in out {
                edge_log[*idx] = f.ln();
            }
        }
        Ok(HeadOutputs {
            action_logits: edge_log.clone(),
            log_state_flow: log_flow,
            edge_log_flows: edge_log,
        })
    }

    fn log_z(&self) -> S {
        self.log_z
    }
}

/// Total variation distance between two distributions sharing a support.
pub fn tv_distance<K, S>(p: &HashMap<K, S>, q: &HashMap<K, S>) -> Result<S>
where
    K: Eq + std::hash::Hash,
    S: Scalar,
{
    for (name, dist) in [("p", p), ("q", q)] {
        let sum: S = dist.values().copied().sum();
        if (sum - S::one()).abs() > S::of_f64(1e-9) {
            return Err(Error::BadDistribution(format!("{name} sums to {sum}")));
        }
    }
    let mut acc = S::zero();
    for (k, pv) in p {
        let qv = q.get(k).copied().unwrap_or_else(S::zero);
        acc += (*pv - qv).abs();
    }
    for (k, qv) in q {
        if !p.contains_key(k) {
            acc += qv.abs();
        }
    }
    Ok(acc / S::of_f64(2.0))
}
