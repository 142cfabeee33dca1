//! Region-restricted sampling and trajectory refinement.
//!
//! A refinement backtracks K steps from a trajectory's terminal under the
//! uniform backward policy, reconstructs forward inside the region, then
//! backtracks the rest of the way to the initial state so the result is a
//! complete, valid trajectory. Only the reconstructed suffix is
//! region-restricted; the prefix walks arbitrary parents. Refinements that
//! do not strictly improve the reward are dropped.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, RewardEnv, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{masked_log_softmax, sample_action, StateScorer};
use crate::region::{restrict, RegionMask};
use crate::scalar::Scalar;

/// Acceptance rule for refined trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptRule {
    #[default]
    StrictImprove,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalSearchConfig {
    /// Backtrack depth. `None` defaults to half the environment depth.
    #[serde(rename = "K")]
    pub k_back: Option<usize>,
    /// Refinement repetitions per trajectory; 0 disables local search.
    #[serde(rename = "I")]
    pub refine_reps: usize,
    /// Rollouts per training round.
    pub batch: usize,
    pub accept: AcceptRule,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        LocalSearchConfig {
            k_back: None,
            refine_reps: 0,
            batch: 16,
            accept: AcceptRule::StrictImprove,
        }
    }
}

impl LocalSearchConfig {
    pub fn validate(&self, max_depth: usize) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("ls.batch must be at least 1".into()));
        }
        if let Some(k) = self.k_back {
            if k == 0 || k > max_depth {
                return Err(Error::Config(format!(
                    "ls.K must be in 1..={max_depth}, got {k}"
                )));
            }
        }
        Ok(())
    }

    /// The configured backtrack depth, defaulting to half the trajectory.
    pub fn effective_k(&self, max_depth: usize) -> usize {
        self.k_back.unwrap_or_else(|| (max_depth / 2).max(1))
    }
}

/// Sample one complete trajectory from the masked forward policy, visiting
/// region states only. Propagates [`Error::DeadEnd`] when the mask empties a
/// nonterminal state's actions.
pub fn rollout<S, E, Sc, R>(
    env: &E,
    scorer: &Sc,
    mask: &RegionMask,
    rng: &mut R,
    eps_uniform: f64,
) -> Result<Trajectory<E::State, S>>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
    R: Rng,
{
    let mut states = vec![env.initial_state()];
    let mut actions = Vec::new();
    loop {
        let current = states.last().unwrap().clone();
        let valid = env.valid_actions(&current);
        if valid.is_empty() {
            break;
        }
        let allowed = restrict(mask, &valid)?;
        let allowed_idx: Vec<usize> = allowed.iter().map(|a| env.action_index(*a)).collect();
        let out = scorer.score(env, &current)?;
        let logprobs = masked_log_softmax(&out.action_logits, &allowed_idx)?;
        let idx = sample_action(&logprobs, rng, eps_uniform);
        let action = allowed[allowed_idx.iter().position(|i| *i == idx).unwrap()];
        states.push(env.apply(&current, action)?);
        actions.push(action);
    }
    let reward = env.reward(states.last().unwrap())?;
    Ok(Trajectory { states, actions, reward })
}

/// Walk K uniform backward steps from a terminal. Returns the anchor state
/// and the visited chain, terminal first.
pub fn backtrack_k<E, R>(
    env: &E,
    terminal: &E::State,
    k: usize,
    rng: &mut R,
) -> Result<(E::State, Vec<E::State>)>
where
    E: Environment,
    R: Rng,
{
    let depth = env.depth(terminal);
    if k > depth {
        return Err(Error::DepthUnderflow { k, depth });
    }
    let mut chain = vec![terminal.clone()];
    let mut current = terminal.clone();
    for _ in 0..k {
        let parents = env.parents(&current)?;
        let (parent, _) = &parents[rng.random_range(0..parents.len())];
        current = parent.clone();
        chain.push(current.clone());
    }
    Ok((current, chain))
}

/// Region-restricted forward sampling from an anchor to a terminal. The
/// suffix starts at the anchor; an already-terminal anchor is returned as a
/// single-state suffix.
pub fn reconstruct_k<S, E, Sc, R>(
    env: &E,
    scorer: &Sc,
    mask: &RegionMask,
    anchor: &E::State,
    rng: &mut R,
    eps_uniform: f64,
) -> Result<(Vec<E::State>, Vec<crate::env::Action>)>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
    R: Rng,
{
    let mut states = vec![anchor.clone()];
    let mut actions = Vec::new();
    loop {
        let current = states.last().unwrap().clone();
        let valid = env.valid_actions(&current);
        if valid.is_empty() {
            break;
        }
        let allowed = restrict(mask, &valid)?;
        let allowed_idx: Vec<usize> = allowed.iter().map(|a| env.action_index(*a)).collect();
        let out = scorer.score(env, &current)?;
        let logprobs = masked_log_softmax(&out.action_logits, &allowed_idx)?;
        let idx = sample_action(&logprobs, rng, eps_uniform);
        let action = allowed[allowed_idx.iter().position(|i| *i == idx).unwrap()];
        states.push(env.apply(&current, action)?);
        actions.push(action);
    }
    Ok((states, actions))
}

/// Uniform backward walk from the anchor all the way to the initial state;
/// returned in forward order as a valid prefix ending at the anchor.
pub fn complete_backtrack<E, R>(
    env: &E,
    anchor: &E::State,
    rng: &mut R,
) -> Result<(Vec<E::State>, Vec<crate::env::Action>)>
where
    E: Environment,
    R: Rng,
{
    let mut states = vec![anchor.clone()];
    let mut actions = Vec::new();
    while env.depth(states.last().unwrap()) > 0 {
        let current = states.last().unwrap().clone();
        let parents = env.parents(&current)?;
        let (parent, action) = parents[rng.random_range(0..parents.len())].clone();
        states.push(parent);
        actions.push(action);
    }
    states.reverse();
    actions.reverse();
    Ok((states, actions))
}

/// One refinement pass over a trajectory.
#[derive(Clone, Debug)]
pub struct RefineReport<St, S> {
    /// Refinements with strictly greater reward, kept for training.
    pub accepted: Vec<Trajectory<St, S>>,
    /// Every terminal reached by a reconstruction, accepted or not.
    pub sampled_terminals: Vec<(St, S)>,
    /// Attempts that dead-ended inside the region and were skipped.
    pub dead_ends: usize,
}

/// Repeat backtrack/reconstruct/complete-backtrack `I` times from the
/// original trajectory, keeping the strict improvements.
pub fn refine<S, E, Sc, R>(
    env: &E,
    scorer: &Sc,
    mask: &RegionMask,
    original: &Trajectory<E::State, S>,
    cfg: &LocalSearchConfig,
    rng: &mut R,
) -> Result<RefineReport<E::State, S>>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
    R: Rng,
{
    let mut report =
        RefineReport { accepted: Vec::new(), sampled_terminals: Vec::new(), dead_ends: 0 };
    let k = cfg.effective_k(env.max_depth()).min(env.depth(original.terminal()));
    for _ in 0..cfg.refine_reps {
        let (anchor, _) = backtrack_k(env, original.terminal(), k, rng)?;
        let (suffix_states, suffix_actions) =
            match reconstruct_k(env, scorer, mask, &anchor, rng, 0.0) {
                Ok(pair) => pair,
                Err(Error::DeadEnd) => {
                    report.dead_ends += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
        let (mut states, mut actions) = complete_backtrack(env, &anchor, rng)?;
        states.extend_from_slice(&suffix_states[1..]);
        actions.extend_from_slice(&suffix_actions);
        let terminal = states.last().unwrap().clone();
        let reward = env.reward(&terminal)?;
        report.sampled_terminals.push((terminal, reward));
        if reward > original.reward {
            report.accepted.push(Trajectory { states, actions, reward });
        }
    }
    Ok(report)
}
