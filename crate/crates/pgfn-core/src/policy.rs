//! State encoding, masked action distributions and the scorer contract.
//!
//! A [`StateScorer`] maps a state to forward-action logits, a state log-flow
//! and per-action edge log-flows plus a global log-partition scalar. The
//! trained network implements it through the feature encoder; the exact-flow
//! tables from the oracle module implement it by lookup, which is what lets
//! every objective be evaluated against ground truth.

use rand::Rng;

use crate::env::{Environment, RewardEnv};
use crate::error::{Error, Result};
use crate::nn::{HeadOutputs, PolicyParams};
use crate::scalar::Scalar;

/// Fixed-length one-hot encoding: per slot, one position per alphabet symbol
/// plus one for "unfilled"; length `n_slots * (alphabet_size + 1)`.
pub fn encode_state<S: Scalar, E: Environment>(env: &E, s: &E::State) -> Vec<S> {
    let width = env.alphabet_size() + 1;
    let mut out = vec![S::zero(); env.n_slots() * width];
    for (slot, symbol) in env.slot_symbols(s).iter().enumerate() {
        let offset = slot * width;
        match symbol {
            Some(sym) => out[offset + sym] = S::one(),
            None => out[offset + width - 1] = S::one(),
        }
    }
    out
}

pub fn encoding_dim<E: Environment>(env: &E) -> usize {
    env.n_slots() * (env.alphabet_size() + 1)
}

/// Log-softmax over the allowed indices only; disallowed entries come back
/// as negative infinity, carrying exactly zero probability.
pub fn masked_log_softmax<S: Scalar>(logits: &[S], allowed: &[usize]) -> Result<Vec<S>> {
    if allowed.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut max = S::neg_infinity();
    for i in allowed {
        if logits[*i] > max {
            max = logits[*i];
        }
    }
    let mut total = S::zero();
    for i in allowed {
        total += (logits[*i] - max).exp();
    }
    let log_norm = max + total.ln();
    let mut out = vec![S::neg_infinity(); logits.len()];
    for i in allowed {
        out[*i] = logits[*i] - log_norm;
    }
    Ok(out)
}

/// Draw an index from normalized log-probabilities, mixing in a uniform draw
/// over the support with probability `eps_uniform`.
pub fn sample_action<S: Scalar, R: Rng>(
    logprobs: &[S],
    rng: &mut R,
    eps_uniform: f64,
) -> usize {
    let support: Vec<usize> =
        (0..logprobs.len()).filter(|i| logprobs[*i].is_finite()).collect();
    debug_assert!(!support.is_empty(), "sample_action needs a nonempty support");
    if eps_uniform > 0.0 && rng.random::<f64>() < eps_uniform {
        return support[rng.random_range(0..support.len())];
    }
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for i in &support {
        acc += logprobs[*i].exp().as_f64();
        if u < acc {
            return *i;
        }
    }
    *support.last().unwrap()
}

/// Log-probability of one backward step under the uniform-over-parents
/// backward policy.
pub fn backward_log_prob<S: Scalar, E: Environment>(
    env: &E,
    s: &E::State,
    chosen_parent: usize,
) -> Result<S> {
    let parents = env.parents(s)?;
    if chosen_parent >= parents.len() {
        return Err(Error::BadSpec(format!(
            "parent index {chosen_parent} out of {}",
            parents.len()
        )));
    }
    Ok(-S::of_usize(parents.len()).ln())
}

/// Anything that scores states: the trained network or an oracle table.
pub trait StateScorer<S: Scalar, E: Environment> {
    fn score(&self, env: &E, s: &E::State) -> Result<HeadOutputs<S>>;
    fn log_z(&self) -> S;
}

impl<S: Scalar, E: Environment> StateScorer<S, E> for PolicyParams<S> {
    fn score(&self, env: &E, s: &E::State) -> Result<HeadOutputs<S>> {
        self.forward(&encode_state::<S, E>(env, s))
    }

    fn log_z(&self) -> S {
        self.log_z
    }
}

/// Feature-encode a state and run the scorer network; the shared entry point
/// for rollouts and losses.
pub fn policy_forward<S: Scalar, E: Environment>(
    params: &PolicyParams<S>,
    env: &E,
    s: &E::State,
) -> Result<HeadOutputs<S>> {
    params.score(env, s)
}

/// Sample one complete trajectory from the scorer's masked forward policy,
/// restricted to the whole action set (no region). Used by oracle fidelity
/// checks and evaluation sampling.
pub fn sample_trajectory<S, E, Sc, R>(
    env: &E,
    scorer: &Sc,
    rng: &mut R,
    eps_uniform: f64,
) -> Result<crate::env::Trajectory<E::State, S>>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
    R: Rng,
{
    crate::local_search::rollout(env, scorer, &crate::region::RegionMask::full(env.n_astar()), rng, eps_uniform)
}
