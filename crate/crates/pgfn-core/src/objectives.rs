//! Training objectives: Flow Matching, Detailed Balance, Trajectory Balance
//! and Sub-Trajectory Balance.
//!
//! Every loss ranges over the full action set of each visited state; a
//! region mask never enters here, even when the batch was sampled inside
//! one. Values are computed generically over any [`StateScorer`] so the same
//! code evaluates both the trained network and the exact-flow oracle tables;
//! gradients are written against the network directly and cross-checked by
//! finite differences over the scorer path.
//!
//! The flow-matching residual is the per-state balance "total inflow vs
//! reward plus total outflow", squared in log domain with a small epsilon
//! inside both logarithms.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, RewardEnv, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, HeadGrads, PolicyParams};
use crate::policy::{encode_state, masked_log_softmax, StateScorer};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Fm,
    Db,
    Tb,
    #[serde(rename = "subtb")]
    SubTb,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Geometric sub-trajectory weight in (0, 1].
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Epsilon inside the log-domain flow-matching residual.
    #[serde(default = "default_log_epsilon")]
    pub log_epsilon: f64,
}

fn default_lambda() -> f64 {
    0.9
}

fn default_log_epsilon() -> f64 {
    1e-20
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveConfig { kind, lambda: default_lambda(), log_epsilon: default_log_epsilon() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!("lambda must be in (0, 1], got {}", self.lambda)));
        }
        if !self.log_epsilon.is_finite() || self.log_epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "log_epsilon must be positive, got {}",
                self.log_epsilon
            )));
        }
        Ok(())
    }
}

fn valid_indices<E: Environment>(env: &E, s: &E::State) -> Vec<usize> {
    env.valid_actions(s).iter().map(|a| env.action_index(*a)).collect()
}

fn check_batch<St, S>(batch: &[Trajectory<St, S>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

fn ensure_finite<S: Scalar>(value: S, what: &str) -> Result<S> {
    if !value.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(value)
}

/// Dispatch on the configured objective kind.
pub fn loss<S, E, Sc>(
    env: &E,
    scorer: &Sc,
    batch: &[Trajectory<E::State, S>],
    cfg: &ObjectiveConfig,
) -> Result<S>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
{
    match cfg.kind {
        ObjectiveKind::Fm => loss_fm(env, scorer, batch, cfg),
        ObjectiveKind::Db => loss_db(env, scorer, batch, cfg),
        ObjectiveKind::Tb => loss_tb(env, scorer, batch, cfg),
        ObjectiveKind::SubTb => loss_subtb(env, scorer, batch, cfg),
    }
}

/// Flow matching: squared log-domain gap between total inflow and
/// reward-plus-total-outflow at every non-initial state, averaged over all
/// state occurrences in the batch.
pub fn loss_fm<S, E, Sc>(
    env: &E,
    scorer: &Sc,
    batch: &[Trajectory<E::State, S>],
    cfg: &ObjectiveConfig,
) -> Result<S>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
{
    check_batch(batch)?;
    let eps = S::of_f64(cfg.log_epsilon);
    let mut total = S::zero();
    let mut terms = 0usize;
    for t in batch {
        for s in &t.states[1..] {
            let mut inflow = S::zero();
            for (p, a) in env.parents(s)? {
                inflow += scorer.score(env, &p)?.edge_log_flows[env.action_index(a)].exp();
            }
            let mut target = S::zero();
            if env.is_terminal(s) {
                target += env.reward(s)?;
            } else {
                let out = scorer.score(env, s)?.edge_log_flows;
                for a in env.valid_actions(s) {
                    target += out[env.action_index(a)].exp();
                }
            }
            let res = (eps + inflow).ln() - (eps + target).ln();
            total += res * res;
            terms += 1;
        }
    }
    ensure_finite(total / S::of_usize(terms), "flow-matching loss")
}

/// Detailed balance, averaged over every transition in the batch. State
/// flows are pinned to the reward at terminals.
pub fn loss_db<S, E, Sc>(
    env: &E,
    scorer: &Sc,
    batch: &[Trajectory<E::State, S>],
    _cfg: &ObjectiveConfig,
) -> Result<S>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
{
    check_batch(batch)?;
    let mut total = S::zero();
    let mut terms = 0usize;
    for t in batch {
        for i in 0..t.len() {
            let s = &t.states[i];
            let next = &t.states[i + 1];
            let lp_f = {
                let out = scorer.score(env, s)?;
                let allowed = valid_indices(env, s);
                masked_log_softmax(&out.action_logits, &allowed)?
                    [env.action_index(t.actions[i])]
            };
            let lp_b = -S::of_usize(env.parents(next)?.len()).ln();
            let log_f_s = scorer.score(env, s)?.log_state_flow;
            let log_f_next = if env.is_terminal(next) {
                env.reward(next)?.ln()
            } else {
                scorer.score(env, next)?.log_state_flow
            };
            let res = log_f_s + lp_f - log_f_next - lp_b;
            total += res * res;
            terms += 1;
        }
    }
    ensure_finite(total / S::of_usize(terms), "detailed-balance loss")
}

/// Trajectory balance, averaged over trajectories.
pub fn loss_tb<S, E, Sc>(
    env: &E,
    scorer: &Sc,
    batch: &[Trajectory<E::State, S>],
    _cfg: &ObjectiveConfig,
) -> Result<S>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
{
    check_batch(batch)?;
    let mut total = S::zero();
    for t in batch {
        let mut r = scorer.log_z() - t.reward.ln();
        for i in 0..t.len() {
            let s = &t.states[i];
            let out = scorer.score(env, s)?;
            let allowed = valid_indices(env, s);
            r += masked_log_softmax(&out.action_logits, &allowed)?[env.action_index(t.actions[i])];
            r -= -S::of_usize(env.parents(&t.states[i + 1])?.len()).ln();
        }
        total += r * r;
    }
    ensure_finite(total / S::of_usize(batch.len()), "trajectory-balance loss")
}

/// Sub-trajectory balance with geometric length weights, normalized per
/// trajectory, averaged over trajectories.
pub fn loss_subtb<S, E, Sc>(
    env: &E,
    scorer: &Sc,
    batch: &[Trajectory<E::State, S>],
    cfg: &ObjectiveConfig,
) -> Result<S>
where
    S: Scalar,
    E: RewardEnv<S>,
    Sc: StateScorer<S, E>,
{
    check_batch(batch)?;
    let lambda = S::of_f64(cfg.lambda);
    let mut total = S::zero();
    for t in batch {
        let n = t.len();
        // Prefix sums of the forward and backward log-probabilities, plus
        // the pinned log-flows per state.
        let mut lp_f_prefix = vec![S::zero(); n + 1];
        let mut lp_b_prefix = vec![S::zero(); n + 1];
        let mut log_f = Vec::with_capacity(n + 1);
        for i in 0..n {
            let s = &t.states[i];
            let out = scorer.score(env, s)?;
            let allowed = valid_indices(env, s);
            let lp =
                masked_log_softmax(&out.action_logits, &allowed)?[env.action_index(t.actions[i])];
            lp_f_prefix[i + 1] = lp_f_prefix[i] + lp;
            let pb = -S::of_usize(env.parents(&t.states[i + 1])?.len()).ln();
            lp_b_prefix[i + 1] = lp_b_prefix[i] + pb;
            log_f.push(out.log_state_flow);
        }
        let terminal = t.terminal();
        log_f.push(env.reward(terminal)?.ln());

        let mut weighted = S::zero();
        let mut weight_sum = S::zero();
        for i in 0..n {
            for j in (i + 1)..=n {
                let w = lambda.powi((j - i) as i32);
                let res = log_f[i] + (lp_f_prefix[j] - lp_f_prefix[i])
                    - log_f[j]
                    - (lp_b_prefix[j] - lp_b_prefix[i]);
                weighted += w * res * res;
                weight_sum += w;
            }
        }
        total += weighted / weight_sum;
    }
    ensure_finite(total / S::of_usize(batch.len()), "sub-trajectory-balance loss")
}

// ---------------------------------------------------------------------------
// Gradient path
// ---------------------------------------------------------------------------

/// Deduplicated forward evaluations of the network over a batch, with
/// per-evaluation output gradients accumulated before one backward sweep.
struct EvalPool<'a, S: Scalar, E: Environment> {
    env: &'a E,
    params: &'a PolicyParams<S>,
    index: HashMap<E::State, usize>,
    caches: Vec<ForwardCache<S>>,
    grads: Vec<HeadGrads<S>>,
}

impl<'a, S: Scalar, E: Environment> EvalPool<'a, S, E> {
    fn new(env: &'a E, params: &'a PolicyParams<S>) -> Self {
        EvalPool { env, params, index: HashMap::new(), caches: Vec::new(), grads: Vec::new() }
    }

    fn eval(&mut self, s: &E::State) -> Result<usize> {
        if let Some(i) = self.index.get(s) {
            return Ok(*i);
        }
        let features = encode_state::<S, E>(self.env, s);
        self.caches.push(self.params.forward_cached(&features)?);
        self.grads.push(HeadGrads::zero());
        let i = self.caches.len() - 1;
        self.index.insert(s.clone(), i);
        Ok(i)
    }

    fn backprop(self, d_log_z: S) -> PolicyParams<S> {
        let mut grad = self.params.zeros_like();
        for (cache, hg) in self.caches.iter().zip(&self.grads) {
            if !hg.is_zero() {
                self.params.backward(cache, hg, &mut grad);
            }
        }
        grad.log_z = d_log_z;
        grad
    }
}

/// Add `coef * d(log softmax[chosen])/d(logits)` into a logits gradient.
fn add_logprob_grad<S: Scalar>(d_logits: &mut [S], logprobs: &[S], chosen: usize, coef: S) {
    for (d, lp) in d_logits.iter_mut().zip(logprobs) {
        if lp.is_finite() {
            *d -= coef * lp.exp();
        }
    }
    d_logits[chosen] += coef;
}

/// Loss value and exact parameter gradients for the configured objective.
pub fn loss_and_grad<S, E>(
    env: &E,
    params: &PolicyParams<S>,
    batch: &[Trajectory<E::State, S>],
    cfg: &ObjectiveConfig,
) -> Result<(S, PolicyParams<S>)>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    check_batch(batch)?;
    let (value, grad) = match cfg.kind {
        ObjectiveKind::Fm => grad_fm(env, params, batch, cfg)?,
        ObjectiveKind::Db => grad_db(env, params, batch)?,
        ObjectiveKind::Tb => grad_tb(env, params, batch)?,
        ObjectiveKind::SubTb => grad_subtb(env, params, batch, cfg)?,
    };
    let value = ensure_finite(value, "objective loss")?;
    if !grad.all_finite() {
        return Err(Error::NonFinite("objective gradient".into()));
    }
    Ok((value, grad))
}

fn grad_tb<S, E>(
    env: &E,
    params: &PolicyParams<S>,
    batch: &[Trajectory<E::State, S>],
) -> Result<(S, PolicyParams<S>)>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let mut pool = EvalPool::new(env, params);
    let inv_b = S::one() / S::of_usize(batch.len());
    let mut total = S::zero();
    let mut d_log_z = S::zero();
    // Residuals first, touched evaluations recorded along the way.
    let mut per_step: Vec<(usize, Vec<S>, usize)> = Vec::new();
    let mut residuals = Vec::with_capacity(batch.len());
    for t in batch {
        let mut r = params.log_z - t.reward.ln();
        let start = per_step.len();
        for i in 0..t.len() {
            let s = &t.states[i];
            let id = pool.eval(s)?;
            let allowed = valid_indices(env, s);
            let lp = masked_log_softmax(&pool.caches[id].out.action_logits, &allowed)?;
            let chosen = env.action_index(t.actions[i]);
            r += lp[chosen];
            r += S::of_usize(env.parents(&t.states[i + 1])?.len()).ln();
            per_step.push((id, lp, chosen));
        }
        residuals.push((r, start, per_step.len()));
        total += r * r;
    }
    for (r, start, end) in &residuals {
        let coef = S::of_f64(2.0) * *r * inv_b;
        d_log_z += coef;
        for (id, lp, chosen) in &per_step[*start..*end] {
            let n = lp.len();
            add_logprob_grad(pool.grads[*id].logits_mut(n), lp, *chosen, coef);
        }
    }
    Ok((total * inv_b, pool.backprop(d_log_z)))
}

fn grad_db<S, E>(
    env: &E,
    params: &PolicyParams<S>,
    batch: &[Trajectory<E::State, S>],
) -> Result<(S, PolicyParams<S>)>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let mut pool = EvalPool::new(env, params);
    let transitions: usize = batch.iter().map(|t| t.len()).sum();
    let inv_t = S::one() / S::of_usize(transitions);
    let two = S::of_f64(2.0);
    let mut total = S::zero();
    for t in batch {
        for i in 0..t.len() {
            let s = &t.states[i];
            let next = &t.states[i + 1];
            let id_s = pool.eval(s)?;
            let allowed = valid_indices(env, s);
            let lp = masked_log_softmax(&pool.caches[id_s].out.action_logits, &allowed)?;
            let chosen = env.action_index(t.actions[i]);
            let lp_b = -S::of_usize(env.parents(next)?.len()).ln();
            let terminal_next = env.is_terminal(next);
            let (log_f_next, id_next) = if terminal_next {
                (env.reward(next)?.ln(), None)
            } else {
                let id = pool.eval(next)?;
                (pool.caches[id].out.log_state_flow, Some(id))
            };
            let res = pool.caches[id_s].out.log_state_flow + lp[chosen] - log_f_next - lp_b;
            total += res * res;

            let coef = two * res * inv_t;
            pool.grads[id_s].d_log_flow += coef;
            let n = lp.len();
            add_logprob_grad(pool.grads[id_s].logits_mut(n), &lp, chosen, coef);
            if let Some(id) = id_next {
                pool.grads[id].d_log_flow -= coef;
            }
        }
    }
    Ok((total * inv_t, pool.backprop(S::zero())))
}

fn grad_subtb<S, E>(
    env: &E,
    params: &PolicyParams<S>,
    batch: &[Trajectory<E::State, S>],
    cfg: &ObjectiveConfig,
) -> Result<(S, PolicyParams<S>)>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let mut pool = EvalPool::new(env, params);
    let lambda = S::of_f64(cfg.lambda);
    let inv_b = S::one() / S::of_usize(batch.len());
    let two = S::of_f64(2.0);
    let mut total = S::zero();
    for t in batch {
        let n = t.len();
        let mut ids = Vec::with_capacity(n);
        let mut lps = Vec::with_capacity(n);
        let mut chosens = Vec::with_capacity(n);
        let mut lp_f_prefix = vec![S::zero(); n + 1];
        let mut lp_b_prefix = vec![S::zero(); n + 1];
        let mut log_f = Vec::with_capacity(n + 1);
        for i in 0..n {
            let s = &t.states[i];
            let id = pool.eval(s)?;
            let allowed = valid_indices(env, s);
            let lp = masked_log_softmax(&pool.caches[id].out.action_logits, &allowed)?;
            let chosen = env.action_index(t.actions[i]);
            lp_f_prefix[i + 1] = lp_f_prefix[i] + lp[chosen];
            lp_b_prefix[i + 1] =
                lp_b_prefix[i] - S::of_usize(env.parents(&t.states[i + 1])?.len()).ln();
            log_f.push(pool.caches[id].out.log_state_flow);
            ids.push(id);
            lps.push(lp);
            chosens.push(chosen);
        }
        log_f.push(env.reward(t.terminal())?.ln());

        let mut weight_sum = S::zero();
        for i in 0..n {
            for j in (i + 1)..=n {
                weight_sum += lambda.powi((j - i) as i32);
            }
        }
        let mut traj_loss = S::zero();
        let mut step_coef = vec![S::zero(); n];
        let mut flow_coef = vec![S::zero(); n + 1];
        for i in 0..n {
            for j in (i + 1)..=n {
                let w = lambda.powi((j - i) as i32);
                let res = log_f[i] + (lp_f_prefix[j] - lp_f_prefix[i])
                    - log_f[j]
                    - (lp_b_prefix[j] - lp_b_prefix[i]);
                traj_loss += w * res * res;
                let c = two * w * res / weight_sum * inv_b;
                flow_coef[i] += c;
                flow_coef[j] -= c;
                for coef in step_coef.iter_mut().take(j).skip(i) {
                    *coef += c;
                }
            }
        }
        total += traj_loss / weight_sum;
        for i in 0..n {
            let id = ids[i];
            pool.grads[id].d_log_flow += flow_coef[i];
            if !step_coef[i].is_zero() {
                let nact = lps[i].len();
                add_logprob_grad(pool.grads[id].logits_mut(nact), &lps[i], chosens[i], step_coef[i]);
            }
        }
        // flow_coef[n] belongs to the terminal, whose flow is pinned.
    }
    Ok((total * inv_b, pool.backprop(S::zero())))
}

fn grad_fm<S, E>(
    env: &E,
    params: &PolicyParams<S>,
    batch: &[Trajectory<E::State, S>],
    cfg: &ObjectiveConfig,
) -> Result<(S, PolicyParams<S>)>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let mut pool = EvalPool::new(env, params);
    let eps = S::of_f64(cfg.log_epsilon);
    let two = S::of_f64(2.0);
    let occurrences: usize = batch.iter().map(|t| t.len()).sum();
    let inv_n = S::one() / S::of_usize(occurrences);
    let mut total = S::zero();
    for t in batch {
        for s in &t.states[1..] {
            let parents = env.parents(s)?;
            let mut inflow = S::zero();
            let mut in_edges = Vec::with_capacity(parents.len());
            for (p, a) in &parents {
                let id = pool.eval(p)?;
                let idx = env.action_index(*a);
                let f = pool.caches[id].out.edge_log_flows[idx].exp();
                inflow += f;
                in_edges.push((id, idx, f));
            }
            let terminal = env.is_terminal(s);
            let mut target = S::zero();
            let mut out_edges = Vec::new();
            if terminal {
                target += env.reward(s)?;
            } else {
                let id = pool.eval(s)?;
                for a in env.valid_actions(s) {
                    let idx = env.action_index(a);
                    let f = pool.caches[id].out.edge_log_flows[idx].exp();
                    target += f;
                    out_edges.push((id, idx, f));
                }
            }
            let res = (eps + inflow).ln() - (eps + target).ln();
            total += res * res;

            let coef = two * res * inv_n;
            let d_in = coef / (eps + inflow);
            for (id, idx, f) in in_edges {
                let n = pool.caches[id].out.edge_log_flows.len();
                pool.grads[id].edge_mut(n)[idx] += d_in * f;
            }
            let d_out = coef / (eps + target);
            for (id, idx, f) in out_edges {
                let n = pool.caches[id].out.edge_log_flows.len();
                pool.grads[id].edge_mut(n)[idx] -= d_out * f;
            }
        }
    }
    Ok((total * inv_n, pool.backprop(S::zero())))
}
