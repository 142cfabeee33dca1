//! The differentiable scorer: a small dense trunk with tanh nonlinearities
//! and three linear heads (action logits, state log-flow, edge log-flows),
//! plus a free log-partition scalar. Gradients are hand-written reverse-mode
//! and checked against central finite differences in the test suites.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense layer, weights row-major `n_out x n_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { n_in, n_out, w: vec![S::zero(); n_in * n_out], b: vec![S::zero(); n_out] }
    }

    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        let mut draw = || S::of_f64((rng.random::<f64>() * 2.0 - 1.0) * bound);
        let w = (0..n_in * n_out).map(|_| draw()).collect();
        let b = (0..n_out).map(|_| draw()).collect();
        Dense { n_in, n_out, w, b }
    }

    fn forward(&self, x: &[S]) -> Vec<S> {
        let mut out = self.b.clone();
        for (row, o) in out.iter_mut().enumerate() {
            let w = &self.w[row * self.n_in..(row + 1) * self.n_in];
            let mut acc = S::zero();
            for (wi, xi) in w.iter().zip(x) {
                acc += *wi * *xi;
            }
            *o += acc;
        }
        out
    }

    /// Accumulate parameter gradients and the gradient w.r.t. the input.
    fn backward(&self, x: &[S], d_out: &[S], grad: &mut Dense<S>, d_x: &mut [S]) {
        for (row, d) in d_out.iter().enumerate() {
            if d.is_zero() {
                continue;
            }
            let w = &self.w[row * self.n_in..(row + 1) * self.n_in];
            let gw = &mut grad.w[row * self.n_in..(row + 1) * self.n_in];
            for i in 0..self.n_in {
                gw[i] += *d * x[i];
                d_x[i] += w[i] * *d;
            }
            grad.b[row] += *d;
        }
    }
}

/// Scorer outputs at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs<S> {
    pub action_logits: Vec<S>,
    pub log_state_flow: S,
    pub edge_log_flows: Vec<S>,
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<S> {
    pub trunk: Vec<Dense<S>>,
    pub head_logits: Dense<S>,
    pub head_state_flow: Dense<S>,
    pub head_edge_flow: Dense<S>,
    pub log_z: S,
}

impl<S: Scalar> PolicyParams<S> {
    /// Randomly initialized network: `input_dim -> hidden.. -> heads`.
    pub fn init<R: Rng>(input_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for h in hidden {
            trunk.push(Dense::init(width, *h, rng));
            width = *h;
        }
        PolicyParams {
            trunk,
            head_logits: Dense::init(width, n_actions, rng),
            head_state_flow: Dense::init(width, 1, rng),
            head_edge_flow: Dense::init(width, n_actions, rng),
            log_z: S::zero(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            trunk: self.trunk.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
            head_logits: Dense::zeros(self.head_logits.n_in, self.head_logits.n_out),
            head_state_flow: Dense::zeros(self.head_state_flow.n_in, self.head_state_flow.n_out),
            head_edge_flow: Dense::zeros(self.head_edge_flow.n_in, self.head_edge_flow.n_out),
            log_z: S::zero(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.first().map_or(self.head_logits.n_in, |l| l.n_in)
    }

    pub fn n_actions(&self) -> usize {
        self.head_logits.n_out
    }

    fn layers(&self) -> impl Iterator<Item = &Dense<S>> {
        self.trunk
            .iter()
            .chain([&self.head_logits, &self.head_state_flow, &self.head_edge_flow])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<S>> {
        self.trunk
            .iter_mut()
            .chain([&mut self.head_logits, &mut self.head_state_flow, &mut self.head_edge_flow])
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum::<usize>() + 1
    }

    /// Parameters in a fixed order: trunk layers (weights then bias), the
    /// three heads, then `log_z` last.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.push(self.log_z);
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[S]) {
        let mut at = 0;
        for l in self.layers_mut() {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        self.log_z = flat[at];
        debug_assert_eq!(at + 1, flat.len());
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// Run the trunk and heads on a feature vector.
    pub fn forward(&self, features: &[S]) -> Result<HeadOutputs<S>> {
        Ok(self.forward_cached(features)?.out)
    }

    /// Forward pass keeping every intermediate activation for backprop.
    pub fn forward_cached(&self, features: &[S]) -> Result<ForwardCache<S>> {
        if features.len() != self.input_dim() {
            return Err(Error::ShapeMismatch { got: features.len(), expected: self.input_dim() });
        }
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(self.trunk.len());
        let mut x = features;
        for layer in &self.trunk {
            let mut z = layer.forward(x);
            for v in &mut z {
                *v = v.tanh();
            }
            acts.push(z);
            x = acts.last().unwrap();
        }
        let out = HeadOutputs {
            action_logits: self.head_logits.forward(x),
            log_state_flow: self.head_state_flow.forward(x)[0],
            edge_log_flows: self.head_edge_flow.forward(x),
        };
        Ok(ForwardCache { features: features.to_vec(), trunk_acts: acts, out })
    }

    /// Reverse pass for one cached evaluation, accumulating into `grad`.
    pub fn backward(&self, cache: &ForwardCache<S>, d_out: &HeadGrads<S>, grad: &mut PolicyParams<S>) {
        let top: &[S] = cache.trunk_acts.last().map_or(&cache.features, |a| a);
        let mut d_top = vec![S::zero(); top.len()];
        if let Some(d_logits) = &d_out.d_logits {
            self.head_logits.backward(top, d_logits, &mut grad.head_logits, &mut d_top);
        }
        if !d_out.d_log_flow.is_zero() {
            self.head_state_flow.backward(
                top,
                &[d_out.d_log_flow],
                &mut grad.head_state_flow,
                &mut d_top,
            );
        }
        if let Some(d_edge) = &d_out.d_edge {
            self.head_edge_flow.backward(top, d_edge, &mut grad.head_edge_flow, &mut d_top);
        }
        let mut d_act = d_top;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let act = &cache.trunk_acts[i];
            // d/dz tanh(z) = 1 - tanh(z)^2, with tanh(z) already cached.
            let mut d_z = d_act;
            for (dz, a) in d_z.iter_mut().zip(act) {
                *dz *= S::one() - *a * *a;
            }
            let input: &[S] = if i == 0 { &cache.features } else { &cache.trunk_acts[i - 1] };
            let mut d_input = vec![S::zero(); input.len()];
            layer.backward(input, &d_z, &mut grad.trunk[i], &mut d_input);
            d_act = d_input;
        }
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<S> {
    pub features: Vec<S>,
    pub trunk_acts: Vec<Vec<S>>,
    pub out: HeadOutputs<S>,
}

/// Loss gradients w.r.t. the head outputs of one evaluation.
#[derive(Clone, Debug)]
pub struct HeadGrads<S> {
    pub d_logits: Option<Vec<S>>,
    pub d_log_flow: S,
    pub d_edge: Option<Vec<S>>,
}

impl<S: Scalar> HeadGrads<S> {
    pub fn zero() -> Self {
        HeadGrads { d_logits: None, d_log_flow: S::zero(), d_edge: None }
    }

    pub fn logits_mut(&mut self, n: usize) -> &mut Vec<S> {
        self.d_logits.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn edge_mut(&mut self, n: usize) -> &mut Vec<S> {
        self.d_edge.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn is_zero(&self) -> bool {
        self.d_logits.is_none() && self.d_edge.is_none() && self.d_log_flow.is_zero()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment accumulators, one entry per flattened parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(param_count: usize, cfg: AdamConfig) -> Self {
        OptimizerState { m: vec![S::zero(); param_count], v: vec![S::zero(); param_count], step: 0, cfg }
    }
}

/// One bias-corrected adaptive-moment update, in place.
pub fn adam_step<S: Scalar>(
    opt: &mut OptimizerState<S>,
    params: &mut PolicyParams<S>,
    grads: &PolicyParams<S>,
) {
    opt.step += 1;
    let b1 = S::of_f64(opt.cfg.beta1);
    let b2 = S::of_f64(opt.cfg.beta2);
    let lr = S::of_f64(opt.cfg.lr);
    let eps = S::of_f64(opt.cfg.eps);
    let corr1 = S::one() - S::of_f64(opt.cfg.beta1.powi(opt.step as i32));
    let corr2 = S::one() - S::of_f64(opt.cfg.beta2.powi(opt.step as i32));
    let mut theta = params.flatten();
    let g = grads.flatten();
    for i in 0..theta.len() {
        let gi = g[i];
        opt.m[i] = b1 * opt.m[i] + (S::one() - b1) * gi;
        opt.v[i] = b2 * opt.v[i] + (S::one() - b2) * gi * gi;
        let m_hat = opt.m[i] / corr1;
        let v_hat = opt.v[i] / corr2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    params.assign_from_flat(&theta);
}

/// Central finite differences of a scalar loss over every parameter.
///
/// The independent oracle for gradient checks; quadratic accuracy in `h`.
pub fn finite_difference_gradient<S, F>(
    f: F,
    params: &PolicyParams<S>,
    h: f64,
) -> Result<Vec<S>>
where
    S: Scalar,
    F: Fn(&PolicyParams<S>) -> Result<S>,
{
    let base = params.flatten();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let step = S::of_f64(h);
    for i in 0..base.len() {
        let mut theta = base.clone();
        theta[i] = base[i] + step;
        probe.assign_from_flat(&theta);
        let up = f(&probe)?;
        theta[i] = base[i] - step;
        probe.assign_from_flat(&theta);
        let down = f(&probe)?;
        out.push((up - down) / (S::of_f64(2.0) * step));
    }
    Ok(out)
}

/// Relative disagreement used by the gradient checks, floored so that
/// near-zero entries compare absolutely.
pub fn gradcheck_rel_err<S: Scalar>(analytic: &[S], numeric: &[S]) -> f64 {
    let floor = 1e-5;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let a = a.as_f64();
            let n = n.as_f64();
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
