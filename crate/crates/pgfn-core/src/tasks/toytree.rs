//! A small tree-structured environment used as the verification oracle.
//!
//! Every state has exactly one parent and `branching` children, so the
//! per-depth region-size law can be checked exactly. Each depth owns its own
//! block of state-agnostic action indices (`n_astar = branching * depth`, the
//! block for depth `t` being `t*branching .. (t+1)*branching`); a root-to-node
//! path therefore touches one index per block and the membership events of a
//! node's constructing actions stay independent under Bernoulli masks.

use crate::env::{Action, Environment, RewardEnv};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named analytic leaf rewards.
#[derive(Clone, Debug, PartialEq)]
pub enum ToyTreeReward {
    /// Every leaf scores 1.
    Uniform,
    /// `offset + slope * leaf_index`, with the leaf path read as a base-`branching` number.
    IndexAffine { offset: f64, slope: f64 },
    /// `exp(-scale * sum(branch indices))`.
    SumExp { scale: f64 },
}

#[derive(Clone, Debug)]
pub struct ToyTreeSpec {
    pub branching: usize,
    pub depth: usize,
    pub reward: ToyTreeReward,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ToyTreeState {
    path: Vec<u16>,
}

impl ToyTreeState {
    pub fn path(&self) -> &[u16] {
        &self.path
    }
}

#[derive(Clone, Debug)]
pub struct ToyTreeEnv {
    branching: usize,
    depth: usize,
    reward: ToyTreeReward,
}

pub fn make_toytree(spec: &ToyTreeSpec) -> Result<ToyTreeEnv> {
    if spec.branching < 2 {
        return Err(Error::BadSpec("branching must be at least 2".into()));
    }
    if spec.depth < 1 {
        return Err(Error::BadSpec("depth must be at least 1".into()));
    }
    if spec.branching > 36 {
        return Err(Error::BadSpec("branching larger than 36 is not supported".into()));
    }
    if let ToyTreeReward::IndexAffine { offset, slope } = spec.reward {
        let leaves = (spec.branching as f64).powi(spec.depth as i32);
        if !offset.is_finite() || offset <= 0.0 || slope < 0.0 || offset + slope * (leaves - 1.0) <= 0.0 {
            return Err(Error::BadSpec("index_affine rewards must stay positive".into()));
        }
    }
    Ok(ToyTreeEnv { branching: spec.branching, depth: spec.depth, reward: spec.reward.clone() })
}

impl ToyTreeEnv {
    pub fn branching(&self) -> usize {
        self.branching
    }

    fn leaf_index(&self, path: &[u16]) -> f64 {
        let mut idx = 0f64;
        for b in path {
            idx = idx * self.branching as f64 + *b as f64;
        }
        idx
    }
}

impl Environment for ToyTreeEnv {
    type State = ToyTreeState;

    fn n_astar(&self) -> usize {
        self.branching * self.depth
    }

    fn n_aprime(&self) -> usize {
        1
    }

    fn max_depth(&self) -> usize {
        self.depth
    }

    fn n_slots(&self) -> usize {
        self.depth
    }

    fn alphabet_size(&self) -> usize {
        self.branching
    }

    fn initial_state(&self) -> ToyTreeState {
        ToyTreeState { path: Vec::new() }
    }

    fn depth(&self, s: &ToyTreeState) -> usize {
        s.path.len()
    }

    fn is_terminal(&self, s: &ToyTreeState) -> bool {
        s.path.len() == self.depth
    }

    fn valid_actions(&self, s: &ToyTreeState) -> Vec<Action> {
        if self.is_terminal(s) {
            return Vec::new();
        }
        let block = s.path.len() * self.branching;
        (0..self.branching).map(|b| Action::new(block + b, 0)).collect()
    }

    fn apply(&self, s: &ToyTreeState, a: Action) -> Result<ToyTreeState> {
        let block = s.path.len() * self.branching;
        let legal = !self.is_terminal(s)
            && a.aprime == 0
            && a.astar >= block
            && a.astar < block + self.branching;
        if !legal {
            return Err(Error::IllegalAction { action: a, state: self.canonical_string(s) });
        }
        let mut path = s.path.clone();
        path.push((a.astar - block) as u16);
        Ok(ToyTreeState { path })
    }

    fn parents(&self, s: &ToyTreeState) -> Result<Vec<(ToyTreeState, Action)>> {
        if s.path.is_empty() {
            return Err(Error::NoParent);
        }
        let mut path = s.path.clone();
        let branch = path.pop().unwrap() as usize;
        let block = path.len() * self.branching;
        Ok(vec![(ToyTreeState { path }, Action::new(block + branch, 0))])
    }

    fn slot_symbols(&self, s: &ToyTreeState) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = s.path.iter().map(|b| Some(*b as usize)).collect();
        out.resize(self.depth, None);
        out
    }

    fn canonical_string(&self, s: &ToyTreeState) -> String {
        s.path
            .iter()
            .map(|b| char::from_digit(u32::from(*b), 36).expect("branching <= 36"))
            .collect()
    }

    fn signature(&self) -> String {
        format!("toytree(branching={},depth={})", self.branching, self.depth)
    }
}

impl<S: Scalar> RewardEnv<S> for ToyTreeEnv {
    fn reward(&self, x: &ToyTreeState) -> Result<S> {
        if !self.is_terminal(x) {
            return Err(Error::NotTerminal);
        }
        let r = match &self.reward {
            ToyTreeReward::Uniform => 1.0,
            ToyTreeReward::IndexAffine { offset, slope } => offset + slope * self.leaf_index(&x.path),
            ToyTreeReward::SumExp { scale } => {
                let sum: f64 = x.path.iter().map(|b| f64::from(*b)).sum();
                (-scale * sum).exp()
            }
        };
        Ok(S::of_f64(r))
    }
}
