//! The sequential-construction environment contract.
//!
//! An environment builds candidates step by step from a single initial state.
//! Actions are factored into a state-agnostic component `astar` (which word,
//! which token, which branch) and a state-dependent component `aprime` (which
//! unfilled slot, which end of the string). Region masks filter on `astar`
//! only, which is what makes a mask meaningful across all states.

use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A factored move: `astar` indexes the state-agnostic action set,
/// `aprime` the state-dependent slot set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Action {
    pub astar: usize,
    pub aprime: usize,
}

impl Action {
    pub fn new(astar: usize, aprime: usize) -> Self {
        Action { astar, aprime }
    }
}

/// Topology of a construction environment: states, factored actions,
/// transitions and their exact inverses.
///
/// Implementations must keep `apply` a pure function, keep `parents` the
/// exact inverse of `apply`, and give distinct successor states to distinct
/// actions taken from the same source state.
pub trait Environment {
    type State: Clone + Eq + Hash + Debug + Send + Sync;

    /// Size of the state-agnostic action set `A*`.
    fn n_astar(&self) -> usize;
    /// Size of the state-dependent slot set `A'`.
    fn n_aprime(&self) -> usize;
    /// Maximum trajectory length; all terminals sit at this depth or less.
    fn max_depth(&self) -> usize;

    /// Number of encoding slots a state occupies.
    fn n_slots(&self) -> usize;
    /// Number of symbols a filled slot can hold.
    fn alphabet_size(&self) -> usize;

    fn initial_state(&self) -> Self::State;
    /// Trajectory length from the initial state; stored, never re-derived.
    fn depth(&self, s: &Self::State) -> usize;
    fn is_terminal(&self, s: &Self::State) -> bool;

    /// All actions legal in `s`; empty exactly when `s` is terminal.
    fn valid_actions(&self, s: &Self::State) -> Vec<Action>;

    /// Apply a legal action. Errors with [`Error::IllegalAction`] otherwise.
    fn apply(&self, s: &Self::State, a: Action) -> Result<Self::State>;

    /// Exhaustive, duplicate-free list of `(parent, action)` pairs with
    /// `apply(parent, action) == s`. Errors with [`Error::NoParent`] at the
    /// initial state.
    fn parents(&self, s: &Self::State) -> Result<Vec<(Self::State, Action)>>;

    /// Per-slot symbol view used by the feature encoder; `None` marks an
    /// unfilled slot.
    fn slot_symbols(&self, s: &Self::State) -> Vec<Option<usize>>;

    /// Stable text form of a state; terminals use it as their identity in
    /// metrics and CSV output.
    fn canonical_string(&self, s: &Self::State) -> String;

    /// Short human-readable identity recorded in checkpoints.
    fn signature(&self) -> String;

    fn n_actions(&self) -> usize {
        self.n_astar() * self.n_aprime()
    }

    /// Dense index of an action in the policy head output.
    fn action_index(&self, a: Action) -> usize {
        a.astar * self.n_aprime() + a.aprime
    }
}

/// An environment with a strictly positive terminal reward.
pub trait RewardEnv<S: Scalar>: Environment {
    /// Reward of a terminal state. Errors with [`Error::NotTerminal`] when
    /// the state still admits actions.
    fn reward(&self, x: &Self::State) -> Result<S>;
}

/// A complete construction path from the initial state to a terminal,
/// with the terminal's reward attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<St, S> {
    pub states: Vec<St>,
    pub actions: Vec<Action>,
    pub reward: S,
}

impl<St, S: Scalar> Trajectory<St, S> {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn terminal(&self) -> &St {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Check every trajectory invariant against the environment: state/action
/// lengths, start at the initial state, legal transitions, terminal end,
/// and the attached reward.
pub fn validate_trajectory<S, E>(env: &E, t: &Trajectory<E::State, S>) -> Result<()>
where
    S: Scalar,
    E: RewardEnv<S>,
{
    let fail = |msg: String| Error::BadSpec(msg);
    if t.states.len() != t.actions.len() + 1 {
        return Err(fail("trajectory length mismatch".into()));
    }
    if t.states[0] != env.initial_state() {
        return Err(fail("trajectory does not start at s0".into()));
    }
    for (i, a) in t.actions.iter().enumerate() {
        if !env.valid_actions(&t.states[i]).contains(a) {
            return Err(fail(format!("illegal action at step {i}")));
        }
        let next = env.apply(&t.states[i], *a)?;
        if next != t.states[i + 1] {
            return Err(fail(format!("transition mismatch at step {i}")));
        }
        if env.depth(&t.states[i + 1]) != env.depth(&t.states[i]) + 1 {
            return Err(fail(format!("depth not additive at step {i}")));
        }
    }
    let terminal = t.terminal();
    if !env.is_terminal(terminal) {
        return Err(fail("trajectory does not end at a terminal".into()));
    }
    let r = env.reward(terminal)?;
    if (r - t.reward).abs() > S::of_f64(1e-12) * (S::one() + r.abs()) {
        return Err(fail("attached reward disagrees with the environment".into()));
    }
    Ok(())
}

/// Sample a trajectory by drawing uniformly over valid actions at each step.
pub fn uniform_rollout<S, E, R>(env: &E, rng: &mut R) -> Result<Trajectory<E::State, S>>
where
    S: Scalar,
    E: RewardEnv<S>,
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
        let a = valid[rng.random_range(0..valid.len())];
        states.push(env.apply(&current, a)?);
        actions.push(a);
    }
    let reward = env.reward(states.last().unwrap())?;
    Ok(Trajectory { states, actions, reward })
}
