//! Prepend/append sequence construction over a four-token alphabet.
//!
//! A state is the partial string; an action picks a token (`astar`) and a
//! side (`aprime`: prepend or append), so every terminal admits many
//! construction orders and the state graph is a DAG. Rewards come from a
//! file-loaded table keyed by the terminal string, with an optional floor
//! for uncovered terminals.
//!
//! Prepending and appending the same token coincide on the empty string and
//! on uniform strings like "AAA"; such actions are canonicalized to the
//! append form so that actions and successor states stay in one-to-one
//! correspondence.

use std::collections::HashMap;
use std::path::Path;

use crate::env::{Action, Environment, RewardEnv};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PAMDP_ALPHABET: [char; 4] = ['A', 'C', 'G', 'U'];

pub const PREPEND: usize = 0;
pub const APPEND: usize = 1;

/// Terminal-string rewards, with an optional strictly positive floor used
/// for terminals absent from the table.
#[derive(Clone, Debug, Default)]
pub struct RewardTable {
    map: HashMap<String, f64>,
    floor: Option<f64>,
}

impl RewardTable {
    pub fn new(map: HashMap<String, f64>, floor: Option<f64>) -> Self {
        RewardTable { map, floor }
    }

    pub fn uniform(floor: f64) -> Self {
        RewardTable { map: HashMap::new(), floor: Some(floor) }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Load a `sequence,reward` CSV file (header required) into a reward table.
pub fn load_reward_table(path: &Path, floor: Option<f64>) -> Result<RewardTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim() == "sequence,reward" => {}
        other => {
            return Err(Error::Parse(format!(
                "reward table must start with header 'sequence,reward', got {other:?}"
            )))
        }
    }
    let mut map = HashMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (seq, val) = line.split_once(',').ok_or_else(|| {
            Error::Parse(format!("reward table line {}: expected 'sequence,reward'", lineno + 2))
        })?;
        let reward: f64 = val.trim().parse().map_err(|e| {
            Error::Parse(format!("reward table line {}: bad reward: {e}", lineno + 2))
        })?;
        map.insert(seq.trim().to_string(), reward);
    }
    Ok(RewardTable { map, floor })
}

#[derive(Clone, Debug)]
pub struct PamdpSpec {
    /// Target sequence length.
    pub length: usize,
    pub rewards: RewardTable,
}

/// A partial sequence as token indices into [`PAMDP_ALPHABET`].
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct PamdpState {
    tokens: Vec<u8>,
}

impl PamdpState {
    fn is_power_of(&self, token: u8) -> bool {
        self.tokens.iter().all(|t| *t == token)
    }
}

#[derive(Clone, Debug)]
pub struct PamdpEnv {
    length: usize,
    rewards: RewardTable,
}

/// Build the prepend/append environment, validating the reward table.
///
/// Without a floor the table must cover all `4^length` terminals; otherwise
/// construction fails with [`Error::MissingReward`].
pub fn make_pamdp(spec: &PamdpSpec) -> Result<PamdpEnv> {
    if spec.length == 0 {
        return Err(Error::BadSpec("length must be positive".into()));
    }
    if let Some(floor) = spec.rewards.floor {
        if !floor.is_finite() || floor <= 0.0 {
            return Err(Error::BadSpec(format!("reward floor {floor} must be positive")));
        }
    }
    for (seq, reward) in &spec.rewards.map {
        if seq.len() != spec.length || !seq.chars().all(|c| PAMDP_ALPHABET.contains(&c)) {
            return Err(Error::BadSpec(format!(
                "reward table key {seq:?} is not a length-{} sequence over ACGU",
                spec.length
            )));
        }
        if !reward.is_finite() || *reward <= 0.0 {
            return Err(Error::BadSpec(format!("reward for {seq:?} must be positive, got {reward}")));
        }
    }
    if spec.rewards.floor.is_none() {
        let needed = 4f64.powi(spec.length as i32);
        if (spec.rewards.map.len() as f64) < needed {
            return Err(Error::MissingReward(format!(
                "table covers {} of {} terminals and no floor is configured",
                spec.rewards.map.len(),
                needed
            )));
        }
    }
    Ok(PamdpEnv { length: spec.length, rewards: spec.rewards.clone() })
}

impl Environment for PamdpEnv {
    type State = PamdpState;

    fn n_astar(&self) -> usize {
        4
    }

    fn n_aprime(&self) -> usize {
        2
    }

    fn max_depth(&self) -> usize {
        self.length
    }

    fn n_slots(&self) -> usize {
        self.length
    }

    fn alphabet_size(&self) -> usize {
        4
    }

    fn initial_state(&self) -> PamdpState {
        PamdpState { tokens: Vec::new() }
    }

    fn depth(&self, s: &PamdpState) -> usize {
        s.tokens.len()
    }

    fn is_terminal(&self, s: &PamdpState) -> bool {
        s.tokens.len() == self.length
    }

    fn valid_actions(&self, s: &PamdpState) -> Vec<Action> {
        if self.is_terminal(s) {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(8);
        for token in 0u8..4 {
            // Prepend and append coincide on powers of the token; keep append.
            if !s.is_power_of(token) {
                out.push(Action::new(token as usize, PREPEND));
            }
            out.push(Action::new(token as usize, APPEND));
        }
        out
    }

    fn apply(&self, s: &PamdpState, a: Action) -> Result<PamdpState> {
        if !self.valid_actions(s).contains(&a) {
            return Err(Error::IllegalAction { action: a, state: self.canonical_string(s) });
        }
        let mut tokens = Vec::with_capacity(s.tokens.len() + 1);
        match a.aprime {
            PREPEND => {
                tokens.push(a.astar as u8);
                tokens.extend_from_slice(&s.tokens);
            }
            _ => {
                tokens.extend_from_slice(&s.tokens);
                tokens.push(a.astar as u8);
            }
        }
        Ok(PamdpState { tokens })
    }

    fn parents(&self, s: &PamdpState) -> Result<Vec<(PamdpState, Action)>> {
        let d = s.tokens.len();
        if d == 0 {
            return Err(Error::NoParent);
        }
        let mut out = Vec::with_capacity(2);
        let first = s.tokens[0];
        let last = s.tokens[d - 1];
        // Undo an append; this construction order always exists.
        let by_append = PamdpState { tokens: s.tokens[..d - 1].to_vec() };
        out.push((by_append, Action::new(last as usize, APPEND)));
        // Undo a prepend, unless that prepend was canonicalized away.
        let by_prepend = PamdpState { tokens: s.tokens[1..].to_vec() };
        if !by_prepend.is_power_of(first) {
            out.push((by_prepend, Action::new(first as usize, PREPEND)));
        }
        Ok(out)
    }

    fn slot_symbols(&self, s: &PamdpState) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = s.tokens.iter().map(|t| Some(*t as usize)).collect();
        out.resize(self.length, None);
        out
    }

    fn canonical_string(&self, s: &PamdpState) -> String {
        s.tokens.iter().map(|t| PAMDP_ALPHABET[*t as usize]).collect()
    }

    fn signature(&self) -> String {
        format!("pamdp(length={},table={})", self.length, self.rewards.len())
    }
}

impl<S: Scalar> RewardEnv<S> for PamdpEnv {
    fn reward(&self, x: &PamdpState) -> Result<S> {
        if !self.is_terminal(x) {
            return Err(Error::NotTerminal);
        }
        let key = self.canonical_string(x);
        match self.rewards.map.get(&key) {
            Some(r) => Ok(S::of_f64(*r)),
            None => match self.rewards.floor {
                Some(f) => Ok(S::of_f64(f)),
                None => Err(Error::MissingReward(key)),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(length: usize) -> PamdpEnv {
        make_pamdp(&PamdpSpec { length, rewards: RewardTable::uniform(1.0) }).unwrap()
    }

    fn state_of(env: &PamdpEnv, s: &str) -> PamdpState {
        let mut st = env.initial_state();
        for c in s.chars() {
            let token = PAMDP_ALPHABET.iter().position(|a| *a == c).unwrap();
            st = env.apply(&st, Action::new(token, APPEND)).unwrap();
        }
        st
    }

    #[test]
    fn empty_string_has_four_actions() {
        let env = env(14);
        assert_eq!(env.valid_actions(&env.initial_state()).len(), 4);
    }

    #[test]
    fn prepend_semantics() {
        let env = env(3);
        let cg = state_of(&env, "CG");
        let acg = env.apply(&cg, Action::new(0, PREPEND)).unwrap();
        assert_eq!(env.canonical_string(&acg), "ACG");
    }

    #[test]
    fn acg_has_two_parents() {
        let env = env(3);
        let acg = state_of(&env, "ACG");
        let parents = env.parents(&acg).unwrap();
        assert_eq!(parents.len(), 2);
        let rendered: Vec<(String, Action)> =
            parents.iter().map(|(p, a)| (env.canonical_string(p), *a)).collect();
        assert!(rendered.contains(&("CG".to_string(), Action::new(0, PREPEND))));
        assert!(rendered.contains(&("AC".to_string(), Action::new(2, APPEND))));
    }

    #[test]
    fn uniform_strings_have_one_parent() {
        let env = env(4);
        let aaaa = state_of(&env, "AAAA");
        let parents = env.parents(&aaaa).unwrap();
        assert_eq!(parents.len(), 1);
        assert_eq!(parents[0].1, Action::new(0, APPEND));
    }

    #[test]
    fn parent_counts_exhaustive_up_to_length_4() {
        // Every terminal has two parents except the uniform strings.
        for length in 2..=4usize {
            let env = env(length);
            let mut count = vec![0u8; length];
            let total = 4usize.pow(length as u32);
            for code in 0..total {
                let mut c = code;
                let mut s = String::new();
                for _ in 0..length {
                    s.push(PAMDP_ALPHABET[c % 4]);
                    c /= 4;
                }
                let st = state_of(&env, &s);
                let uniform = s.chars().all(|ch| ch == s.chars().next().unwrap());
                let expected = if uniform { 1 } else { 2 };
                assert_eq!(env.parents(&st).unwrap().len(), expected, "terminal {s}");
                count[0] = count[0].saturating_add(1);
            }
        }
    }

    #[test]
    fn distinct_actions_give_distinct_children() {
        let env = env(4);
        for seed in ["", "A", "AC", "AAG", "AAA"] {
            let s = state_of(&env, seed);
            let mut children = Vec::new();
            for a in env.valid_actions(&s) {
                children.push(env.canonical_string(&env.apply(&s, a).unwrap()));
            }
            let mut dedup = children.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), children.len(), "duplicate child from {seed:?}");
        }
    }

    #[test]
    fn missing_reward_is_refused() {
        let mut map = HashMap::new();
        map.insert("AA".to_string(), 1.0);
        let spec = PamdpSpec { length: 2, rewards: RewardTable::new(map, None) };
        assert!(matches!(make_pamdp(&spec), Err(Error::MissingReward(_))));
    }

    #[test]
    fn table_lookup_and_floor() {
        let mut map = HashMap::new();
        map.insert("AC".to_string(), 2.5);
        let spec = PamdpSpec { length: 2, rewards: RewardTable::new(map, Some(0.1)) };
        let env = make_pamdp(&spec).unwrap();
        let ac = state_of(&env, "AC");
        let gg = state_of(&env, "GG");
        let r_ac: f64 = env.reward(&ac).unwrap();
        let r_gg: f64 = env.reward(&gg).unwrap();
        assert_eq!(r_ac, 2.5);
        assert_eq!(r_gg, 0.1);
        assert!(matches!(
            <PamdpEnv as RewardEnv<f64>>::reward(&env, &state_of(&env, "A")),
            Err(Error::NotTerminal)
        ));
    }
}
