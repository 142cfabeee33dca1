//! Binary sequence generation: fill the string `k` bits at a time.
//!
//! An action picks a `k`-bit word (`astar`, state-agnostic) and an unfilled
//! position (`aprime`, state-dependent). The reward of a complete string is
//! `max over modes m of exp(-levenshtein(x, m))`, so strings close to any
//! target mode score near one and everything else decays exponentially.

use rand::Rng;

use crate::env::{Action, Environment, RewardEnv};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The five length-8 building strings modes are synthesized from.
pub const DEFAULT_MODE_BASIS: [&str; 5] =
    ["10100101", "11111111", "11110000", "00001111", "00111100"];

/// Standard Levenshtein distance: unit-cost insert, delete, substitute.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a = a.as_bytes();
    let b = b.as_bytes();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            row[j + 1] = sub.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Mode-distance threshold scaled down from the full-size task, keeping the
/// same threshold-to-length ratio.
pub fn default_mode_distance(n: usize) -> usize {
    ((28.0 * n as f64) / 120.0).round() as usize
}

#[derive(Clone, Debug)]
pub struct BitSeqSpec {
    /// Total bit length of a candidate.
    pub n: usize,
    /// Bits filled per action; must divide `n`.
    pub k: usize,
    /// Target bit strings of length `n`.
    pub modes: Vec<String>,
    /// A mode counts as found when a sample sits at distance strictly less
    /// than this.
    pub mode_distance: usize,
}

impl BitSeqSpec {
    pub fn new(n: usize, k: usize, modes: Vec<String>) -> Self {
        let mode_distance = default_mode_distance(n);
        BitSeqSpec { n, k, modes, mode_distance }
    }
}

/// Synthesize `count` distinct modes, each a concatenation of `n / b` draws
/// from the basis strings (all of length `b`). Duplicates are redrawn.
pub fn synth_modes<R: Rng>(
    basis: &[String],
    count: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    if basis.is_empty() {
        return Err(Error::BadSpec("mode basis is empty".into()));
    }
    let b = basis[0].len();
    if b == 0 || basis.iter().any(|s| s.len() != b) {
        return Err(Error::BadSpec("basis strings must share one nonzero length".into()));
    }
    if !n.is_multiple_of(b) {
        return Err(Error::BadSpec(format!("basis length {b} does not divide n={n}")));
    }
    let blocks = n / b;
    let distinct_basis = {
        let mut sorted: Vec<&String> = basis.iter().collect();
        sorted.sort();
        sorted.dedup();
        sorted.len()
    };
    let capacity = (distinct_basis as f64).powi(blocks as i32);
    if (count as f64) > capacity {
        return Err(Error::Exhausted(format!(
            "{count} modes requested but only {capacity} distinct concatenations exist"
        )));
    }
    let mut modes: Vec<String> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while modes.len() < count {
        attempts += 1;
        if attempts > 10_000 * count.max(1) {
            return Err(Error::Exhausted("rejection sampling stalled".into()));
        }
        let mut m = String::with_capacity(n);
        for _ in 0..blocks {
            m.push_str(&basis[rng.random_range(0..basis.len())]);
        }
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    Ok(modes)
}

/// State of the bit-sequence environment: one optional word per position.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BitSeqState {
    words: Vec<Option<u16>>,
    filled: usize,
}

#[derive(Clone, Debug)]
pub struct BitSeqEnv {
    n: usize,
    k: usize,
    n_positions: usize,
    n_words: usize,
    modes: Vec<String>,
    mode_distance: usize,
}

/// Build the k-bit-fill environment. Errors with [`Error::BadSpec`] when the
/// spec invariants are violated.
pub fn make_bitseq(spec: &BitSeqSpec) -> Result<BitSeqEnv> {
    if spec.k == 0 || spec.n == 0 {
        return Err(Error::BadSpec("n and k must be positive".into()));
    }
    if !spec.n.is_multiple_of(spec.k) {
        return Err(Error::BadSpec(format!("k={} does not divide n={}", spec.k, spec.n)));
    }
    if spec.k > 12 {
        return Err(Error::BadSpec("k larger than 12 is not supported".into()));
    }
    if spec.modes.is_empty() {
        return Err(Error::BadSpec("at least one mode is required".into()));
    }
    for m in &spec.modes {
        if m.len() != spec.n || m.bytes().any(|b| b != b'0' && b != b'1') {
            return Err(Error::BadSpec(format!("mode {m:?} is not a length-{} bit string", spec.n)));
        }
    }
    Ok(BitSeqEnv {
        n: spec.n,
        k: spec.k,
        n_positions: spec.n / spec.k,
        n_words: 1usize << spec.k,
        modes: spec.modes.clone(),
        mode_distance: spec.mode_distance,
    })
}

impl BitSeqEnv {
    pub fn modes(&self) -> &[String] {
        &self.modes
    }

    pub fn mode_distance(&self) -> usize {
        self.mode_distance
    }

    fn word_bits(&self, word: u16) -> String {
        (0..self.k).rev().map(|i| if word >> i & 1 == 1 { '1' } else { '0' }).collect()
    }

    /// Reward of a complete bit string given this environment's modes.
    pub fn reward_of_string<S: Scalar>(&self, x: &str) -> S {
        let best = self.modes.iter().map(|m| levenshtein(x, m)).min().expect("modes nonempty");
        S::of_f64((-(best as f64)).exp())
    }
}

impl Environment for BitSeqEnv {
    type State = BitSeqState;

    fn n_astar(&self) -> usize {
        self.n_words
    }

    fn n_aprime(&self) -> usize {
        self.n_positions
    }

    fn max_depth(&self) -> usize {
        self.n_positions
    }

    fn n_slots(&self) -> usize {
        self.n_positions
    }

    fn alphabet_size(&self) -> usize {
        self.n_words
    }

    fn initial_state(&self) -> BitSeqState {
        BitSeqState { words: vec![None; self.n_positions], filled: 0 }
    }

    fn depth(&self, s: &BitSeqState) -> usize {
        s.filled
    }

    fn is_terminal(&self, s: &BitSeqState) -> bool {
        s.filled == self.n_positions
    }

    fn valid_actions(&self, s: &BitSeqState) -> Vec<Action> {
        let mut out = Vec::with_capacity(self.n_words * (self.n_positions - s.filled));
        for word in 0..self.n_words {
            for (pos, slot) in s.words.iter().enumerate() {
                if slot.is_none() {
                    out.push(Action::new(word, pos));
                }
            }
        }
        out
    }

    fn apply(&self, s: &BitSeqState, a: Action) -> Result<BitSeqState> {
        if a.astar >= self.n_words || a.aprime >= self.n_positions || s.words[a.aprime].is_some() {
            return Err(Error::IllegalAction { action: a, state: self.canonical_string(s) });
        }
        let mut next = s.clone();
        next.words[a.aprime] = Some(a.astar as u16);
        next.filled += 1;
        Ok(next)
    }

    fn parents(&self, s: &BitSeqState) -> Result<Vec<(BitSeqState, Action)>> {
        if s.filled == 0 {
            return Err(Error::NoParent);
        }
        let mut out = Vec::with_capacity(s.filled);
        for (pos, slot) in s.words.iter().enumerate() {
            if let Some(word) = slot {
                let mut parent = s.clone();
                parent.words[pos] = None;
                parent.filled -= 1;
                out.push((parent, Action::new(*word as usize, pos)));
            }
        }
        Ok(out)
    }

    fn slot_symbols(&self, s: &BitSeqState) -> Vec<Option<usize>> {
        s.words.iter().map(|w| w.map(|v| v as usize)).collect()
    }

    fn canonical_string(&self, s: &BitSeqState) -> String {
        let mut out = String::with_capacity(self.n);
        for slot in &s.words {
            match slot {
                Some(word) => out.push_str(&self.word_bits(*word)),
                None => out.extend(std::iter::repeat_n('.', self.k)),
            }
        }
        out
    }

    fn signature(&self) -> String {
        format!("bitseq(n={},k={},modes={})", self.n, self.k, self.modes.len())
    }
}

impl<S: Scalar> RewardEnv<S> for BitSeqEnv {
    fn reward(&self, x: &BitSeqState) -> Result<S> {
        if !self.is_terminal(x) {
            return Err(Error::NotTerminal);
        }
        Ok(self.reward_of_string(&self.canonical_string(x)))
    }
}

/// Reward of a complete bit string under a mode list: the closest mode wins.
pub fn bitseq_reward<S: Scalar>(spec: &BitSeqSpec, x: &str) -> Result<S> {
    let env = make_bitseq(spec)?;
    if x.len() != spec.n {
        return Err(Error::BadSpec(format!("terminal {x:?} is not length {}", spec.n)));
    }
    Ok(env.reward_of_string(x))
}
