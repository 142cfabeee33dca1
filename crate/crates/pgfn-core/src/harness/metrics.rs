//! Run metrics: cumulative mode discovery and top-k reward tracking.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use crate::tasks::levenshtein;

/// Number of modes hit by a sample set: a mode counts when some sample sits
/// at edit distance strictly below `d`.
pub fn count_modes_bitseq(samples: &[String], modes: &[String], d: usize) -> usize {
    modes
        .iter()
        .filter(|m| samples.iter().any(|s| levenshtein(s, m) < d))
        .count()
}

/// What counts as a mode for a task.
#[derive(Clone, Debug)]
pub enum ModeRule {
    /// Edit-distance ball around each target sequence.
    Distance { modes: Vec<String>, d: usize },
    /// Distinct terminals with reward strictly above the threshold.
    Threshold { t: f64 },
}

/// Cumulative mode accounting: each mode is counted at most once per run.
#[derive(Clone, Debug)]
pub struct ModeTracker {
    rule: ModeRule,
    found_modes: HashSet<usize>,
    found_high: HashSet<String>,
}

impl ModeTracker {
    pub fn new(rule: ModeRule) -> Self {
        ModeTracker { rule, found_modes: HashSet::new(), found_high: HashSet::new() }
    }

    /// Observe one terminal; returns how many new modes it revealed.
    pub fn observe(&mut self, terminal: &str, reward: f64) -> u64 {
        match &self.rule {
            ModeRule::Distance { modes, d } => {
                let mut new = 0;
                for (i, m) in modes.iter().enumerate() {
                    if !self.found_modes.contains(&i) && levenshtein(terminal, m) < *d {
                        self.found_modes.insert(i);
                        new += 1;
                    }
                }
                new
            }
            ModeRule::Threshold { t } => {
                if reward > *t && self.found_high.insert(terminal.to_string()) {
                    1
                } else {
                    0
                }
            }
        }
    }

    pub fn total(&self) -> u64 {
        match &self.rule {
            ModeRule::Distance { .. } => self.found_modes.len() as u64,
            ModeRule::Threshold { .. } => self.found_high.len() as u64,
        }
    }
}

/// Mean of the `k` highest rewards among distinct terminals; over everything
/// seen when fewer than `k` exist.
pub fn r_topk(rewards_of_distinct: &[f64], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    if rewards_of_distinct.is_empty() {
        return 0.0;
    }
    let mut sorted = rewards_of_distinct.to_vec();
    sorted.sort_by(f64::total_cmp);
    let take = k.min(sorted.len());
    sorted.iter().rev().take(take).sum::<f64>() / take as f64
}

#[derive(Clone, Copy, PartialEq)]
struct Total(f64);

impl Eq for Total {}

impl PartialOrd for Total {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Total {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Incremental top-k over distinct terminals, keyed by canonical string.
#[derive(Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Total>>,
    seen: HashSet<String>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "k must be at least 1");
        TopK { k, heap: BinaryHeap::new(), seen: HashSet::new() }
    }

    pub fn observe(&mut self, terminal: &str, reward: f64) {
        if !self.seen.insert(terminal.to_string()) {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Reverse(Total(reward)));
        } else if let Some(Reverse(Total(low))) = self.heap.peek() {
            if reward > *low {
                self.heap.pop();
                self.heap.push(Reverse(Total(reward)));
            }
        }
    }

    pub fn value(&self) -> f64 {
        if self.heap.is_empty() {
            return 0.0;
        }
        self.heap.iter().map(|Reverse(Total(v))| v).sum::<f64>() / self.heap.len() as f64
    }

    pub fn distinct(&self) -> usize {
        self.seen.len()
    }
}
