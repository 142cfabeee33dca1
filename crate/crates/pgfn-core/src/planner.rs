//! The region planner: per-component score statistics, the switch decision
//! rule, and proportional selection of the next region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::region::{RegionConfig, RegionMask};
use crate::scalar::Scalar;

/// Initial value of both accumulators; keeps scores finite before the first
/// observation and gives untouched components an optimistic score.
pub const SCORE_INIT: f64 = 0.01;

/// Historical reward sums and occurrence counts per `astar` component.
///
/// The table persists across region switches; the selection distribution is
/// expected to evolve over the whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable<S> {
    pub hr: Vec<S>,
    pub cnt: Vec<S>,
}

impl<S: Scalar> ScoreTable<S> {
    pub fn new(n_astar: usize) -> Self {
        ScoreTable {
            hr: vec![S::of_f64(SCORE_INIT); n_astar],
            cnt: vec![S::of_f64(SCORE_INIT); n_astar],
        }
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// `score(i) = (HR(i) + 1) / CNT(i)`.
    pub fn score(&self, i: usize) -> S {
        (self.hr[i] + S::one()) / self.cnt[i]
    }

    pub fn scores(&self) -> Vec<S> {
        (0..self.len()).map(|i| self.score(i)).collect()
    }

    /// Index of the highest-scoring component.
    pub fn top_astar(&self) -> usize {
        let scores = self.scores();
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        best
    }
}

/// Fold a batch of trajectories into the table: every occurrence of an
/// `astar` component adds the trajectory's reward to `HR` and one to `CNT`;
/// a component used twice in one trajectory is counted twice.
pub fn update_scores<S: Scalar, St>(table: &mut ScoreTable<S>, batch: &[Trajectory<St, S>]) {
    for t in batch {
        for a in &t.actions {
            table.hr[a.astar] += t.reward;
            table.cnt[a.astar] += S::one();
        }
    }
}

/// Selection probabilities proportional to scores.
pub fn action_distribution<S: Scalar>(table: &ScoreTable<S>) -> Vec<S> {
    let scores = table.scores();
    let total: S = scores.iter().copied().sum();
    scores.iter().map(|s| *s / total).collect()
}

/// Which history the decision rule averages over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgSource {
    /// Average of the difference array; dimensionally consistent with the
    /// guards and the default.
    Diff,
    /// Average of the raw mode-count history, as the decision rule prints it.
    His,
}

/// State of the region-switch decision rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionState {
    /// Minimum number of rounds to spend in a region before switching.
    pub min_steps: usize,
    /// Rounds spent in the current region; reset on every switch.
    pub step: usize,
    /// Index of the latest observed iteration (`his.len() - 1` once nonempty).
    pub iter: usize,
    /// Newly found modes per iteration.
    pub his: Vec<u64>,
    /// Difference array of `his`; `diff[0] = his[0]`.
    pub diff: Vec<i64>,
    pub avg_source: AvgSource,
}

impl DecisionState {
    pub fn new(min_steps: usize, avg_source: AvgSource) -> Self {
        DecisionState { min_steps, step: 0, iter: 0, his: Vec::new(), diff: Vec::new(), avg_source }
    }

    fn avg(&self) -> f64 {
        let (sum, len) = match self.avg_source {
            AvgSource::Diff => (self.diff.iter().sum::<i64>() as f64, self.diff.len()),
            AvgSource::His => (self.his.iter().sum::<u64>() as f64, self.his.len()),
        };
        if len == 0 {
            0.0
        } else {
            sum / len as f64
        }
    }
}

/// Record one iteration's newly found mode count: append to `his`, extend the
/// difference array, bump the iteration index and the in-region step counter.
pub fn observe_iteration(ds: &mut DecisionState, new_modes: u64) {
    let d = match ds.his.last() {
        Some(prev) => new_modes as i64 - *prev as i64,
        None => new_modes as i64,
    };
    ds.his.push(new_modes);
    ds.diff.push(d);
    ds.iter = ds.his.len() - 1;
    ds.step += 1;
}

/// The switch decision. Stay (`false`) while exploration is young or while
/// the current region still looks productive; every comparison is strict.
pub fn should_switch(ds: &DecisionState) -> bool {
    if ds.step < ds.min_steps {
        return false;
    }
    if ds.iter < 1 || ds.diff.len() < 2 {
        // Not enough history for diff[iter - 1].
        return false;
    }
    let avg = ds.avg();
    let last = ds.diff[ds.iter] as f64;
    let prev = ds.diff[ds.iter - 1] as f64;
    if last > avg || last > prev {
        return false;
    }
    if last + prev > 2.0 * avg {
        return false;
    }
    true
}

/// Proportional region selection: draw `round(p * n)` (at least one) distinct
/// components without replacement, weighted by the score distribution.
pub fn select_region<S: Scalar, R: Rng>(
    table: &ScoreTable<S>,
    cfg: &RegionConfig,
    rng: &mut R,
) -> Result<RegionMask> {
    let n = table.len();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let draws = ((cfg.p * n as f64).round() as usize).clamp(1, n);
    let mut weights: Vec<f64> = action_distribution(table).iter().map(|w| w.as_f64()).collect();
    let mut chosen = Vec::with_capacity(draws);
    for _ in 0..draws {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                // Rounding can leave u positive past the last entry; the
                // latest positive index stands in.
                pick = Some(i);
                u -= *w;
                if u <= 0.0 {
                    break;
                }
            }
        }
        let pick = pick.expect("scores are strictly positive");
        chosen.push(pick);
        weights[pick] = 0.0;
    }
    Ok(RegionMask::from_indices(n, &chosen))
}
