//! Partial regions over the state-agnostic action set.
//!
//! A region is induced by a boolean mask over `A*`: a state belongs to the
//! region when some construction path from the initial state uses only
//! mask-valid `astar` components. The state-dependent components are never
//! filtered.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Environment};
use crate::error::{Error, Result};

/// The valid subset of `A*` defining a partial region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    /// `valid[astar]` is true when that component may be used.
    pub valid: Vec<bool>,
    /// Monotonically increasing counter stamped by the run loop for logging.
    pub id: u64,
}

impl RegionMask {
    pub fn new(valid: Vec<bool>) -> Self {
        debug_assert!(valid.iter().any(|v| *v), "region mask must be nonempty");
        RegionMask { valid, id: 0 }
    }

    /// The full mask: every component valid, equivalent to no restriction.
    pub fn full(n_astar: usize) -> Self {
        RegionMask { valid: vec![true; n_astar], id: 0 }
    }

    pub fn from_indices(n_astar: usize, indices: &[usize]) -> Self {
        let mut valid = vec![false; n_astar];
        for i in indices {
            valid[*i] = true;
        }
        RegionMask::new(valid)
    }

    pub fn allows(&self, astar: usize) -> bool {
        self.valid[astar]
    }

    pub fn popcount(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_full(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    /// Keep the actions whose `astar` component is valid. Unlike
    /// [`restrict`], an empty result is not an error here.
    pub fn filter_actions(&self, actions: &[Action]) -> Vec<Action> {
        actions.iter().copied().filter(|a| self.valid[a.astar]).collect()
    }
}

/// How the planner turns its action distribution into a mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Bernoulli,
    Proportional,
}

/// Region sampling parameters and the overlap-indicator weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionConfig {
    /// Probability that an `astar` component is valid; 1 disables the
    /// restriction entirely.
    pub p: f64,
    pub selection_mode: SelectionMode,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Evaluate the union expectation in its nested-sum form (the inner
    /// depth sum expanded in full) instead of per-depth inclusion-exclusion.
    pub literal_union: bool,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            p: 1.0,
            selection_mode: SelectionMode::Proportional,
            alpha1: 1.0,
            alpha2: 1.0,
            literal_union: false,
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("region.p must be in (0, 1], got {}", self.p)));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::Config("region alphas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Sample each component independently valid with probability `p`,
/// resampling the whole mask until at least one component is valid.
pub fn sample_bernoulli_region<R: Rng>(
    n_astar: usize,
    cfg: &RegionConfig,
    rng: &mut R,
) -> RegionMask {
    assert!(n_astar >= 1, "n_astar must be positive");
    loop {
        let valid: Vec<bool> = (0..n_astar).map(|_| rng.random::<f64>() < cfg.p).collect();
        if valid.iter().any(|v| *v) {
            return RegionMask { valid, id: 0 };
        }
    }
}

/// Restrict an action set to the region.
///
/// Errors with [`Error::DeadEnd`] when a nonempty input is filtered down to
/// nothing; the caller decides whether to resample the region or abort.
pub fn restrict(mask: &RegionMask, actions: &[Action]) -> Result<Vec<Action>> {
    let out = mask.filter_actions(actions);
    if out.is_empty() && !actions.is_empty() {
        return Err(Error::DeadEnd);
    }
    Ok(out)
}

/// Region membership: true iff `s` is the initial state or some parent chain
/// down to it uses only mask-valid components. Memoized backward search.
pub fn region_contains<E: Environment>(env: &E, mask: &RegionMask, s: &E::State) -> bool {
    let mut memo: HashMap<E::State, bool> = HashMap::new();
    contains_inner(env, mask, s, &mut memo)
}

fn contains_inner<E: Environment>(
    env: &E,
    mask: &RegionMask,
    s: &E::State,
    memo: &mut HashMap<E::State, bool>,
) -> bool {
    if env.depth(s) == 0 {
        return true;
    }
    if let Some(hit) = memo.get(s) {
        return *hit;
    }
    let parents = env.parents(s).expect("non-initial state has parents");
    let inside = parents
        .iter()
        .any(|(p, a)| mask.allows(a.astar) && contains_inner(env, mask, p, memo));
    memo.insert(s.clone(), inside);
    inside
}

/// Closed-form expected ratio of region size to state-space size given the
/// per-depth profile `|S_l|`: `sum_l p^l |S_l| / sum_l |S_l|`.
pub fn expected_ratio(p: f64, sizes_by_depth: &[u64]) -> Result<f64> {
    let total: f64 = sizes_by_depth.iter().map(|s| *s as f64).sum();
    if total == 0.0 {
        return Err(Error::EmptySpace);
    }
    let masked: f64 = sizes_by_depth
        .iter()
        .enumerate()
        .map(|(l, s)| p.powi(l as i32) * *s as f64)
        .sum();
    Ok(masked / total)
}

/// Expected overlap statistics of two proportionally sampled regions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapStats {
    /// Expected number of components selected in both regions.
    pub expected_common: f64,
    pub expected_intersection: f64,
    pub expected_union: f64,
    pub indicator: f64,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::BadDistribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Evaluate the selection-overlap expectations for two score distributions
/// `p1`, `p2` over `n` components, with depth sums truncated at `max_l`.
///
/// The union term follows inclusion-exclusion per depth unless
/// `cfg.literal_union` asks for the nested-sum form.
pub fn overlap_stats(
    p1: &[f64],
    p2: &[f64],
    p: f64,
    max_l: usize,
    cfg: &RegionConfig,
) -> Result<OverlapStats> {
    if p1.len() != p2.len() || p1.is_empty() {
        return Err(Error::BadDistribution("p1 and p2 must share a nonzero length".into()));
    }
    if max_l < 1 {
        return Err(Error::Config("max_l must be at least 1".into()));
    }
    check_distribution("p1", p1)?;
    check_distribution("p2", p2)?;
    let n = p1.len() as f64;
    let dot: f64 = p1.iter().zip(p2).map(|(a, b)| a * b).sum();

    let expected_common = dot * n * n * p * p;

    let mut intersection = 0.0;
    let mut union_ie = 0.0;
    let mut denom = 0.0;
    for l in 1..=max_l {
        let li = l as i32;
        let inter_l = dot.powi(li) * n.powi(2 * li) * p.powi(2 * li);
        intersection += inter_l;
        union_ie += 2.0 * n.powi(li) * p.powi(li) - inter_l;
        denom += n.powi(li) * p.powi(li);
    }
    let expected_union = if cfg.literal_union {
        // Nested form: the subtracted term is itself a full depth sum.
        let inner: f64 = (1..=max_l)
            .map(|l| dot.powi(l as i32) * n.powi(l as i32) * p.powi(2 * l as i32))
            .sum();
        (1..=max_l)
            .map(|l| n.powi(l as i32) * (2.0 * p.powi(l as i32) - inner))
            .sum()
    } else {
        union_ie
    };

    let indicator = cfg.alpha1 * intersection / denom + cfg.alpha2 * expected_union / denom;
    Ok(OverlapStats { expected_common, expected_intersection: intersection, expected_union, indicator })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use crate::rng::substream;
    use crate::tasks::{make_bitseq, BitSeqSpec};
    use proptest::prelude::*;

    fn bitseq84() -> crate::tasks::BitSeqEnv {
        make_bitseq(&BitSeqSpec::new(8, 4, vec!["11111111".into()])).unwrap()
    }

    #[test]
    fn p_one_gives_full_mask() {
        let cfg = RegionConfig { p: 1.0, ..RegionConfig::default() };
        let mask = sample_bernoulli_region(16, &cfg, &mut substream(0, "region"));
        assert!(mask.is_full());
    }

    #[test]
    fn single_component_is_forced() {
        let cfg = RegionConfig { p: 0.05, ..RegionConfig::default() };
        for seed in 0..20 {
            let mask = sample_bernoulli_region(1, &cfg, &mut substream(seed, "region"));
            assert_eq!(mask.valid, vec![true]);
        }
    }

    #[test]
    fn bernoulli_popcount_is_binomial_like() {
        let cfg = RegionConfig { p: 0.5, ..RegionConfig::default() };
        let mut rng = substream(9, "region");
        let trials = 2000;
        let mean: f64 = (0..trials)
            .map(|_| sample_bernoulli_region(16, &cfg, &mut rng).popcount() as f64)
            .sum::<f64>()
            / trials as f64;
        // Binomial(16, 0.5) has mean 8 and sd 2; the trial mean sits within
        // a few standard errors.
        assert!((mean - 8.0).abs() < 0.25, "mean popcount {mean}");
        let reproduced = sample_bernoulli_region(16, &cfg, &mut substream(9, "region"));
        let again = sample_bernoulli_region(16, &cfg, &mut substream(9, "region"));
        assert_eq!(reproduced, again);
    }

    #[test]
    fn restrict_examples() {
        let env = bitseq84();
        let s0 = env.initial_state();
        let actions = env.valid_actions(&s0);
        let mask = RegionMask::from_indices(16, &[0b1111, 0b0000]);
        let restricted = restrict(&mask, &actions).unwrap();
        assert_eq!(restricted.len(), 4);
        assert!(restricted.iter().all(|a| a.astar == 0b1111 || a.astar == 0));

        let full = RegionMask::full(16);
        assert_eq!(restrict(&full, &actions).unwrap(), actions);

        let narrow = RegionMask::from_indices(16, &[3]);
        let only_three: Vec<_> = actions.iter().copied().filter(|a| a.astar == 7).collect();
        assert!(matches!(restrict(&narrow, &only_three), Err(Error::DeadEnd)));
        assert!(restrict(&narrow, &[]).unwrap().is_empty());
    }

    #[test]
    fn membership_examples() {
        let env = bitseq84();
        let s0 = env.initial_state();
        let mask = RegionMask::from_indices(16, &[0b1111]);
        assert!(region_contains(&env, &mask, &s0));
        let inside = env.apply(&s0, Action::new(0b1111, 0)).unwrap();
        assert!(region_contains(&env, &mask, &inside));
        let outside = env.apply(&s0, Action::new(0b0001, 0)).unwrap();
        assert!(!region_contains(&env, &mask, &outside));
    }

    #[test]
    fn membership_matches_brute_force() {
        // Brute force: enumerate every construction path of the state and ask
        // whether some path stays valid.
        fn brute<E: Environment>(env: &E, mask: &RegionMask, s: &E::State) -> bool {
            if env.depth(s) == 0 {
                return true;
            }
            env.parents(s)
                .unwrap()
                .iter()
                .any(|(p, a)| mask.allows(a.astar) && brute(env, mask, p))
        }
        let env = bitseq84();
        let mut rng = substream(11, "region");
        let cfg = RegionConfig { p: 0.4, ..RegionConfig::default() };
        let s0 = env.initial_state();
        for _ in 0..30 {
            let mask = sample_bernoulli_region(16, &cfg, &mut rng);
            let mut frontier = vec![s0.clone()];
            while let Some(s) = frontier.pop() {
                assert_eq!(region_contains(&env, &mask, &s), brute(&env, &mask, &s));
                for a in env.valid_actions(&s) {
                    if a.astar % 5 == 0 {
                        frontier.push(env.apply(&s, a).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn expected_ratio_examples() {
        assert_eq!(expected_ratio(1.0, &[1, 7, 19]).unwrap(), 1.0);
        let r = expected_ratio(0.5, &[1, 2, 4, 8]).unwrap();
        assert!((r - 4.0 / 15.0).abs() < 1e-12);
        let r = expected_ratio(0.5, &[1, 16]).unwrap();
        assert!((r - 9.0 / 17.0).abs() < 1e-12);
        assert!(matches!(expected_ratio(0.5, &[0, 0]), Err(Error::EmptySpace)));
    }

    #[test]
    fn overlap_examples() {
        let cfg = RegionConfig::default();
        let stats = overlap_stats(&[0.5, 0.5], &[0.5, 0.5], 0.5, 1, &cfg).unwrap();
        assert!((stats.expected_intersection - 0.5).abs() < 1e-12);

        let stats = overlap_stats(&[1.0], &[1.0], 1.0, 1, &cfg).unwrap();
        assert!((stats.expected_common - 1.0).abs() < 1e-12);

        let zero = RegionConfig { alpha1: 0.0, alpha2: 0.0, ..RegionConfig::default() };
        let stats = overlap_stats(&[0.25; 4], &[0.25; 4], 0.7, 3, &zero).unwrap();
        assert_eq!(stats.indicator, 0.0);

        assert!(matches!(
            overlap_stats(&[0.9, 0.2], &[0.5, 0.5], 0.5, 1, &cfg),
            Err(Error::BadDistribution(_))
        ));
    }

    #[test]
    fn union_is_inclusion_exclusion_by_default() {
        let cfg = RegionConfig::default();
        let s = overlap_stats(&[0.5, 0.5], &[0.5, 0.5], 0.5, 3, &cfg).unwrap();
        let mut expect = 0.0;
        for l in 1..=3i32 {
            let inter = 0.5f64.powi(l) * 4f64.powi(l) * 0.25f64.powi(l);
            expect += 2.0 * 2f64.powi(l) * 0.5f64.powi(l) - inter;
        }
        assert!((s.expected_union - expect).abs() < 1e-12);
        let literal = RegionConfig { literal_union: true, ..RegionConfig::default() };
        let s_lit = overlap_stats(&[0.5, 0.5], &[0.5, 0.5], 0.5, 3, &literal).unwrap();
        assert_ne!(s.expected_union, s_lit.expected_union);
    }

    proptest! {
        #[test]
        fn restrict_is_idempotent_and_monotone(bits in proptest::collection::vec(any::<bool>(), 16)) {
            let env = bitseq84();
            let actions = env.valid_actions(&env.initial_state());
            let mut valid = bits;
            if !valid.iter().any(|v| *v) {
                valid[3] = true;
            }
            let mask = RegionMask::new(valid.clone());
            let once = mask.filter_actions(&actions);
            let twice = mask.filter_actions(&once);
            prop_assert_eq!(&once, &twice);

            let mut wider = valid.clone();
            wider[7] = true;
            let wide_mask = RegionMask::new(wider);
            let wide = wide_mask.filter_actions(&actions);
            for a in &once {
                prop_assert!(wide.contains(a));
            }
        }

        #[test]
        fn expected_ratio_bounded(p in 0.01f64..1.0, sizes in proptest::collection::vec(0u64..200, 1..6)) {
            prop_assume!(sizes.iter().any(|s| *s > 0));
            let r = expected_ratio(p, &sizes).unwrap();
            prop_assert!(r > 0.0 && r <= 1.0 + 1e-12);
        }
    }
}
