//! Run configuration: strict JSON schema with documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_search::LocalSearchConfig;
use crate::objectives::ObjectiveConfig;
use crate::planner::AvgSource;
use crate::region::RegionConfig;
use crate::rng::substream;
use crate::tasks::{
    default_mode_distance, load_reward_table, make_bitseq, make_pamdp, make_toytree, synth_modes,
    BitSeqEnv, BitSeqSpec, PamdpEnv, PamdpSpec, RewardTable, ToyTreeEnv, ToyTreeReward,
    ToyTreeSpec, DEFAULT_MODE_BASIS,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// k-bit sequence filling. Modes come from exactly one of `modes`
    /// (inline), `modes_file` (one bit string per line) or `synth_count`
    /// (concatenations of basis blocks, seeded from the run seed).
    Bitseq {
        n: usize,
        k: usize,
        #[serde(default)]
        modes: Option<Vec<String>>,
        #[serde(default)]
        modes_file: Option<PathBuf>,
        #[serde(default)]
        synth_count: Option<usize>,
        #[serde(default)]
        basis: Option<Vec<String>>,
        /// Defaults to round(28 * n / 120).
        #[serde(default)]
        mode_distance: Option<usize>,
    },
    /// Prepend/append token strings with a file-loaded reward table.
    Pamdp {
        length: usize,
        #[serde(default)]
        reward_file: Option<PathBuf>,
        #[serde(default)]
        default_reward: Option<f64>,
    },
    Toytree {
        branching: usize,
        depth: usize,
        #[serde(default)]
        reward: ToyTreeRewardConfig,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToyTreeRewardConfig {
    #[default]
    Uniform,
    IndexAffine {
        offset: f64,
        slope: f64,
    },
    SumExp {
        scale: f64,
    },
}

impl From<&ToyTreeRewardConfig> for ToyTreeReward {
    fn from(cfg: &ToyTreeRewardConfig) -> Self {
        match cfg {
            ToyTreeRewardConfig::Uniform => ToyTreeReward::Uniform,
            ToyTreeRewardConfig::IndexAffine { offset, slope } => {
                ToyTreeReward::IndexAffine { offset: *offset, slope: *slope }
            }
            ToyTreeRewardConfig::SumExp { scale } => ToyTreeReward::SumExp { scale: *scale },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Minimum rounds inside a region before a switch is considered.
    pub min_steps: usize,
    pub avg_source: AvgSource,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { min_steps: 5, avg_source: AvgSource::Diff }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Uniform exploration mix during training rollouts.
    pub eps_uniform: f64,
    /// Hidden layer widths of the scorer trunk.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            learning_rate: 1e-3,
            seed: 0,
            eps_uniform: 0.05,
            hidden: vec![128, 128],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// k of the top-k reward metric.
    pub topk: usize,
    /// Reward threshold defining modes on tasks without target sequences.
    pub mode_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { topk: 100, mode_threshold: 0.95 }
    }
}

/// Everything a run needs. The four classic variants are presets over
/// the same path: `region.p = 1` disables partial search, `ls.I = 0`
/// disables local search.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub ls: LocalSearchConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.region.validate()?;
        match &self.task {
            TaskConfig::Bitseq { n, k, modes, modes_file, synth_count, .. } => {
                if *n == 0 || *k == 0 {
                    return Err(Error::Config("bitseq n and k must be positive".into()));
                }
                let sources = usize::from(modes.is_some())
                    + usize::from(modes_file.is_some())
                    + usize::from(synth_count.is_some());
                if sources != 1 {
                    return Err(Error::Config(
                        "bitseq needs exactly one of modes, modes_file, synth_count".into(),
                    ));
                }
            }
            TaskConfig::Pamdp { length, reward_file, default_reward } => {
                if *length == 0 {
                    return Err(Error::Config("pamdp length must be positive".into()));
                }
                if reward_file.is_none() && default_reward.is_none() {
                    return Err(Error::Config(
                        "pamdp needs a reward_file, a default_reward, or both".into(),
                    ));
                }
            }
            TaskConfig::Toytree { branching, depth, .. } => {
                if *branching < 2 || *depth < 1 {
                    return Err(Error::Config("toytree needs branching >= 2 and depth >= 1".into()));
                }
            }
        }
        if !(self.train.eps_uniform >= 0.0 && self.train.eps_uniform <= 1.0) {
            return Err(Error::Config("train.eps_uniform must be in [0, 1]".into()));
        }
        if !self.train.learning_rate.is_finite() || self.train.learning_rate <= 0.0 {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.metrics.topk == 0 {
            return Err(Error::Config("metrics.topk must be at least 1".into()));
        }
        // The trajectory-depth bound on K is checked at env build time.
        if self.ls.batch == 0 {
            return Err(Error::Config("ls.batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parse and validate a JSON run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A task instantiated from configuration.
pub enum AnyEnv {
    BitSeq(BitSeqEnv),
    Pamdp(PamdpEnv),
    Tree(ToyTreeEnv),
}

/// Build the configured environment; bitseq mode synthesis draws from the
/// run seed's "modes" substream so runs stay reproducible.
pub fn build_env(cfg: &RunConfig) -> Result<AnyEnv> {
    match &cfg.task {
        TaskConfig::Bitseq { n, k, modes, modes_file, synth_count, basis, mode_distance } => {
            let modes = if let Some(inline) = modes {
                inline.clone()
            } else if let Some(path) = modes_file {
                std::fs::read_to_string(path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect()
            } else {
                let count = synth_count.expect("validated");
                let basis: Vec<String> = basis
                    .clone()
                    .unwrap_or_else(|| DEFAULT_MODE_BASIS.iter().map(|s| s.to_string()).collect());
                let mut rng = substream(cfg.train.seed, "modes");
                synth_modes(&basis, count, *n, &mut rng)?
            };
            let spec = BitSeqSpec {
                n: *n,
                k: *k,
                modes,
                mode_distance: mode_distance.unwrap_or_else(|| default_mode_distance(*n)),
            };
            Ok(AnyEnv::BitSeq(make_bitseq(&spec)?))
        }
        TaskConfig::Pamdp { length, reward_file, default_reward } => {
            let rewards = match reward_file {
                Some(path) => load_reward_table(path, *default_reward)?,
                None => RewardTable::uniform(default_reward.expect("validated")),
            };
            Ok(AnyEnv::Pamdp(make_pamdp(&PamdpSpec { length: *length, rewards })?))
        }
        TaskConfig::Toytree { branching, depth, reward } => {
            Ok(AnyEnv::Tree(make_toytree(&ToyTreeSpec {
                branching: *branching,
                depth: *depth,
                reward: reward.into(),
            })?))
        }
    }
}
