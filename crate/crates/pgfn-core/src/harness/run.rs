//! The training loop: seeded, reproducible rounds of sample / refine /
//! train / plan, with CSV metrics and a JSON checkpoint.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{RewardEnv, Trajectory};
use crate::error::{Error, Result};
use crate::harness::config::{AnyEnv, MetricsConfig, RunConfig};
use crate::harness::metrics::{ModeRule, ModeTracker, TopK};
use crate::local_search::{refine, rollout};
use crate::nn::{adam_step, AdamConfig, OptimizerState, PolicyParams};
use crate::objectives::loss_and_grad;
use crate::planner::{
    action_distribution, observe_iteration, select_region, should_switch, update_scores,
    DecisionState, ScoreTable,
};
use crate::policy::encoding_dim;
use crate::region::{overlap_stats, sample_bernoulli_region, RegionMask, SelectionMode};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tasks::BitSeqEnv;

/// One row of the run CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub iter: u64,
    pub samples_total: u64,
    pub loss: f64,
    pub modes_total: u64,
    pub modes_new: u64,
    pub r_topk: f64,
    pub region_id: u64,
    pub switched: u8,
}

/// One row of the secondary planner CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerRow {
    pub iter: u64,
    pub region_id: u64,
    pub switched: u8,
    pub top_astar_by_score: usize,
    /// Expected-overlap indicator between the departing and entering region
    /// distributions; recorded on switch rounds, informational only.
    pub overlap_indicator: Option<f64>,
}

pub const RUN_CSV_HEADER: &str =
    "iter,samples_total,loss,modes_total,modes_new,r_topk,region_id,switched";
pub const PLANNER_CSV_HEADER: &str =
    "iter,region_id,switched,top_astar_by_score,overlap_indicator";

#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
    pub planner_rows: Vec<PlannerRow>,
}

impl RunLog {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(RUN_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iter, r.samples_total, r.loss, r.modes_total, r.modes_new, r.r_topk,
                r.region_id, r.switched
            ));
        }
        out
    }

    pub fn planner_csv_string(&self) -> String {
        let mut out = String::from(PLANNER_CSV_HEADER);
        out.push('\n');
        for r in &self.planner_rows {
            let indicator =
                r.overlap_indicator.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter, r.region_id, r.switched, r.top_astar_by_score, indicator
            ));
        }
        out
    }

    /// Cross-row invariants: mode counts never decrease, sample counts
    /// strictly increase, new-mode increments add up. The top-k mean is
    /// monotone only once k distinct terminals exist (below that it is the
    /// mean over everything seen, which a low reward can pull down), so it
    /// is checked by the run tests at saturation rather than here.
    pub fn validate(&self) -> Result<()> {
        let mut modes_sum = 0;
        for (i, row) in self.rows.iter().enumerate() {
            modes_sum += row.modes_new;
            if i > 0 {
                let prev = &self.rows[i - 1];
                if row.samples_total <= prev.samples_total {
                    return Err(Error::Config("samples_total must strictly increase".into()));
                }
                if row.modes_total < prev.modes_total {
                    return Err(Error::Config("modes_total must not decrease".into()));
                }
            }
            if row.modes_total != modes_sum {
                return Err(Error::Config("modes_new must sum to modes_total".into()));
            }
        }
        Ok(())
    }
}

/// Checkpoint document; field order is fixed so serialization is
/// byte-reproducible and finite values round-trip exactly.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub env_signature: String,
    pub params: ParamsDoc,
    pub opt_state: OptDoc,
    pub log_z: f64,
    pub planner_state: PlannerDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LayerDoc {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamsDoc {
    pub trunk: Vec<LayerDoc>,
    pub head_logits: LayerDoc,
    pub head_state_flow: LayerDoc,
    pub head_edge_flow: LayerDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptDoc {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlannerDoc {
    pub hr: Vec<f64>,
    pub cnt: Vec<f64>,
    pub his: Vec<u64>,
}

fn layer_doc<S: Scalar>(layer: &crate::nn::Dense<S>) -> LayerDoc {
    LayerDoc {
        w: layer
            .w
            .chunks(layer.n_in)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .collect(),
        b: layer.b.iter().map(|v| v.as_f64()).collect(),
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Everything produced by one training round, for callers that inspect more
/// than the CSV row.
#[derive(Clone, Debug)]
pub struct RoundOutcome<St, S> {
    pub row: RunRow,
    pub planner_row: PlannerRow,
    pub originals: Vec<Trajectory<St, S>>,
    pub accepted: Vec<Trajectory<St, S>>,
    pub train_batch_size: usize,
}

/// Mutable state of a run.
pub struct RunState<S: Scalar, E: RewardEnv<S>> {
    pub env: E,
    pub config: RunConfig,
    pub params: PolicyParams<S>,
    pub opt: OptimizerState<S>,
    pub table: ScoreTable<S>,
    pub decision: DecisionState,
    pub mask: RegionMask,
    region_rng: ChaCha8Rng,
    next_region_id: u64,
    /// Selection distribution at the time the current region was chosen.
    selection_dist: Vec<f64>,
    pub iter: u64,
    samples_total: u64,
    mode_tracker: ModeTracker,
    topk: TopK,
}

/// Score distribution as f64, renormalized so the overlap formulas see an
/// exactly normalized vector even at lower scalar precision.
fn selection_distribution<S: Scalar>(table: &ScoreTable<S>) -> Vec<f64> {
    let mut dist: Vec<f64> = action_distribution(table).iter().map(|v| v.as_f64()).collect();
    let total: f64 = dist.iter().sum();
    for v in &mut dist {
        *v /= total;
    }
    dist
}

impl<S: Scalar, E: RewardEnv<S>> RunState<S, E> {
    pub fn new(env: E, config: RunConfig, mode_rule: ModeRule) -> Result<Self> {
        config.validate()?;
        config.ls.validate(env.max_depth())?;
        let seed = config.train.seed;
        let mut init_rng = substream(seed, "init");
        let params = PolicyParams::init(
            encoding_dim(&env),
            &config.train.hidden,
            env.n_actions(),
            &mut init_rng,
        );
        let opt = OptimizerState::new(
            params.param_count(),
            AdamConfig { lr: config.train.learning_rate, ..AdamConfig::default() },
        );
        let table = ScoreTable::<S>::new(env.n_astar());
        let decision = DecisionState::new(config.planner.min_steps, config.planner.avg_source);
        let mut region_rng = substream(seed, "region");
        let mut mask = match config.region.selection_mode {
            SelectionMode::Proportional => select_region(&table, &config.region, &mut region_rng)?,
            SelectionMode::Bernoulli => {
                sample_bernoulli_region(env.n_astar(), &config.region, &mut region_rng)
            }
        };
        mask.id = 0;
        let selection_dist = selection_distribution(&table);
        let topk = TopK::new(config.metrics.topk);
        Ok(RunState {
            env,
            config,
            params,
            opt,
            table,
            decision,
            mask,
            region_rng,
            next_region_id: 1,
            selection_dist,
            iter: 0,
            samples_total: 0,
            mode_tracker: ModeTracker::new(mode_rule),
            topk,
        })
    }

    pub fn samples_total(&self) -> u64 {
        self.samples_total
    }

    /// Pick a fresh region and report the expected-overlap indicator between
    /// the departing and entering selection distributions.
    fn switch_region(&mut self) -> Result<f64> {
        let mut mask = match self.config.region.selection_mode {
            SelectionMode::Proportional => {
                select_region(&self.table, &self.config.region, &mut self.region_rng)?
            }
            SelectionMode::Bernoulli => sample_bernoulli_region(
                self.env.n_astar(),
                &self.config.region,
                &mut self.region_rng,
            ),
        };
        mask.id = self.next_region_id;
        self.next_region_id += 1;
        self.mask = mask;
        self.decision.step = 0;
        let now = selection_distribution(&self.table);
        let indicator = overlap_stats(
            &self.selection_dist,
            &now,
            self.config.region.p,
            self.env.max_depth().max(1),
            &self.config.region,
        )?
        .indicator;
        self.selection_dist = now;
        Ok(indicator)
    }

    fn sample_batch(&self, attempt: usize) -> Result<Vec<Trajectory<E::State, S>>> {
        let seed = self.config.train.seed;
        let eps = self.config.train.eps_uniform;
        let mut batch = Vec::with_capacity(self.config.ls.batch);
        for j in 0..self.config.ls.batch {
            let label = if attempt == 0 {
                format!("rollout/{}/{}", self.iter, j)
            } else {
                format!("rollout/{}/{}/retry{}", self.iter, j, attempt)
            };
            let mut rng = substream(seed, &label);
            batch.push(rollout(&self.env, &self.params, &self.mask, &mut rng, eps)?);
        }
        Ok(batch)
    }

    /// One round: Step A region-restricted sampling, Step B refinement,
    /// Step C one optimizer step on originals plus accepted refinements,
    /// Step D planner update and possibly a region switch.
    ///
    /// A dead-ended Step A aborts the attempt, asks the planner for a fresh
    /// region and retries the round under a derived rollout stream.
    pub fn training_round(&mut self) -> Result<RoundOutcome<E::State, S>> {
        let iter = self.iter;
        let region_used;
        let mut attempt = 0usize;
        let originals = loop {
            match self.sample_batch(attempt) {
                Ok(batch) => {
                    region_used = self.mask.id;
                    break batch;
                }
                Err(Error::DeadEnd) => {
                    attempt += 1;
                    if attempt > 100 {
                        return Err(Error::DeadEnd);
                    }
                    self.switch_region()?;
                }
                Err(e) => return Err(e),
            }
        };
        let mut new_samples = originals.len() as u64;

        // Step B.
        let mut accepted = Vec::new();
        let mut refined_terminals: Vec<(String, S)> = Vec::new();
        if self.config.ls.refine_reps > 0 {
            for (j, original) in originals.iter().enumerate() {
                let mut rng = substream(self.config.train.seed, &format!("refine/{iter}/{j}"));
                let report = refine(
                    &self.env,
                    &self.params,
                    &self.mask,
                    original,
                    &self.config.ls,
                    &mut rng,
                )?;
                new_samples += report.sampled_terminals.len() as u64;
                for (terminal, reward) in &report.sampled_terminals {
                    refined_terminals.push((self.env.canonical_string(terminal), *reward));
                }
                accepted.extend(report.accepted);
            }
        }

        // Step C.
        let mut train_batch = originals.clone();
        train_batch.extend(accepted.iter().cloned());
        let (loss, grads) = loss_and_grad(&self.env, &self.params, &train_batch, &self.config.objective)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {iter}")),
                other => other,
            })?;
        adam_step(&mut self.opt, &mut self.params, &grads);

        // Step D.
        update_scores(&mut self.table, &originals);
        let mut modes_new = 0u64;
        for t in originals.iter().chain(&accepted) {
            let canon = self.env.canonical_string(t.terminal());
            modes_new += self.mode_tracker.observe(&canon, t.reward.as_f64());
        }
        observe_iteration(&mut self.decision, modes_new);
        let switched = should_switch(&self.decision);
        let overlap_indicator = if switched { Some(self.switch_region()?) } else { None };

        // Metrics.
        self.samples_total += new_samples;
        for t in &originals {
            self.topk.observe(&self.env.canonical_string(t.terminal()), t.reward.as_f64());
        }
        for (canon, reward) in &refined_terminals {
            self.topk.observe(canon, reward.as_f64());
        }

        let row = RunRow {
            iter,
            samples_total: self.samples_total,
            loss: loss.as_f64(),
            modes_total: self.mode_tracker.total(),
            modes_new,
            r_topk: self.topk.value(),
            region_id: region_used,
            switched: u8::from(switched),
        };
        let planner_row = PlannerRow {
            iter,
            region_id: region_used,
            switched: u8::from(switched),
            top_astar_by_score: self.table.top_astar(),
            overlap_indicator,
        };
        self.iter += 1;
        Ok(RoundOutcome {
            row,
            planner_row,
            originals,
            accepted,
            train_batch_size: train_batch.len(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: 1,
            env_signature: self.env.signature(),
            params: ParamsDoc {
                trunk: self.params.trunk.iter().map(layer_doc).collect(),
                head_logits: layer_doc(&self.params.head_logits),
                head_state_flow: layer_doc(&self.params.head_state_flow),
                head_edge_flow: layer_doc(&self.params.head_edge_flow),
            },
            opt_state: OptDoc {
                m: self.opt.m.iter().map(|v| v.as_f64()).collect(),
                v: self.opt.v.iter().map(|v| v.as_f64()).collect(),
                step: self.opt.step,
                lr: self.opt.cfg.lr,
                beta1: self.opt.cfg.beta1,
                beta2: self.opt.cfg.beta2,
                eps: self.opt.cfg.eps,
            },
            log_z: self.params.log_z.as_f64(),
            planner_state: PlannerDoc {
                hr: self.table.hr.iter().map(|v| v.as_f64()).collect(),
                cnt: self.table.cnt.iter().map(|v| v.as_f64()).collect(),
                his: self.decision.his.clone(),
            },
        }
    }
}

/// Output of a completed run.
pub struct RunOutput {
    pub log: RunLog,
    pub checkpoint: Checkpoint,
}

impl RunOutput {
    pub fn checkpoint_json(&self) -> String {
        self.checkpoint.to_json()
    }
}

/// Mode rule appropriate for an environment.
fn bitseq_mode_rule(env: &BitSeqEnv) -> ModeRule {
    ModeRule::Distance { modes: env.modes().to_vec(), d: env.mode_distance() }
}

fn threshold_mode_rule(metrics: &MetricsConfig) -> ModeRule {
    ModeRule::Threshold { t: metrics.mode_threshold }
}

/// Run the configured training loop at `f64` precision.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    match crate::harness::config::build_env(config)? {
        AnyEnv::BitSeq(env) => {
            let rule = bitseq_mode_rule(&env);
            run_typed::<f64, _>(env, config.clone(), rule)
        }
        AnyEnv::Pamdp(env) => {
            let rule = threshold_mode_rule(&config.metrics);
            run_typed::<f64, _>(env, config.clone(), rule)
        }
        AnyEnv::Tree(env) => {
            let rule = threshold_mode_rule(&config.metrics);
            run_typed::<f64, _>(env, config.clone(), rule)
        }
    }
}

/// Generic run loop over any scalar precision and environment.
pub fn run_typed<S: Scalar, E: RewardEnv<S>>(
    env: E,
    config: RunConfig,
    mode_rule: ModeRule,
) -> Result<RunOutput> {
    let iterations = config.train.iterations;
    let mut state = RunState::new(env, config, mode_rule)?;
    let mut log = RunLog::default();
    for _ in 0..iterations {
        let outcome = state.training_round()?;
        log.rows.push(outcome.row);
        log.planner_rows.push(outcome.planner_row);
    }
    debug_assert!(log.validate().is_ok());
    Ok(RunOutput { log, checkpoint: state.checkpoint() })
}

/// Write `log.csv`, `planner.csv` and `checkpoint.json` into a directory.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("log.csv"), output.log.to_csv_string())?;
    std::fs::write(dir.join("planner.csv"), output.log.planner_csv_string())?;
    std::fs::write(dir.join("checkpoint.json"), output.checkpoint_json())?;
    Ok(())
}
