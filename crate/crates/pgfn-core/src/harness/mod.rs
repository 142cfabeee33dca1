//! Run orchestration: configuration, metrics and the training loop.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{build_env, load_config, parse_config, AnyEnv, RunConfig, TaskConfig};
pub use metrics::{count_modes_bitseq, r_topk, ModeRule, ModeTracker, TopK};
pub use run::{
    run, run_typed, write_outputs, Checkpoint, RoundOutcome, RunLog, RunOutput, RunRow, RunState,
    PLANNER_CSV_HEADER, RUN_CSV_HEADER,
};
