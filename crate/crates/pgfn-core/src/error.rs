use crate::env::Action;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("illegal action (astar={}, aprime={}) in state {state}", action.astar, action.aprime)]
    IllegalAction { action: Action, state: String },
    #[error("the initial state has no parent")]
    NoParent,
    #[error("state is not terminal")]
    NotTerminal,
    #[error("region restriction produced an empty action set")]
    DeadEnd,
    #[error("all depth sizes are zero")]
    EmptySpace,
    #[error("distribution is not normalized: {0}")]
    BadDistribution(String),
    #[error("feature vector has length {got}, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("the allowed action set is empty")]
    EmptyMask,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backtrack of {k} steps exceeds state depth {depth}")]
    DepthUnderflow { k: usize, depth: usize },
    #[error("enumeration budget of {budget} states exceeded")]
    BudgetExceeded { budget: usize },
    #[error("invalid task spec: {0}")]
    BadSpec(String),
    #[error("missing reward for terminal {0}")]
    MissingReward(String),
    #[error("could not produce distinct modes: {0}")]
    Exhausted(String),
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
