use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value {value} outside domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("monotonicity invariant violated: Γ(q_hi) = {g_hi} <= Γ(q_lo) = {g_lo}")]
    NotIncreasing { g_lo: f64, g_hi: f64 },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{path}: row {row}: {msg}")]
    Parse { path: PathBuf, row: usize, msg: String },

    #[error("LP solve did not reach an optimum: {0:?}")]
    Lp(crate::lp::LpStatus),

    #[error("model schema error: {0}")]
    Schema(String),

    #[error("unsupported model version {found:?} (expected {expected:?})")]
    Version { found: String, expected: &'static str },

    #[error("controller failed at step {step}: {source}")]
    Controller {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
