use thiserror::Error;

/// Errors surfaced by the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("map parse error at line {line}: {message}")]
    MapParse { line: usize, message: String },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid step size {0}; must be at least 1")]
    InvalidStepSize(usize),
    #[error("invalid error level: {0}")]
    InvalidErrorLevel(String),
    #[error("malformed team label {0:?}; expected e.g. \"1H-2L\"")]
    InvalidLabel(String),
    #[error("agents are not compatible on this map: {0}")]
    Incompatible(String),
    #[error(
        "agent {agent} did not converge: greedy rollout from start {}, goal reached from {rate:.3} of cells (need {threshold:.3})",
        if *from_start { "succeeds" } else { "fails" }
    )]
    NonConvergence {
        agent: String,
        from_start: bool,
        rate: f64,
        threshold: f64,
    },
    #[error("exact model too large: {states} states x {agents} agents exceeds limit {limit}")]
    ModelTooLarge {
        states: usize,
        agents: usize,
        limit: usize,
    },
    #[error("shape mismatch: expected {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("persisted table does not match: {0}")]
    PersistMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
