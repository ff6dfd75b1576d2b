use thiserror::Error;

/// Errors raised across the learning stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: &'static str, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid action {action} for agent {agent} (action set size {action_count})")]
    InvalidAction {
        agent: usize,
        action: usize,
        action_count: usize,
    },

    #[error("{algorithm} does not support environment {env}")]
    UnsupportedEnvironment { algorithm: String, env: String },

    #[error("missing shared table entry for edge {from}->{to} at step {step}")]
    MissingShare { from: usize, to: usize, step: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
