use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GarnetError>;

/// Broad error categories, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Io,
    Input,
    Config,
    Numerical,
    Attack,
    Training,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Io => 3,
            ErrorFamily::Input => 4,
            ErrorFamily::Config => 5,
            ErrorFamily::Numerical => 6,
            ErrorFamily::Attack => 7,
            ErrorFamily::Training => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum GarnetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("negative or non-finite weight {weight} on line {line}")]
    NegativeWeight { line: usize, weight: f64 },
    #[error("node id {id} out of range for {n} nodes")]
    IdOutOfRange { id: usize, n: usize },
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("graph size mismatch: {left} vs {right} nodes")]
    SizeMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("requested rank {r} is too large for {n} nodes")]
    RankTooLarge { r: usize, n: usize },
    #[error("k = {k} is too large for {n} nodes")]
    KTooLarge { k: usize, n: usize },
    #[error("{n} nodes exceeds the dense limit of {limit}")]
    DenseLimitExceeded { n: usize, limit: usize },
    #[error("invalid probability: {0}")]
    InvalidProbability(String),
    #[error("probe node {id} out of range for {n} nodes")]
    ProbeOutOfRange { id: usize, n: usize },

    #[error("eigensolver did not converge in {max_iter} restarts (worst residual {worst_residual:e})")]
    NoConvergence {
        max_iter: usize,
        worst_residual: f64,
        residuals: Vec<f64>,
    },
    #[error("all embedding rows are identical")]
    DegenerateEmbedding,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("attack budget infeasible: completed {completed} of {budget} moves")]
    BudgetInfeasible { completed: usize, budget: usize },

    #[error("training diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("mask `{0}` is empty")]
    MaskEmpty(&'static str),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

impl GarnetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GarnetError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn family(&self) -> ErrorFamily {
        use GarnetError::*;
        match self {
            Io { .. } => ErrorFamily::Io,
            MalformedLine { .. }
            | NegativeWeight { .. }
            | IdOutOfRange { .. }
            | EmptyGraph
            | DimensionMismatch { .. }
            | SizeMismatch { .. }
            | InvalidDataset(_) => ErrorFamily::Input,
            InvalidConfig(_)
            | RankTooLarge { .. }
            | KTooLarge { .. }
            | DenseLimitExceeded { .. }
            | InvalidProbability(_)
            | ProbeOutOfRange { .. } => ErrorFamily::Config,
            NoConvergence { .. } | DegenerateEmbedding | NotPositiveDefinite => {
                ErrorFamily::Numerical
            }
            BudgetInfeasible { .. } => ErrorFamily::Attack,
            NonFiniteLoss { .. } | MaskEmpty(_) => ErrorFamily::Training,
        }
    }
}
