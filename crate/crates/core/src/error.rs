use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{matrix} matrix is not symmetric: worst entry ({row}, {col}) has relative asymmetry {relative:.3e}")]
    Asymmetric {
        matrix: &'static str,
        row: usize,
        col: usize,
        relative: f64,
    },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("degenerate marker basis: |e1 x e2| = {cross_norm:.3e}")]
    DegenerateBasis { cross_norm: f64 },

    #[error("log-rotation angle {theta} is too close to 2*pi; rebase required")]
    RebaseRequired { theta: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solution diverged at step {step} (t = {time} s)")]
    Divergence { step: usize, time: f64 },

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line driver: 1 for numerical
    /// failures, 2 for input and validation errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Divergence { .. } | Error::RebaseRequired { .. } => 1,
            _ => 2,
        }
    }
}
