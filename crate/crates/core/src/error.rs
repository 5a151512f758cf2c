use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state collapse: tau = {tau}")]
    StateCollapse { tau: f64 },

    #[error("AMP breakdown at AP {ap}, iteration {iteration}: {source}")]
    Breakdown {
        ap: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing local LLR for AP {ap}, device {device}")]
    MissingLlr { ap: usize, device: usize },

    #[error("undefined rate: {0}")]
    UndefinedRate(&'static str),

    #[error("unknown {kind} `{name}`")]
    UnknownStrategy { kind: &'static str, name: String },

    /// A failure reported through a shared, already-evaluated computation.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
