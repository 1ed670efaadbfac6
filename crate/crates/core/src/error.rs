use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value violates a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Parameter vector outside the prior support.
    #[error("outside prior support: {0}")]
    Support(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    /// Linear solve did not reach the residual tolerance.
    #[error("solver failure at {freq_hz} Hz: relative residual {residual:.3e} ({reason})")]
    Solver {
        freq_hz: f64,
        residual: f64,
        reason: String,
    },

    /// Resonance proximity or similar conditioning problem.
    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("diagnostic failure: {0}")]
    Diagnostic(String),

    #[error("config error: {0}")]
    Config(String),

    /// Missing or stale upstream artifact.
    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
