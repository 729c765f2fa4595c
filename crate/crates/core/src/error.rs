use thiserror::Error;

pub type Result<T> = std::result::Result<T, DpcError>;

#[derive(Debug, Error)]
pub enum DpcError {
    /// A state update produced a non-finite value.
    #[error("integration diverged at sample {sample}, replication {replication}, step {step}")]
    Divergence {
        sample: usize,
        replication: usize,
        step: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error(
        "gram matrix is not positive definite after jitter escalation \
         (lambda = {lambda:e}, condition estimate = {condition:e})"
    )]
    SingularGram { lambda: f64, condition: f64 },

    #[error("non-finite gradient in parameter tensor {index}")]
    NonFiniteGradient { index: usize },

    #[error("training aborted after {consecutive} consecutive non-finite losses (epoch {epoch})")]
    TrainingDiverged { consecutive: usize, epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DpcError {
    /// Stable machine-readable category, used for CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            DpcError::Divergence { .. } | DpcError::TrainingDiverged { .. } => "divergence",
            DpcError::SingularGram { .. } | DpcError::NonFiniteGradient { .. } => "numerical",
            DpcError::Dimension { .. } | DpcError::Contract(_) | DpcError::EmptySamples => {
                "contract"
            }
            DpcError::Config(_) => "config",
            DpcError::Format(_) => "format",
            DpcError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "format" => 4,
            "divergence" => 5,
            "numerical" => 6,
            _ => 7,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DpcError::Config(msg.into())
    }
}
