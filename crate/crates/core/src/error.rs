use thiserror::Error;

pub type Result<T, E = GosError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GosError {
    /// An argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A prediction rule produced weights that do not form a probability vector.
    #[error("rule error at step {step}: weights sum to {sum} (components: {components:?})")]
    Rule {
        step: usize,
        sum: f64,
        components: Vec<f64>,
    },

    #[error("weight process error at step {step}: {message}")]
    Weight { step: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("replicate harness error: {0}")]
    Harness(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GosError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GosError::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        GosError::Config(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        GosError::Parse(msg.into())
    }

    /// Attach a step index to rule/weight errors that were raised without one.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            GosError::Rule { sum, components, .. } => GosError::Rule {
                step,
                sum,
                components,
            },
            GosError::Weight { message, .. } => GosError::Weight { step, message },
            other => other,
        }
    }

    /// Short machine-readable category, used for JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            GosError::Domain(_) => "domain",
            GosError::Rule { .. } => "rule",
            GosError::Weight { .. } => "weight",
            GosError::Config(_) => "config",
            GosError::Parse(_) => "parse",
            GosError::Harness(_) => "harness",
            GosError::Io(_) => "io",
            GosError::Json(_) => "json",
        }
    }
}
