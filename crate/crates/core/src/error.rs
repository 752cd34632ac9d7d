use thiserror::Error;

/// Errors raised by model construction, the backward recursion and the tooling around it.
#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A conditional second-moment matrix (or least-squares system) is singular.
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    /// The weight `gamma` left the interval (0, 1].
    #[error("gamma out of range (0, 1] at {context}: {gamma}")]
    GammaOutOfRange { context: String, gamma: f64 },

    #[error("tree too large: {nodes} nodes exceeds cap of {cap}")]
    TreeTooLarge { nodes: usize, cap: usize },

    #[error("stale tables: policy file hash {found} does not match configuration hash {expected}")]
    StaleTables { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed policy file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HedgeError {
    /// Prefixes the message of a numerical error with where it happened.
    pub fn with_context(self, ctx: impl AsRef<str>) -> Self {
        let ctx = ctx.as_ref();
        match self {
            HedgeError::DegenerateModel(m) => HedgeError::DegenerateModel(format!("{ctx}: {m}")),
            HedgeError::InvalidState(m) => HedgeError::InvalidState(format!("{ctx}: {m}")),
            HedgeError::GammaOutOfRange { context, gamma } => HedgeError::GammaOutOfRange {
                context: format!("{ctx}, {context}"),
                gamma,
            },
            other => other,
        }
    }

    /// True for errors produced by the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HedgeError::DegenerateModel(_) | HedgeError::GammaOutOfRange { .. } | HedgeError::InvalidState(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HedgeError>;
