use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("class {class}: no path connects node {origin} to node {destination}")]
    NoPath {
        class: usize,
        origin: usize,
        destination: usize,
    },
    #[error(
        "class {class}: no action is affordable at {tokens} tokens (some toll must be nonpositive)"
    )]
    NothingAffordable { class: usize, tokens: usize },
    #[error("policy enumeration for class {class} exceeds {limit} policies; lower the distinct-action cap")]
    TooManyPolicies { class: usize, limit: usize },
    #[error("wallet chain has {classes} closed recurrent classes; the stationary distribution is not unique (is the noise rate zero?)")]
    NonUniqueStationary { classes: usize },
    #[error("stationary solve failed: {0}")]
    Stationary(String),
    #[error("no stationary distribution cached for class {class}, policy {policy}")]
    MissingStationary { class: usize, policy: usize },
    #[error("integration failed at t = {time}: step size underflow")]
    StepUnderflow { time: f64 },
    #[error("system optimum did not converge (residual {residual:e})")]
    NotConverged { residual: f64 },
    #[error("class {class}: certificate failed: {conditions}")]
    Certificate { class: usize, conditions: String },
    #[error("class {class}: {message}; try a larger scaling factor")]
    Design { class: usize, message: String },
    #[error("trajectory sample grids differ ({0})")]
    GridMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable or malformed inputs rather than by the model.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Io { .. } | Error::Config(_) | Error::Invalid(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
