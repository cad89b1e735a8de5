use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// A record failed invariant validation; `field` is a JSON-style path.
    #[error("validation failed at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Caller handed an operation input outside its domain.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("enumeration bound exceeded: {trajectories} trajectories > {limit}")]
    Size { trajectories: u128, limit: u128 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("stdio adapter: {0}")]
    Adapter(String),

    #[error("replay diverged at step {step}: {message}")]
    Replay { step: usize, message: String },

    /// Error from a sampling backend or environment, tagged with the 1-based step.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("backend: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::AtStep {
            step,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
