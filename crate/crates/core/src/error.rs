use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("duration {duration} is not a multiple of the step {step}")]
    NotStepMultiple { duration: f64, step: f64 },

    #[error("departure displacement {displacement} exceeds the domain length at step {step}")]
    Cfl { displacement: f64, step: usize },

    #[error("non-finite state at step {step}")]
    BlowUp { step: usize },

    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("location outside the domain: layer {layer}, x {x}, y {y}")]
    OutOfDomain { layer: usize, x: f64, y: f64 },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("no exponential growth regime detected")]
    NoGrowthRegime,

    #[error("missing {what}: run `qgml {stage}` first")]
    Missing { what: String, stage: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
