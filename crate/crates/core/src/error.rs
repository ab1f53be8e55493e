use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration document violated the schema. `path` names the
    /// offending field, e.g. `detected[1].operator`.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Degenerate or dark steady state.
    #[error("emitter is not ergodic: {0}")]
    Ergodicity(String),

    #[error(
        "survival probability {survival:.3e} at tau_max = {tau_max} exceeds tail epsilon {epsilon:.1e}; increase tau_max"
    )]
    Tail { tau_max: f64, survival: f64, epsilon: f64 },

    #[error("finite-difference derivative is not finite at theta = {theta}")]
    NonFiniteDerivative { theta: f64 },

    #[error("time step {dt} too coarse: dt * max jump rate = {product:.3} > 0.1; reduce dt")]
    StepSize { dt: f64, product: f64 },

    #[error("Fisher information {0} is not positive and finite")]
    DegenerateInformation(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("negative total Fisher information {0}")]
    NegativeInformation(f64),

    #[error("malformed data file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// True for failures caused by the physics (non-ergodic emitter, long
    /// tails, step size) rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Ergodicity(_)
                | Error::Tail { .. }
                | Error::NonFiniteDerivative { .. }
                | Error::StepSize { .. }
                | Error::DegenerateInformation(_)
                | Error::NegativeInformation(_)
        )
    }
}
