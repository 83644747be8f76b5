use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must live on the same space do not.
    #[error("space mismatch: expected {expected}, found {found}")]
    SpaceMismatch { expected: String, found: String },

    /// A constructor or operation received arguments outside its contract.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// A pixel-wise evaluation produced NaN or infinity.
    #[error("non-finite value {value} at index {index} while evaluating {context}")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("unknown nonlinearity `{0}`")]
    UnknownNonlinearity(String),

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("noise is fixed; the noise gradient needs an estimated noise model")]
    FixedNoise,

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed array header: {reason}")]
    ArrayFormat { path: String, reason: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
