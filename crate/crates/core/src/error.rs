use thiserror::Error;

/// Errors raised by certificate construction, verification and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input carried NaN or infinite entries.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A matrix required to be symmetric is not, beyond tolerance.
    #[error("matrix not symmetric: {0}")]
    NotSymmetric(String),

    /// A matrix required to be positive semidefinite has a negative
    /// eigenvalue beyond tolerance.
    #[error("matrix not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    /// A simulated trajectory left the representable range.
    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    /// The requested gain bound does not exist (unstable input-to-output-rate map).
    #[error("gain unbounded: {0}")]
    UnboundedGain(String),

    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// An enumeration request would exceed the hard size guard.
    #[error("state enumeration too large: {states} states exceeds limit {limit}")]
    SizeLimit { states: usize, limit: usize },

    /// The interconnection is not well posed (direct feedthrough in the plant).
    #[error("algebraic loop: {0}")]
    AlgebraicLoop(String),

    /// A certificate failed its internal validity check.
    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
