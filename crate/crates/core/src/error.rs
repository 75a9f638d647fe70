use thiserror::Error;

/// Errors surfaced by the geometry and measure layers.
///
/// Statistical caveats (low atom counts, unstable fits, …) are *not* errors;
/// they travel as flags on result structs so callers can decide what to do.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed a value outside the documented domain (wrong dimension,
    /// non-finite number, non-unit vector, …).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input is syntactically fine but describes a degenerate object
    /// (vanishing denominator, coincident boundary points, …).
    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    /// A matrix fell outside the factorization chart or failed to
    /// reconstruct within tolerance.
    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),

    /// A declarative config violates the schema-level rules.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Construction-time verification failed (ping-pong violation,
    /// tangent pairing balls, …).
    #[error("construction failed: {0}")]
    ConstructionFailed(String),

    /// An exponent or cutoff makes the requested series/measure meaningless.
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    /// A test-function box cannot be placed injectively.
    #[error("invalid box: {0}")]
    InvalidBox(String),

    /// A documented precondition (e.g. backward endpoint in the limit set)
    /// does not hold for the supplied point.
    #[error("precondition violation: {0}")]
    PreconditionViolation(String),

    /// A window/measure that must be nonempty came out empty.
    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Re-import of a serialized table hit a malformed row.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
