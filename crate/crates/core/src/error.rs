//! Error type shared by every module in the crate.

/// Crate-wide error enum.
///
/// Variants are grouped by how a caller should react: `Shape`, `Label`,
/// `Domain`, and `Capacity` indicate an invalid request; `Precondition`,
/// `Normalization`, and `Correlation` indicate that input data violates a
/// documented contract; `Convergence` and `Infrared` indicate a numerical
/// procedure that cannot reach the requested accuracy.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand dimensions are inconsistent (non-square matrix, mismatched
    /// factor dimensions, wrong index arity, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A requested object would exceed a hard size limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// An outcome / mode / site label is out of range or unknown.
    #[error("invalid label: {0}")]
    Label(String),

    /// A scalar parameter is outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented operator precondition fails beyond tolerance.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A state vector that must be normalized is not.
    #[error("state not normalized: norm deviates by {0:.3e}")]
    Normalization(f64),

    /// A correlation requirement between subsystem outcomes fails.
    #[error("correlation violation: {0}")]
    Correlation(String),

    /// A numerical procedure stopped short of the requested accuracy.
    /// Carries the achieved residual where one is known.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Massless zero-mode: an on-shell construction divides by E = 0.
    #[error("infrared zero mode: {0}")]
    Infrared(String),
}

pub type Result<T> = std::result::Result<T, Error>;
