use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto process exit
/// codes: parameter-class errors exit 1, the resource guard exits 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gcd(n, (k-1)!) != 1 for n={n}, k={k}: multilinear decomposition unavailable")]
    GcdViolation { n: usize, k: usize },

    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),

    #[error("index {index} out of range for modulus {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("outside the lemma regime: {0}")]
    Regime(String),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("selftest failed: {failed} of {total} checks")]
    SelftestFailed { failed: usize, total: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
