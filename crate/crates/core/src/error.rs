use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("series `{asset}` has {len} samples, need at least {required}")]
    SeriesTooShort {
        asset: String,
        len: usize,
        required: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    /// The top weight `w_d` vanishes, so the full-degree critical system is undefined.
    #[error("top weight w_{0} is zero; use the strata solver")]
    TopWeightZero(usize),

    #[error("cumulant k_{asset}{order} is zero")]
    ZeroCumulant { asset: usize, order: usize },

    #[error("point is not a critical point (residual {0:.3e})")]
    NotCritical(f64),

    #[error("leading coefficient {0:.3e} too small, degree drops")]
    DegreeDrop(f64),

    #[error("singular linear system")]
    Singular,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
