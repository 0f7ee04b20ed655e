use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{op}: design matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { op: &'static str, condition: f64 },

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("no critical value for k={k}, gamma={gamma}, alpha={alpha}; {domain}")]
    MissingCriticalValue {
        k: usize,
        gamma: f64,
        alpha: f64,
        domain: String,
    },

    #[error("{0}: input must be sorted in nondecreasing order")]
    Unsorted(&'static str),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the data or the model rather than by how the
    /// library was called.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. } | Error::NotPsd(_) | Error::MissingCriticalValue { .. }
        )
    }
}
