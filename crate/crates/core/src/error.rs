use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the estimation and analysis pipelines.
///
/// Variants fall into two families, see [`Error::is_numerical`]: contract
/// violations on the inputs, and numerical breakdowns during computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "sample size condition violated for p={p}, q={q}, r={r}, n={n}: \
         need n >= max(p/(qr), ceil(q/2)/(pr){extra}), {detail}"
    )]
    InadmissibleSampleSize {
        p: usize,
        q: usize,
        r: usize,
        n: usize,
        extra: &'static str,
        detail: String,
    },

    #[error("malformed {format} input, field `{field}`: {message}")]
    Parse {
        format: &'static str,
        field: String,
        message: String,
    },

    #[error("{what} is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite {
        what: String,
        index: usize,
        pivot: f64,
    },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that arise during computation on admissible inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::Numerical(_)
        )
    }

    pub(crate) fn parse(format: &'static str, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            format,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn not_pd(what: impl Into<String>, index: usize, pivot: f64) -> Self {
        Error::NotPositiveDefinite {
            what: what.into(),
            index,
            pivot,
        }
    }
}
