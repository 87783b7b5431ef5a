use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input to {0}")]
    EmptyReduction(&'static str),

    #[error("non-finite value {value} at position {index} in {context}")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("length mismatch in {context}: expected {expected}, got {actual}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("variance undefined for {0} value(s); at least 2 are required")]
    UndefinedVariance(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subsample of size {m} cannot be drawn from {n} units")]
    InvalidSubsampleSize { n: usize, m: usize },

    #[error("C({n}, {m}) = {count} subsets exceeds the enumeration limit of {limit}; use Monte-Carlo replication instead")]
    EnumerationTooLarge {
        n: usize,
        m: usize,
        count: u128,
        limit: u128,
    },

    #[error("PSIS needs at least {required} draws, got {actual}; use truncated importance sampling (tis) instead")]
    TooFewDraws { required: usize, actual: usize },

    #[error("wrong sampling scheme: {0}")]
    WrongScheme(String),

    #[error("models were evaluated on different subsamples")]
    PlanMismatch,

    #[error("covariance matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPositiveSemiDefinite(f64),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("Newton iteration did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. }
            | Error::NotPositiveSemiDefinite(_)
            | Error::RankDeficient(_)
            | Error::NoConvergence { .. }
            | Error::Degenerate(_) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(context: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonFinite {
            context,
            index,
            value: values[index],
        }),
    }
}
