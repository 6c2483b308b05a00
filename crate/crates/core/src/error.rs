use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: non-finite value in column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("log10 transform requires positive values; row {row} has {value}")]
    NonPositiveLog { row: usize, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {needed} observations, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("local fit at x = {x} is singular (fewer than {needed} distinct weighted x values)")]
    SingularLocalFit { x: f64, needed: usize },

    #[error("x = {x} lies outside the fitted range [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("no breakpoint pair satisfies the minimum of {min_points} points per segment")]
    NoFeasibleBreakpoints { min_points: usize },

    #[error("linear program hit the iteration limit ({0} pivots)")]
    IterationLimit(usize),

    #[error("tau = {tau} is too extreme for n = {n} (n*min(tau, 1-tau) < 1)")]
    ExtremeTau { tau: f64, n: usize },

    #[error("bootstrap replicate {replicate} failed after {attempts} attempts: {source}")]
    ReplicateFailed {
        replicate: usize,
        attempts: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0} bootstrap replicates are too few for gamma = {1}; need at least {2}")]
    TooFewReplicates(usize, f64, usize),

    #[error("bands disagree on gamma ({0} vs {1})")]
    GammaMismatch(f64, f64),

    #[error("intervals disagree on coverage ({0} vs {1})")]
    CoverageMismatch(String, String),

    #[error("parameter covariance is not positive definite")]
    SingularCovariance,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::MissingColumn(_) => "missing_column",
            Error::NonNumeric { .. } => "non_numeric",
            Error::NonFinite { .. } => "non_finite",
            Error::NonPositiveLog { .. } => "non_positive_log",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::SingularLocalFit { .. } => "singular_local_fit",
            Error::Extrapolation { .. } => "extrapolation",
            Error::RankDeficient => "rank_deficient",
            Error::NoFeasibleBreakpoints { .. } => "no_feasible_breakpoints",
            Error::IterationLimit(_) => "iteration_limit",
            Error::ExtremeTau { .. } => "extreme_tau",
            Error::ReplicateFailed { .. } => "replicate_failed",
            Error::TooFewReplicates(..) => "too_few_replicates",
            Error::GammaMismatch(..) => "gamma_mismatch",
            Error::CoverageMismatch(..) => "coverage_mismatch",
            Error::SingularCovariance => "singular_covariance",
            Error::Json(_) => "json",
        }
    }

    /// Whether the failure stems from user input rather than a numerical fit.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::NonNumeric { .. }
                | Error::NonFinite { .. }
                | Error::NonPositiveLog { .. }
                | Error::EmptyDataset
                | Error::InvalidArgument(_)
                | Error::Json(_)
                | Error::TooFewReplicates(..)
                | Error::GammaMismatch(..)
                | Error::CoverageMismatch(..)
                | Error::Extrapolation { .. }
        )
    }
}
