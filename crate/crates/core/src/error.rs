//! Crate-wide error type.
//!
//! Every variant carries a stable machine-readable code (see [`Error::code`])
//! which the CLI writes into its error documents.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing or malformed header in {path}: expected `{expected}`")]
    MissingHeader { path: PathBuf, expected: String },

    #[error("no valid rows in {0}")]
    NoValidRows(PathBuf),

    #[error("invalid value for `{field}`: {message}")]
    InvalidInput { field: String, message: String },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("width mismatch: expected {expected} bits, found {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error("conflicting fingerprints for compound `{0}`")]
    ConflictingFingerprint(String),

    #[error("no eligible targets for {0}")]
    NoEligibleTargets(String),

    #[error("k = {k} exceeds available {what} ({available})")]
    KTooLarge { k: usize, available: usize, what: String },

    #[error("training partition of fold `{0}` is empty")]
    EmptyTrain(String),

    #[error("all folds were dropped: {0}")]
    AllFoldsDropped(String),

    #[error("all folds are degenerate (single-class test sets)")]
    AllDegenerate,

    #[error("rank-deficient design; empty cells: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("paper `{0}` is nested under more than one target")]
    NonNested(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("too many undefined bootstrap replicates: {skipped} of {total}")]
    BootstrapFailure { skipped: usize, total: usize },

    #[error("missing revalidation rows for trials: {}", .0.join(", "))]
    MissingRevalidation(Vec<String>),

    #[error("missing factorial cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),

    #[error("slope must be negative for a noise projection (got {0})")]
    NonNegativeSlope(f64),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::MissingHeader { .. } => "missing_header",
            Error::NoValidRows(_) => "no_valid_rows",
            Error::InvalidInput { .. } => "invalid_input",
            Error::SingleClass => "single_class",
            Error::WidthMismatch { .. } => "width_mismatch",
            Error::ConflictingFingerprint(_) => "conflicting_fingerprint",
            Error::NoEligibleTargets(_) => "no_eligible_targets",
            Error::KTooLarge { .. } => "k_too_large",
            Error::EmptyTrain(_) => "empty_train",
            Error::AllFoldsDropped(_) => "all_folds_dropped",
            Error::AllDegenerate => "all_degenerate",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NonNested(_) => "non_nested",
            Error::Degenerate(_) => "degenerate",
            Error::BootstrapFailure { .. } => "bootstrap_failure",
            Error::MissingRevalidation(_) => "missing_revalidation",
            Error::MissingCells(_) => "missing_cells",
            Error::NonNegativeSlope(_) => "non_negative_slope",
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
