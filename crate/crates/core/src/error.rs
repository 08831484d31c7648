//! Crate-wide error type.

use thiserror::Error;

/// Coarse classification used by callers (the CLI maps these to exit codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad configuration or arguments.
    Config,
    /// Input data failed structural validation.
    Data,
    /// A numerical procedure failed.
    Numeric,
    /// Underlying I/O failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    // --- data ingestion / validation ---
    #[error("missing column `{name}` in input header")]
    MissingColumn { name: String },
    #[error("non-finite covariate at row {row}, column `{col}`")]
    NonFiniteCovariate { row: usize, col: String },
    #[error("malformed value `{value}` at row {row}, column `{col}`")]
    MalformedValue {
        row: usize,
        col: String,
        value: String,
    },
    #[error("treatment {arm} at row {row} outside declared arms 0..={max_arm}")]
    TreatmentOutOfRange { row: usize, arm: i64, max_arm: usize },
    #[error("arm {arm} never observed among study (S=1) rows")]
    EmptyArm { arm: usize },
    #[error("dataset needs at least {min} rows, found {n}")]
    TooFewRows { n: usize, min: usize },
    #[error("dataset contains no study rows (S=1)")]
    NoStudyRows,
    #[error("study row {row} is missing treatment or outcome")]
    MissingStudyValue { row: usize },
    #[error("column lengths disagree: {what}")]
    InconsistentColumns { what: String },

    // --- nuisance fitting ---
    #[error("fold count {k} invalid for {n} rows (need 2 <= k <= n)")]
    InvalidFoldCount { k: usize, n: usize },
    #[error("no training rows for arm {arm} outside fold {fold}")]
    EmptyTrainingCell { fold: usize, arm: usize },
    #[error("optimizer failed to converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("singular system while {what}")]
    Singular { what: &'static str },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    // --- estimation ---
    #[error("estimand requires external rows (S=0), found none")]
    NoExternalRows,
    #[error("realized weight sum for arm {arm} is zero")]
    ZeroWeightSum { arm: usize },
    #[error("arm {arm} out of range (dataset has {n_arms} arms)")]
    ArmOutOfRange { arm: usize, n_arms: usize },

    // --- bootstrap ---
    #[error("{dropped} of {total} bootstrap replicates were degenerate (limit 10%)")]
    DegenerateReplicates { dropped: usize, total: usize },

    // --- calibration ---
    #[error("moment constraints infeasible: dual norm {dual_norm:.3e} diverged with violation {violation:.3e} after {iterations} iterations")]
    Infeasible {
        iterations: usize,
        dual_norm: f64,
        violation: f64,
    },
    #[error("no weighted observations in arm {arm}")]
    EmptyArmUnderWeights { arm: usize },

    // --- diagnostics ---
    #[error("both selection strata are required, found a single stratum")]
    SingleStratum,
    #[error("rank-deficient regression design")]
    RankDeficientDesign,
    #[error("strata misaligned: expected {expected} entries, found {found}")]
    MisalignedStrata { expected: usize, found: usize },

    // --- simulation ---
    #[error("{failed} of {total} replications failed (limit 5%)")]
    TooManyFailures { failed: usize, total: usize },

    // --- I/O ---
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            MissingColumn { .. }
            | NonFiniteCovariate { .. }
            | MalformedValue { .. }
            | TreatmentOutOfRange { .. }
            | EmptyArm { .. }
            | TooFewRows { .. }
            | NoStudyRows
            | MissingStudyValue { .. }
            | InconsistentColumns { .. }
            | NoExternalRows
            | SingleStratum
            | MisalignedStrata { .. } => ErrorCategory::Data,
            InvalidFoldCount { .. } | InvalidConfig { .. } | ArmOutOfRange { .. } => {
                ErrorCategory::Config
            }
            EmptyTrainingCell { .. }
            | NonConvergence { .. }
            | Singular { .. }
            | DimensionMismatch { .. }
            | ZeroWeightSum { .. }
            | DegenerateReplicates { .. }
            | Infeasible { .. }
            | EmptyArmUnderWeights { .. }
            | RankDeficientDesign
            | TooManyFailures { .. } => ErrorCategory::Numeric,
            Io(_) | Csv(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
