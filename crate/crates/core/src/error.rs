//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by estimators, selectors, and ingestion.
#[derive(Debug, Error)]
pub enum Error {
    /// Too few usable observations for the requested fit or selection.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Design matrix rank-deficient after column scaling.
    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    /// An observation with leverage one makes HC2/HC3 residual deflation undefined.
    #[error("observation {index} has leverage 1 under {flavor}; residual deflation undefined")]
    LeverageOne { index: usize, flavor: String },

    /// Cluster-robust variance requested but an observation carries no cluster key.
    #[error("missing cluster key on observation {0}")]
    MissingCluster(usize),

    /// Fuzzy estimation with an exactly zero first-stage jump.
    #[error("first-stage jump is exactly zero; fuzzy ratio undefined")]
    ZeroFirstStage,

    /// A required age/skill/regime cell holds no observations.
    #[error("empty cell: {0}")]
    EmptyCell(String),

    /// The skilled-share change across regimes is exactly zero.
    #[error("skilled-share change across regimes is zero; premium system is degenerate")]
    DegenerateShareChange,

    /// A schooling gap used for per-year scaling is exactly zero.
    #[error("schooling gap is zero: {0}")]
    ZeroSchoolingGap(String),

    /// An elasticity inversion denominator is exactly zero.
    #[error("degenerate denominator in elasticity inversion: {0}")]
    DegenerateDenominator(String),

    /// Every bootstrap replication errored.
    #[error("all {0} bootstrap replications failed")]
    AllReplicationsFailed(usize),

    /// Input failed schema validation.
    #[error("schema error: {0}")]
    Schema(String),

    /// A malformed input row.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Invalid argument to an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input data rather than estimation failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_) | Error::Parse { .. } | Error::Io(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
