//! Error type shared by every module.

use alloc::string::String;

/// Errors raised by the analysis core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A pair has no observed response at any of the four positions.
    #[error("record has no observed responses")]
    NoObservations,

    /// Pattern index outside `0..=14`.
    #[error("pattern index {0} is outside 0..=14")]
    InvalidPattern(u8),

    /// Sequence number other than 1 or 2.
    #[error("sequence {0} is not 1 or 2")]
    InvalidSequence(u8),

    /// A grouping scheme does not assign every pattern to a group.
    #[error("invalid grouping scheme: {0}")]
    InvalidScheme(String),

    /// Proportions were requested for a sequence with no pairs.
    #[error("sequence {0} has no pairs")]
    EmptySequence(u8),

    /// No usable records were supplied.
    #[error("no records to analyse")]
    EmptyData,

    /// A covariance matrix is not symmetric positive definite.
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    /// A pattern-reduced covariance block could not be factorized.
    #[error("reduced covariance for pattern {pattern} is numerically singular")]
    SingularSubcovariance {
        /// Pattern whose block failed.
        pattern: u8,
    },

    /// No fixed-effect parameter of a group is estimable.
    #[error("group {group} has no estimable fixed effects")]
    RankDeficient {
        /// Group label.
        group: String,
    },

    /// The contrast variance is zero or not finite.
    #[error("contrast variance is degenerate ({0})")]
    DegenerateVariance(f64),

    /// A simulation scenario is malformed.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// Invalid fitting options.
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

/// Result alias for this crate.
pub type Result<T> = core::result::Result<T, Error>;
