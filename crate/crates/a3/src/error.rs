//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors produced by construction, geometry, consensus, verification, the
/// reference policies, and the rollout harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector quantity had the wrong number of dimensions.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two sequences that must share a horizon did not.
    #[error("horizon mismatch: expected {expected}, got {got}")]
    HorizonMismatch { expected: usize, got: usize },

    /// A step index fell outside `0..horizon`.
    #[error("step index {step} out of range for horizon {horizon}")]
    StepOutOfRange { step: usize, horizon: usize },

    /// The alignment window must stay strictly below the horizon.
    #[error("alignment window {window} too large for horizon {horizon}")]
    WindowTooLarge { window: usize, horizon: usize },

    /// A non-finite value showed up where only finite reals are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A pairwise distance matrix failed validation.
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(&'static str),

    /// An operation over cluster members received an empty member set.
    #[error("empty cluster")]
    EmptyCluster,

    /// Paired inputs had different lengths.
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A configuration value violated its documented constraint.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A verification context was malformed.
    #[error("invalid verify context: {0}")]
    InvalidContext(String),

    /// The conditioning sub-matrix of a Gaussian re-decode was singular.
    #[error("singular conditioning sub-matrix")]
    SingularConditioning,

    /// Rejection sampling accepted no draws.
    #[error("insufficient data: 0 of {attempted} samples accepted")]
    InsufficientData { attempted: usize },

    /// The policy failed while serving the batched verification query.
    #[error("verification unavailable: {0}")]
    VerificationUnavailable(String),

    /// The policy failed while sampling candidate chunks.
    #[error("policy error: {0}")]
    Policy(String),

    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}
