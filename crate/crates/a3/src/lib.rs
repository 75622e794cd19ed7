//! Adaptive action acceptance (A3) for action-chunking policies.
//!
//! Chunked sequence policies amortize inference cost by predicting a horizon
//! of `H` actions per forward pass, but committing a fixed prefix of every
//! chunk trades success against call count: short prefixes replan constantly,
//! long prefixes drift open-loop. A3 replaces the fixed prefix with an
//! adaptive one. Each decision:
//!
//! 1. samples `K` candidate chunks, integrates them into trajectories,
//!    clusters them, and scores the dominant mode ([`consensus`]);
//! 2. re-decodes every draft action under two kinds of fixed context
//!    (higher-consensus actions, and all temporally earlier actions) in one
//!    batched policy call, accepting a step only when the re-decode agrees
//!    with the draft within a per-dimension threshold ([`verifier`]);
//! 3. commits the longest prefix in which every step passed both checks.
//!
//! The crate is policy-agnostic: anything implementing
//! [`policy::ChunkPolicy`] (sample chunks + conditional re-decode) can be
//! driven by [`verifier::a3_decide`]. Reference Gaussian and mixture policies
//! with closed-form conditionals live in [`policy`], and a seeded kinematic
//! rollout harness for fixed-vs-adaptive experiments lives in [`sim`].
//!
//! Start with the `examples/` directory: each example exercises one layer of
//! the stack, from raw trajectory distances up to a full experiment sweep.

pub mod consensus;
pub mod error;
pub mod policy;
pub mod sim;
pub mod trajectory;
pub mod verifier;

pub(crate) mod seed;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
