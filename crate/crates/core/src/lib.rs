//! Generation-based random linear network coding, from construction to analysis.
//!
//! The library covers the full pipeline: partitioning a file into (possibly
//! overlapping) generations, encoding random linear combinations over GF(2^k),
//! pushing packets through an erasure channel, and decoding by Gaussian
//! elimination with cross-generation substitution. Alongside the simulator it
//! implements the analytical machinery that predicts decoding latency:
//! coupon-collection moments, rank-deficiency tails, and the annex-overlap
//! heuristic, all cross-checked against Monte-Carlo in the test suite.

pub mod codec;
pub mod collector;
pub mod gf;
pub mod latency;
pub mod layout;
pub mod quad;

use rand_chacha::rand_core::SeedableRng;

/// Errors shared across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violates an operation's domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// An expectation is infinite or a spec cannot be met.
    #[error("infeasible input: {0}")]
    Infeasible(String),
    /// Division by zero in a finite field.
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    /// Quadrature or series evaluation failed to settle within its budget.
    #[error("no convergence after {refinements} refinements (last {last:.12e}, previous {prev:.12e})")]
    NoConvergence {
        refinements: usize,
        last: f64,
        prev: f64,
    },
    /// A simulation exceeded its packet safety cap.
    #[error("safety cap of {cap} packets reached before decoding completed")]
    SafetyCap { cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Independent RNG stream for one trial of a seeded experiment.
///
/// Streams derived from the same master seed never overlap, so trials may be
/// dispatched in any order (or in parallel) and still reproduce bit-exactly.
pub fn trial_rng(master_seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
