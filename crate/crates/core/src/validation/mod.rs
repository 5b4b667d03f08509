//! Ground-truth simulation, agreement metrics and resampling checks.

mod ari;
mod simulate;
mod stability;

pub use ari::adjusted_rand_index;
pub use simulate::{generate_semi_simulated, Direction, SimSpec, SimTruth};
pub use stability::{
    permutation_p_value, permutation_test, scan_k, split_half_reproducibility, split_half_with, stability_at_k,
    KStability, PermutationResult, ResampleOptions, StabilityReport,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("label vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples, found {0}")]
    TooFewSamples(usize),
    #[error("infeasible simulation: {0}")]
    InvalidSpec(String),
    #[error("invalid resampling request: {0}")]
    InvalidRequest(String),
    #[error("more than half of the fits failed at k = {k} ({failed} of {total})")]
    TooManyFailures { k: usize, failed: usize, total: usize },
}
