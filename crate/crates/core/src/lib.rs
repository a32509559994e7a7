//! Adversarial pruning laboratory for small dense ReLU networks.
//!
//! The crate covers the whole pipeline on desk-scale data: PGD adversarial
//! training, one-shot pruning (GUP, LUP, FP, NS), adversarial lottery-ticket
//! search with rewinding, inverse weights inheritance, and Lipschitz-based
//! robustness certificates with independent empirical checks.

pub mod attack;
pub mod certify;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod iwi;
pub mod linalg;
pub mod lottery;
pub mod net;
pub mod pruning;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

/// Sizes rayon's global pool from the `SRL_THREADS` environment variable.
/// Returns the number of threads in effect. Call before any parallel work;
/// later calls leave an existing pool untouched.
pub fn init_threads_from_env() -> Result<usize> {
    if let Ok(raw) = std::env::var("SRL_THREADS") {
        let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::InvalidConfig(format!("SRL_THREADS={raw:?} is not a positive integer"))
        })?;
        // An already-initialized pool is not an error for callers.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}
