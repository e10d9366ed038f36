//! Seed derivation and RNG stream splitting.
//!
//! Every random decision in a run comes from a [`ChaCha8Rng`], which produces
//! the same stream on every platform. Two rules keep runs reproducible and
//! independent of scheduling:
//!
//! 1. A run seed is the first 8 bytes (little endian) of
//!    `SHA-256("chestrag/run" || master_seed_le || condition || 0x00 || run_index_le)`.
//!    Keying on the condition *name* means dropping a condition from a suite
//!    does not shift the seeds of the others.
//! 2. Inside a run, each consumer gets its own stream of the generator seeded
//!    with the run seed: `ChaCha8Rng::seed_from_u64(run_seed)` followed by
//!    `set_stream(purpose)`, with the purpose ids in [`Stream`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::Condition;

/// Stream ids used within a single run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Classifier head initialisation.
    Init = 0,
    /// Weighted batch draws.
    Sampler = 1,
    /// Stratified split shuffling.
    Split = 2,
    /// Synthetic data generation.
    Synth = 3,
}

/// Derive the seed of run `run_index` of `condition` from the suite master seed.
pub fn run_seed(master: u64, condition: Condition, run_index: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"chestrag/run");
    hasher.update(master.to_le_bytes());
    hasher.update(condition.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(run_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Generator for one purpose within a run.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Lowercase hex rendering of a byte slice.
pub fn to_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}
