//! Seed derivation. Every job draws from its own ChaCha stream keyed by the
//! global seed and a stable label, so parallel scheduling order never changes
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type JobRng = ChaCha8Rng;

pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_for(global: u64, label: &str) -> JobRng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, label))
}

pub fn rng_from_seed(seed: u64) -> JobRng {
    ChaCha8Rng::seed_from_u64(seed)
}
