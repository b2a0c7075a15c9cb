//! Labeled sub-seeds: one experiment seed drives every random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent 32-byte seed from `seed` and a stream label.
pub fn sub_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

pub fn sub_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(sub_seed(seed, label))
}
