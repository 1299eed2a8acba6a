//! Labeled seed substreams.
//!
//! Every stage draws randomness from its own stream derived from one global
//! seed: `derive(global, label)` is the first eight bytes (little endian) of
//! `SHA-256(global.to_le_bytes() || label)`. Streams are ChaCha8, which is
//! portable and stable across platforms and crate releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

pub fn derive(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, label: &str) -> StageRng {
    rng(derive(seed, label))
}
