//! Deterministic seed derivation. Every randomized stage takes an explicit
//! base seed and derives per-item seeds from `(seed, context)` so results do
//! not depend on execution order.

use sha2::{Digest, Sha256};

/// Derives a child seed from a base seed and a context string.
pub fn derive_seed(base: u64, context: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(context.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is at least 8 bytes"))
}
