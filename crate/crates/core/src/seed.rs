//! Deterministic seed derivation.

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed from a parent seed and a path of
/// labelled indices, e.g. `derive_seed(run_seed, &["question", "7"])`.
/// Stable across platforms and releases.
pub fn derive_seed(parent: u64, path: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    for part in path {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}
