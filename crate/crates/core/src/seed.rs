//! Stable seed derivation.
//!
//! Every random stream in the toolkit is keyed by a 64-bit seed plus a short
//! purpose tag, so that adding a new consumer of randomness never shifts the
//! draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stable 64-bit hash of `(master, arm, purpose)`.
///
/// Strings are length-prefixed before hashing so `("ab", "c")` and
/// `("a", "bc")` never collide.
pub fn derive_seed(master: u64, arm: &str, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in [arm, purpose] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// A generator for one purpose under `seed`.
pub fn rng_for(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, "", purpose))
}

/// Independent stream number `index` for `purpose`; used for per-query
/// generation so queries can be produced in any order.
pub fn stream_rng(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mut rng = rng_for(seed, purpose);
    rng.set_stream(index);
    rng
}
