//! Named, order-independent random streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A generator keyed by `seed` and a path of labels, so that each crash,
/// chain or intersection draws from its own stream regardless of the order
/// or thread in which it is processed.
pub fn stream_rng(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Derive a child seed in the same way.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    use rand::RngCore;
    stream_rng(seed, labels).next_u64()
}
