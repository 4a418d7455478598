//! Counter-style random streams keyed by stable identifiers.
//!
//! Each stream is a ChaCha8 generator whose seed is the SHA-256 digest of a
//! domain tag, the user seed and the key parts, so draws depend only on the
//! key and never on iteration order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn keyed_rng(domain: &str, seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
