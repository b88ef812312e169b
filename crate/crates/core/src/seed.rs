//! Stable seed derivation.
//!
//! Derived seeds must not depend on platform, thread scheduling or the
//! standard library's hasher, so they are taken from a SHA-256 over the
//! tagged parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes a domain tag plus an ordered list of parts into a 64-bit seed.
pub fn derive_seed(domain: &str, parts: &[&dyn AsSeedPart]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    for part in parts {
        hasher.update([0x1f]);
        part.feed(&mut hasher);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub trait AsSeedPart {
    fn feed(&self, hasher: &mut Sha256);
}

impl AsSeedPart for u64 {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update(self.to_le_bytes());
    }
}

impl AsSeedPart for u32 {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update(u64::from(*self).to_le_bytes());
    }
}

impl AsSeedPart for usize {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update((*self as u64).to_le_bytes());
    }
}

impl AsSeedPart for str {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update(self.as_bytes());
    }
}

impl AsSeedPart for &str {
    fn feed(&self, hasher: &mut Sha256) {
        (**self).feed(hasher)
    }
}

impl AsSeedPart for String {
    fn feed(&self, hasher: &mut Sha256) {
        self.as_str().feed(hasher)
    }
}
