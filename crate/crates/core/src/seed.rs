//! Seed derivation. Every random stream in a run is a ChaCha8 generator keyed
//! by a hash of the master seed and a tuple of tags, so streams never depend
//! on the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hash of `(master, tags...)` folded into 64 bits.
pub fn derive(master: u64, tags: &[&str], indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"catmouse-seed-v1");
    h.update(master.to_le_bytes());
    for t in tags {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tags: &[&str], indices: &[u64]) -> Rng {
    rng(derive(master, tags, indices))
}
