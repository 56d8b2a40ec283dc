//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness asks for a stream by name (and optionally an
//! index), so adding a new consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Seed for the substream `name` of `master`.
pub fn substream_seed(master: u64, name: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for the substream `name`/`index` of `master`.
pub fn substream(master: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(substream_seed(master, name, index))
}

/// Generator seeded directly, for callers that already hold a derived seed.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Fill a buffer with standard normal draws.
pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    use rand::Rng as _;
    for v in out {
        *v = rng.sample(rand_distr::StandardNormal);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_independent_of_each_other() {
        let a: u64 = substream(1, "corpus", 0).random();
        let b: u64 = substream(1, "train", 0).random();
        let c: u64 = substream(1, "corpus", 1).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, substream(1, "corpus", 0).random::<u64>());
    }
}
