//! Seeded random-number streams.
//!
//! Every command derives all of its randomness from a single seed, split into
//! named sub-streams ("split", "init", "dropout", "gumbel", "batch", "synth").
//! Sub-streams are independent ChaCha streams, so enabling or disabling one
//! consumer (say, pseudo-label sampling) never shifts the draws seen by
//! another (say, dropout).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic RNG type used throughout the crate.
pub type Stream = ChaCha12Rng;

/// Derives the named sub-stream of `seed`.
pub fn substream(seed: u64, name: &str) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

// FNV-1a, stable across platforms; only used to map stream names to ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic() {
        let mut a = substream(7, "dropout");
        let mut b = substream(7, "dropout");
        let xs: Vec<f64> = (0..16).map(|_| a.random()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn named_streams_differ() {
        let mut a = substream(7, "dropout");
        let mut b = substream(7, "gumbel");
        let xs: Vec<f64> = (0..16).map(|_| a.random()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.random()).collect();
        assert_ne!(xs, ys);
    }
}
