//! Deterministic seed derivation.
//!
//! Every random draw in the system comes from a ChaCha12 stream seeded by a
//! value derived from the experiment seed plus a stable textual path, so any
//! artifact can be regenerated bit-identically and independent draws never
//! share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(h: u64, bytes: &[u8]) -> u64 {
    let mut h = h;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a base seed, a role tag, and index coordinates.
pub fn subseed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &base.to_le_bytes());
    h = fnv1a(h, tag.as_bytes());
    for &i in indices {
        h = fnv1a(h, &i.to_le_bytes());
    }
    h
}

/// RNG for a derived seed.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// One standard-normal draw (Box-Muller).
pub fn gaussian<R: rand::Rng>(r: &mut R) -> f64 {
    let u1: f64 = r.random_range(1e-12..1.0);
    let u2: f64 = r.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn subseed_is_stable_and_tag_sensitive() {
        let a = subseed(17, "init", &[3]);
        assert_eq!(a, subseed(17, "init", &[3]));
        assert_ne!(a, subseed(17, "init", &[4]));
        assert_ne!(a, subseed(17, "rr", &[3]));
        assert_ne!(a, subseed(18, "init", &[3]));
    }

    #[test]
    fn streams_from_equal_seeds_agree() {
        let x: f64 = rng(subseed(1, "t", &[])).random();
        let y: f64 = rng(subseed(1, "t", &[])).random();
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
