//! Seed derivation and small sampling helpers.
//!
//! Every random quantity in the lab comes from a ChaCha8 stream whose seed is
//! derived from `(base seed, label, index)`, so adding a new consumer of
//! randomness never shifts the draws of an existing one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit seed for a named substream.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then mix in base and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(h ^ splitmix64(base)) ^ index)
}

pub fn stream(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(base: u64, label: &str, index: u64) -> LabRng {
    stream(derive_seed(base, label, index))
}

/// Inverse-CDF draw from unnormalized non-negative weights.
pub fn sample_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed on the rounding slack at the top; take the last nonzero weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_separate_labels_and_indices() {
        let a = derive_seed(1, "encoder", 0);
        assert_eq!(a, derive_seed(1, "encoder", 0));
        assert_ne!(a, derive_seed(1, "encoder", 1));
        assert_ne!(a, derive_seed(1, "shuffle", 0));
        assert_ne!(a, derive_seed(2, "encoder", 0));
    }

    #[test]
    fn weighted_sampling_skips_zero_weights() {
        let mut rng = stream(3);
        for _ in 0..1000 {
            let i = sample_weighted(&[0.0, 1.0, 0.0, 2.0], &mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut p = permutation(50, &mut stream(9));
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
