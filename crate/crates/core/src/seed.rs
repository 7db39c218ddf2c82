//! Deterministic seed splitting. Child streams are derived from a root seed
//! with SplitMix64 so that restarts and trials are reproducible regardless of
//! the order in which they run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ splitmix64(index.wrapping_add(0x5151)))
}

pub fn child_rng(root: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_children() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut s = seeds.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 100);
        assert_eq!(derive_seed(7, 3), seeds[3]);
        assert_ne!(derive_seed(8, 3), seeds[3]);
    }
}
