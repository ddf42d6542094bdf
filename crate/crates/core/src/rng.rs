//! Named, seed-derived random streams.
//!
//! Every consumer of randomness asks for a stream by `(seed, label, path)`;
//! two streams with different labels or paths are independent, and the same
//! triple always yields the same sequence. Nothing in the crate touches a
//! thread-local or OS-seeded generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a 64-bit key for `(seed, label, path)`.
pub fn derive_key(seed: u64, label: &str, path: &[u64]) -> u64 {
    let mut k = splitmix64(seed ^ splitmix64(fnv1a(label.as_bytes())));
    for &p in path {
        k = splitmix64(k ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    k
}

/// Independent ChaCha stream for `(seed, label, path)`.
pub fn stream(seed: u64, label: &str, path: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    let mut k = derive_key(seed, label, path);
    for chunk in key.chunks_mut(8) {
        k = splitmix64(k);
        chunk.copy_from_slice(&k.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_triple_same_sequence() {
        let a: Vec<u64> = stream(7, "init", &[1, 2])
            .sample_iter(rand::distributions::Standard)
            .take(4)
            .collect();
        let b: Vec<u64> = stream(7, "init", &[1, 2])
            .sample_iter(rand::distributions::Standard)
            .take(4)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_and_paths_separate_streams() {
        let first = |s: &mut StreamRng| s.gen::<u64>();
        let base = first(&mut stream(7, "init", &[]));
        assert_ne!(base, first(&mut stream(7, "batches", &[])));
        assert_ne!(base, first(&mut stream(8, "init", &[])));
        assert_ne!(first(&mut stream(7, "x", &[1, 2])), first(&mut stream(7, "x", &[2, 1])));
    }
}
