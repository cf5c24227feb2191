//! Keyed, splittable random streams.
//!
//! Every draw made by an estimator comes from a [`GaussianStream`] derived
//! from a `(seed, path)` pair. Paths are hierarchical (`level / outer sample /
//! role / inner level / inner sample`), so any sample can be regenerated in
//! isolation and sampled on any thread without shared state. Each stream is a
//! ChaCha8 generator keyed by a 256-bit digest of the path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Position of a stream in the key hierarchy.
///
/// Only a digest of the path is stored; `child` extends it in O(1), so keys
/// are `Copy` and cheap to derive inside hot loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    digest: [u64; 2],
    depth: u32,
}

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey {
            seed,
            digest: [mix64(seed ^ 0x5851_f42d_4c95_7f2d), mix64(seed.wrapping_add(GOLDEN))],
            depth: 0,
        }
    }

    pub fn from_path(seed: u64, path: &[u64]) -> Self {
        path.iter().fold(Self::root(seed), |key, &i| key.child(i))
    }

    #[inline]
    pub fn child(&self, index: u64) -> Self {
        let depth = self.depth + 1;
        let salt = mix64(index.wrapping_add(GOLDEN.wrapping_mul(depth as u64)));
        StreamKey {
            seed: self.seed,
            digest: [
                mix64(self.digest[0] ^ salt),
                mix64(self.digest[1].wrapping_add(salt).rotate_left(23) ^ index),
            ],
            depth,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn stream(&self) -> GaussianStream {
        GaussianStream::new(*self)
    }

    fn chacha_seed(&self) -> [u8; 32] {
        let words = [
            self.digest[0],
            self.digest[1],
            mix64(self.digest[0] ^ self.digest[1].rotate_left(17)),
            mix64(self.digest[1].wrapping_add(self.seed) ^ self.depth as u64),
        ];
        let mut bytes = [0u8; 32];
        for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        bytes
    }
}

/// Derives the stream for `path` under `seed`.
pub fn derive_stream(seed: u64, path: &[u64]) -> GaussianStream {
    StreamKey::from_path(seed, path).stream()
}

/// A reproducible source of standard normal (and uniform) variates that
/// counts every draw it hands out.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    key: StreamKey,
    rng: ChaCha8Rng,
    count: u64,
}

impl GaussianStream {
    pub fn new(key: StreamKey) -> Self {
        GaussianStream {
            key,
            rng: ChaCha8Rng::from_seed(key.chacha_seed()),
            count: 0,
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Number of variates drawn so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        self.count += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`. Counts as one draw.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.count += 1;
        self.rng.random::<f64>()
    }

    /// Fills `out` with independent N(0, `scale`²) variates.
    #[inline]
    pub fn fill_gaussian(&mut self, out: &mut [f64], scale: f64) {
        for v in out.iter_mut() {
            *v = scale * self.rng.sample::<f64, _>(StandardNormal);
        }
        self.count += out.len() as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, path: &[u64], n: usize) -> Vec<f64> {
        let mut s = derive_stream(seed, path);
        (0..n).map(|_| s.next_gaussian()).collect()
    }

    #[test]
    fn same_key_same_sequence() {
        let a = draws(42, &[0], 1000);
        let b = draws(42, &[0], 1000);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn seed_changes_sequence() {
        assert_ne!(draws(42, &[0], 8), draws(43, &[0], 8));
    }

    #[test]
    fn child_matches_from_path() {
        let k = StreamKey::root(7).child(3).child(0).child(11);
        assert_eq!(k, StreamKey::from_path(7, &[3, 0, 11]));
        assert_ne!(k, StreamKey::from_path(7, &[3, 11, 0]));
        assert_ne!(StreamKey::from_path(7, &[0]), StreamKey::from_path(7, &[0, 0]));
    }

    #[test]
    fn sibling_streams_uncorrelated() {
        let n = 100_000;
        let a = draws(42, &[0], n);
        let b = draws(42, &[1], n);
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn gaussian_moments() {
        let n = 1_000_000;
        let a = draws(1, &[5, 5], n);
        let mean = a.iter().sum::<f64>() / n as f64;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.004, "mean {mean}");
        assert!((var - 1.0).abs() < 0.005, "var {var}");
    }

    #[test]
    fn count_tracks_draws() {
        let mut s = derive_stream(0, &[]);
        for _ in 0..7 {
            s.next_gaussian();
        }
        assert_eq!(s.count(), 7);
        let mut buf = [0.0; 5];
        s.fill_gaussian(&mut buf, 2.0);
        s.next_uniform();
        assert_eq!(s.count(), 13);
    }
}
