//! Counter-based random source.
//!
//! A stream is addressed by `(seed, stream id, counter)`. The keystream is
//! ChaCha12 keyed from the seed, with the stream id selecting the ChaCha
//! nonce and the counter indexing 64-bit words within it, so any position
//! can be reconstructed without replaying earlier draws.
//!
//! Normals use the Box-Muller transform; each pair of normals consumes two
//! 64-bit words. An odd-length request discards the unused sine branch.

use std::f64::consts::TAU;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use super::tensor::Tensor;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    core: ChaCha12Rng,
}

impl PartialEq for RngStream {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.stream == other.stream && self.counter() == other.counter()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::at(seed, stream, 0)
    }

    /// Stream positioned after `counter` 64-bit draws.
    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut core = ChaCha12Rng::seed_from_u64(seed);
        core.set_stream(stream);
        core.set_word_pos(u128::from(counter) * 2);
        Self { seed, stream, core }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        (self.core.get_word_pos() / 2) as u64
    }

    /// Independent child stream; same seed, derived stream id.
    pub fn fork(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)));
        RngStream::new(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform on (0, 1].
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
    }

    /// Uniform on [low, high).
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // Lemire multiply-shift; the bias is at most n / 2^64.
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (TAU * u2).sin_cos();
        (radius * cos, radius * sin)
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal_pair().0;
        }
    }

    /// Tensor of i.i.d. standard normals.
    pub fn gaussian(&mut self, shape: &[usize]) -> Tensor {
        let mut data = vec![0.0; shape.iter().product()];
        self.fill_normal(&mut data);
        Tensor::from_parts(shape.to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::compensated_sum;

    #[test]
    fn same_address_same_draws() {
        let mut a = RngStream::new(0, 0);
        let mut b = RngStream::new(0, 0);
        assert_eq!(a.gaussian(&[2]), b.gaussian(&[2]));
        assert_eq!(a.counter(), 2);
    }

    #[test]
    fn empty_request_consumes_nothing() {
        let mut a = RngStream::new(3, 1);
        let t = a.gaussian(&[0]);
        assert!(t.is_empty());
        assert_eq!(a.counter(), 0);
    }

    #[test]
    fn random_access_matches_sequential() {
        let mut seq = RngStream::new(42, 9);
        let draws: Vec<u64> = (0..10).map(|_| seq.next_u64()).collect();
        let mut jumped = RngStream::at(42, 9, 7);
        assert_eq!(jumped.next_u64(), draws[7]);
        assert_eq!(seq.counter(), 10);
    }

    #[test]
    fn streams_and_forks_differ() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        assert_ne!(a.next_u64(), b.next_u64());
        let root = RngStream::new(1, 0);
        assert_ne!(root.fork(0).stream(), root.fork(1).stream());
        assert_eq!(root.fork(5), root.fork(5));
    }

    #[test]
    fn odd_length_matches_prefix_of_pairs() {
        let mut a = RngStream::new(5, 5);
        let mut b = RngStream::new(5, 5);
        let three = a.gaussian(&[3]);
        let four = b.gaussian(&[4]);
        assert_eq!(&three.data()[..3], &four.data()[..3]);
        assert_eq!(a.counter(), b.counter());
    }

    #[test]
    fn moments_of_a_million_draws() {
        // 3-sigma bounds at M = 1e6: mean +-0.003, variance +-0.0042.
        let mut rng = RngStream::new(0, 0);
        let draws = rng.gaussian(&[1_000_000]);
        let m = draws.len() as f64;
        let mean = compensated_sum(draws.data().iter().copied()) / m;
        let var = compensated_sum(draws.data().iter().map(|v| (v - mean) * (v - mean))) / (m - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "variance {var}");
    }

    #[test]
    fn uniform_range_and_below() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..10_000 {
            let u = rng.uniform_range(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&u));
            assert!(rng.below(7) < 7);
        }
    }
}
