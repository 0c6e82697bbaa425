//! Seeded, platform-independent random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Name of the generator behind every [`RngStream`].
pub const GENERATOR: &str = "chacha8";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream identified by `(seed, stream)`; the draw position is the
/// stream's word counter.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Independent stream derived from this one's identity and `label`.
    /// Does not advance `self`.
    pub fn child(&self, label: u64) -> Self {
        Self::with_stream(self.seed, splitmix64(self.stream ^ splitmix64(label.wrapping_add(1))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.rng.random();
        let x = lo + (hi - lo) * u;
        if x < hi {
            x
        } else {
            lo
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        let u: f64 = self.rng.random();
        u < p
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` in random order.
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx.truncate(k);
        idx
    }

    pub fn normal_tensor<S: Scalar>(&mut self, shape: Vec<usize>) -> Tensor<S> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(self.normal())).collect();
        Tensor::new(shape, data).expect("shape matches data")
    }

    /// Inverted-dropout mask: each entry is `0` with probability `drop`,
    /// otherwise `1 / (1 - drop)`.
    pub fn dropout_mask<S: Scalar>(&mut self, shape: Vec<usize>, drop: f64) -> Tensor<S> {
        if drop <= 0.0 {
            return Tensor::ones(shape);
        }
        let keep = 1.0 - drop;
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if self.bernoulli(keep) { S::of(1.0 / keep) } else { S::zero() })
            .collect();
        Tensor::new(shape, data).expect("shape matches data")
    }
}

/// Supplier of standard-normal noise tensors for reparameterized sampling.
pub trait NoiseSource<S: Scalar> {
    fn standard_normal(&mut self, shape: Vec<usize>) -> Tensor<S>;
}

impl<S: Scalar> NoiseSource<S> for RngStream {
    fn standard_normal(&mut self, shape: Vec<usize>) -> Tensor<S> {
        self.normal_tensor(shape)
    }
}

/// Noise source that always returns zeros (draws collapse to means).
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroNoise;

impl<S: Scalar> NoiseSource<S> for ZeroNoise {
    fn standard_normal(&mut self, shape: Vec<usize>) -> Tensor<S> {
        Tensor::zeros(shape)
    }
}

/// Replays previously recorded noise tensors in order, then falls back to
/// the wrapped source.
pub struct Recorded<S, N> {
    queue: std::collections::VecDeque<Tensor<S>>,
    log: Vec<Tensor<S>>,
    fallback: N,
}

impl<S: Scalar, N: NoiseSource<S>> Recorded<S, N> {
    pub fn new(fallback: N) -> Self {
        Self {
            queue: Default::default(),
            log: Vec::new(),
            fallback,
        }
    }

    pub fn replay(tensors: Vec<Tensor<S>>, fallback: N) -> Self {
        Self {
            queue: tensors.into(),
            log: Vec::new(),
            fallback,
        }
    }

    /// Every tensor handed out so far.
    pub fn into_log(self) -> Vec<Tensor<S>> {
        self.log
    }
}

impl<S: Scalar, N: NoiseSource<S>> NoiseSource<S> for Recorded<S, N> {
    fn standard_normal(&mut self, shape: Vec<usize>) -> Tensor<S> {
        let t = match self.queue.pop_front() {
            Some(t) if t.shape() == shape.as_slice() => t,
            _ => self.fallback.standard_normal(shape),
        };
        self.log.push(t.clone());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_and_stream_replay() {
        let mut a = RngStream::with_stream(7, 3);
        let mut b = RngStream::with_stream(7, 3);
        let xs: Vec<f64> = (0..100).map(|_| a.normal()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.normal()).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.counter(), b.counter());
        assert!(a.counter() > 0);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::with_stream(7, 0);
        let mut b = RngStream::with_stream(7, 1);
        assert_ne!(a.normal(), b.normal());
        let root = RngStream::new(7);
        let mut c1 = root.child(1);
        let mut c2 = root.child(2);
        assert_ne!(c1.normal(), c2.normal());
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = RngStream::new(1);
        for _ in 0..10_000 {
            let x = r.uniform(-2.0, -1.0);
            assert!((-2.0..-1.0).contains(&x));
        }
    }

    #[test]
    fn dropout_mask_values() {
        let mut r = RngStream::new(2);
        let m: Tensor<f64> = r.dropout_mask(vec![50, 4], 0.75);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 4.0));
        let eval: Tensor<f64> = r.dropout_mask(vec![2, 2], 0.0);
        assert_eq!(eval.data(), &[1.0; 4]);
    }
}
