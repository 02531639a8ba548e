//! Randomness: seeded stream generators for training and counter-based draws
//! for perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower/upper clamp for uniforms feeding `−ln(−ln U)`.
pub const GUMBEL_EPS: f64 = 1e-12;

/// SplitMix64 step. Advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    mix64(*state)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform in `[0, 1)` keyed by `(seed, a, b)`. The same key
/// always yields the same value, independent of call order.
pub fn keyed_uniform(seed: u64, a: u64, b: u64) -> f64 {
    let h = mix64(mix64(mix64(seed ^ 0xA076_1D64_78BD_642F).wrapping_add(a)).wrapping_add(b ^ 0xE703_7ED1_A0B4_28DB));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Seeded training RNG with an inspectable position so checkpoints can
/// restore it exactly.
#[derive(Clone, Debug)]
pub struct TrainRng {
    inner: ChaCha8Rng,
    calls: u64,
}

impl TrainRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            calls: 0,
        }
    }

    /// Number of draws made so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        self.inner.get_seed()
    }

    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn restore(seed: [u8; 32], word_pos: u128, calls: u64) -> Self {
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_word_pos(word_pos);
        Self { inner, calls }
    }

    pub fn uniform(&mut self) -> f64 {
        self.calls += 1;
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.calls += 1;
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.calls += 1;
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.calls += 1;
        self.inner.random::<u64>()
    }

    /// Standard Gumbel draw `−ln(−ln U)`, `U` clamped to `(ε, 1−ε)`.
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform().clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS);
        -(-u.ln()).ln()
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// `softmax((logits + g) / τ)` along rows, with `g` i.i.d. standard Gumbel
/// noise treated as a constant for differentiation.
pub fn gumbel_softmax_sample(
    tape: &mut Tape,
    logits: Var,
    tau: f64,
    rng: &mut TrainRng,
) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("gumbel-softmax temperature must be > 0, got {tau}")));
    }
    let shape = tape.value(logits).shape().to_vec();
    let n: usize = shape.iter().product();
    let noise: Vec<f64> = (0..n).map(|_| rng.gumbel()).collect();
    let g = tape.constant(Tensor::new(shape.clone(), noise)?);
    let noisy = tape.add(logits, g)?;
    let scaled = tape.scale(noisy, 1.0 / tau);
    let axis = if shape.len() == 1 { 0 } else { 1 };
    tape.softmax(scaled, axis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_uniform_is_pure_and_in_range() {
        for k in 0..1000u64 {
            let u = keyed_uniform(7, k, k * 3);
            assert!((0.0..1.0).contains(&u));
            assert_eq!(u, keyed_uniform(7, k, k * 3));
        }
        assert_ne!(keyed_uniform(1, 2, 3), keyed_uniform(2, 2, 3));
    }

    #[test]
    fn rng_restore_resumes_stream() {
        let mut a = TrainRng::new(11);
        for _ in 0..37 {
            a.uniform();
        }
        let mut b = TrainRng::restore(a.seed_bytes(), a.word_pos(), a.calls());
        for _ in 0..10 {
            assert_eq!(a.uniform(), b.uniform());
        }
    }

    #[test]
    fn gumbel_rejects_bad_tau() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::vector(vec![0.0, 1.0]).unwrap());
        let mut rng = TrainRng::new(0);
        assert!(gumbel_softmax_sample(&mut t, l, 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_sample(&mut t, l, -1.0, &mut rng).is_err());
    }
}
