//! Keyed random streams and the discrete samplers the simulator needs.
//!
//! Every stream is a ChaCha8 generator whose key is derived from the master
//! seed and a role, with the ChaCha stream id set to the segment index. Any
//! segment can therefore be generated on any thread in any order.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Photons,
    DarkSignal,
    DarkIdler,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Photons => 0x7068_6f74,
            StreamRole::DarkSignal => 0x6461_726b_0000,
            StreamRole::DarkIdler => 0x6461_726b_0001,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-run `index` of a master seed (e.g. one sweep point).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut state = master ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    splitmix64(&mut state)
}

/// Independent stream for `(seed, role, index)`.
pub fn stream(seed: u64, role: StreamRole, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ role.tag().rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform on (0, 1].
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

// Above this mean, sequential inversion is slower than rand_distr's sampler.
const INVERSION_LIMIT: f64 = 30.0;

/// Poisson sampler with the zero-count probability precomputed.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    mean: f64,
    p_zero: f64,
    /// P(K = 1 | K >= 1) = mean / (e^mean - 1), free of cancellation for tiny means.
    p_one_given_nonzero: f64,
    large: Option<Poisson<f64>>,
}

impl PoissonSampler {
    pub fn new(mean: f64) -> Self {
        assert!(mean.is_finite() && mean >= 0.0, "Poisson mean must be finite and >= 0");
        PoissonSampler {
            mean,
            p_zero: (-mean).exp(),
            p_one_given_nonzero: if mean > 0.0 { mean / mean.exp_m1() } else { 1.0 },
            large: (mean > INVERSION_LIMIT).then(|| Poisson::new(mean).expect("valid mean")),
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Probability that a draw is nonzero.
    pub fn p_nonzero(&self) -> f64 {
        -(-self.mean).exp_m1()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.mean <= 0.0 {
            return 0;
        }
        if let Some(d) = &self.large {
            return d.sample(rng) as u64;
        }
        let u: f64 = rng.random();
        if u < self.p_zero {
            return 0;
        }
        self.invert_from(1, self.p_zero * self.mean, self.p_zero, u)
    }

    /// Draw conditioned on the result being at least one.
    pub fn sample_nonzero<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        debug_assert!(self.mean > 0.0);
        if let Some(d) = &self.large {
            loop {
                let k = d.sample(rng) as u64;
                if k > 0 {
                    return k;
                }
            }
        }
        let u: f64 = rng.random();
        self.invert_from(1, self.p_one_given_nonzero, 0.0, u)
    }

    fn invert_from(&self, mut k: u64, mut p: f64, cdf_before: f64, u: f64) -> u64 {
        let mut cdf = cdf_before + p;
        while u >= cdf {
            k += 1;
            p *= self.mean / k as f64;
            if p == 0.0 {
                break;
            }
            cdf += p;
        }
        k
    }
}

/// Counts failures before the next success of a Bernoulli(`p`) sequence.
#[derive(Debug, Clone, Copy)]
pub struct GeometricSkip {
    ln_fail: f64,
}

impl GeometricSkip {
    pub fn new(p: f64) -> Self {
        assert!(p > 0.0 && p <= 1.0, "success probability must lie in (0, 1]");
        GeometricSkip { ln_fail: (-p).ln_1p() }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.ln_fail == f64::NEG_INFINITY {
            return 0;
        }
        let g = (open_unit(rng).ln() / self.ln_fail).floor();
        if g >= u64::MAX as f64 {
            u64::MAX
        } else {
            g as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[u64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
        let v = xs.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |mut r: ChaCha8Rng| (0..4).map(|_| r.next_u64()).collect::<Vec<_>>();
        let a = draw(stream(7, StreamRole::Photons, 3));
        let b = draw(stream(7, StreamRole::Photons, 3));
        assert_eq!(a, b);
        let mut other_index = stream(7, StreamRole::Photons, 4);
        let mut other_role = stream(7, StreamRole::DarkSignal, 3);
        let mut other_seed = stream(8, StreamRole::Photons, 3);
        assert_ne!(a[0], other_index.next_u64());
        assert_ne!(a[0], other_role.next_u64());
        assert_ne!(a[0], other_seed.next_u64());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(derive_seed(42, 3), derive_seed(42, 3));
        assert_ne!(derive_seed(42, 3), derive_seed(43, 3));
    }

    #[test]
    fn poisson_moments() {
        let mut rng = stream(1, StreamRole::Photons, 0);
        for &mean in &[0.12, 2.5, 45.0] {
            let sampler = PoissonSampler::new(mean);
            let xs: Vec<u64> = (0..200_000).map(|_| sampler.sample(&mut rng)).collect();
            let (m, v) = mean_var(&xs);
            let se = (mean / xs.len() as f64).sqrt();
            assert!((m - mean).abs() < 5.0 * se, "mean {m} vs {mean}");
            assert!((v / mean - 1.0).abs() < 0.03, "var {v} vs {mean}");
        }
    }

    #[test]
    fn zero_truncated_poisson_matches_conditional_pmf() {
        let mut rng = stream(2, StreamRole::Photons, 0);
        let mean = 0.8;
        let n = 400_000;
        let sampler = PoissonSampler::new(mean);
        let mut counts = [0u64; 6];
        for _ in 0..n {
            let k = sampler.sample_nonzero(&mut rng) as usize;
            assert!(k >= 1);
            if k < counts.len() {
                counts[k] += 1;
            }
        }
        let norm = 1.0 - (-mean).exp();
        for (k, &count) in counts.iter().enumerate().take(4).skip(1) {
            let expected = n as f64 * crate::model::pair_number_pmf(mean, k as u64).unwrap() / norm;
            assert!(
                (count as f64 - expected).abs() < 5.0 * expected.sqrt(),
                "k={k}: {count} vs {expected}"
            );
        }
        // Tiny means: essentially always one.
        assert_eq!(PoissonSampler::new(1e-9).sample_nonzero(&mut rng), 1);
        assert!(PoissonSampler::new(60.0).sample_nonzero(&mut rng) >= 1);
    }

    #[test]
    fn geometric_mean() {
        let mut rng = stream(3, StreamRole::Photons, 0);
        let p = 0.01;
        let skip = GeometricSkip::new(p);
        let xs: Vec<u64> = (0..200_000).map(|_| skip.sample(&mut rng)).collect();
        let (m, _) = mean_var(&xs);
        let expected = (1.0 - p) / p;
        let se = ((1.0 - p) / (p * p) / xs.len() as f64).sqrt();
        assert!((m - expected).abs() < 5.0 * se);
        assert_eq!(GeometricSkip::new(1.0).sample(&mut rng), 0);
    }
}
