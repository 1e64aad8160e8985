//! Noise discretization, training curriculum, and noise-index sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consistency-model hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CmConfig {
    /// Noise floor epsilon.
    pub eps: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub sigma_data: f64,
    /// Curriculum start/end discretization counts.
    pub s0: usize,
    pub s1: usize,
    /// Total training iterations K.
    pub total_iters: usize,
    /// Pseudo-Huber constant c.
    pub huber_c: f64,
    /// Target-parameter EMA decay.
    pub mu: f64,
}

impl Default for CmConfig {
    fn default() -> Self {
        CmConfig {
            eps: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            sigma_data: 0.5,
            s0: 10,
            s1: 160,
            total_iters: 50_000,
            huber_c: 0.0064,
            mu: 0.0,
        }
    }
}

impl CmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.sigma_max) {
            return Err(Error::validation("need 0 < eps < sigma_max"));
        }
        if self.rho < 1.0 {
            return Err(Error::validation("rho must be >= 1"));
        }
        if self.s0 >= self.s1 {
            return Err(Error::validation("need s0 < s1"));
        }
        self.curriculum_period()?;
        Ok(())
    }

    /// K' — iterations per curriculum plateau.
    pub fn curriculum_period(&self) -> Result<usize> {
        let doublings = ((self.s1 / self.s0) as f64).log2() + 1.0;
        let period = (self.total_iters as f64 / doublings).floor() as usize;
        if period == 0 {
            return Err(Error::validation(format!(
                "total_iters = {} too small for the curriculum (K' = 0)",
                self.total_iters
            )));
        }
        Ok(period)
    }
}

/// The discretized noise levels: for i in 1..=n,
/// `sigma_i = (eps^(1/rho) + (i-1)/(n-1) * (sigma_max^(1/rho) - eps^(1/rho)))^rho`.
/// Endpoints are pinned to eps and sigma_max exactly.
pub fn karras_sigmas(n: usize, cfg: &CmConfig) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::validation(format!("discretization needs n >= 2, got {n}")));
    }
    let lo = cfg.eps.powf(1.0 / cfg.rho);
    let hi = cfg.sigma_max.powf(1.0 / cfg.rho);
    let mut out = Vec::with_capacity(n);
    out.push(cfg.eps);
    for i in 2..n {
        let frac = (i - 1) as f64 / (n - 1) as f64;
        out.push((lo + frac * (hi - lo)).powf(cfg.rho));
    }
    out.push(cfg.sigma_max);
    Ok(out)
}

/// N(k) = min(s0 * 2^floor(k / K'), s1) + 1 — the step-shaped curriculum.
pub fn curriculum_n(k: usize, cfg: &CmConfig) -> Result<usize> {
    if k >= cfg.total_iters {
        return Err(Error::validation(format!(
            "iteration {k} outside 0..{}",
            cfg.total_iters
        )));
    }
    let period = cfg.curriculum_period()?;
    let doubling = (k / period).min(63) as u32;
    let scaled = cfg.s0.saturating_mul(1usize << doubling.min(usize::BITS - 1));
    Ok(scaled.min(cfg.s1) + 1)
}

/// Draws n uniformly from {1, .., n_levels - 1} so both sigma_n and
/// sigma_{n+1} exist (1-indexed level).
pub fn sample_noise_index(n_levels: usize, rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(n_levels >= 2);
    rng.gen_range(1..n_levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sigma_endpoints_exact() {
        let cfg = CmConfig::default();
        for n in [2, 11, 161] {
            let s = karras_sigmas(n, &cfg).unwrap();
            assert_eq!(s[0], 0.002);
            assert_eq!(s[n - 1], 80.0);
        }
    }

    #[test]
    fn sigma_6_of_11_matches_closed_form() {
        let cfg = CmConfig::default();
        let s = karras_sigmas(11, &cfg).unwrap();
        // independent evaluation of the closed form at i = 6
        let lo = 0.002f64.powf(1.0 / 7.0);
        let hi = 80f64.powf(1.0 / 7.0);
        let expect = (lo + 0.5 * (hi - lo)).powi(7);
        assert!((s[5] - expect).abs() < 1e-12);
        assert!((s[5] - 2.5152).abs() < 1e-3);
    }

    #[test]
    fn sigmas_strictly_increasing() {
        let cfg = CmConfig::default();
        let s = karras_sigmas(161, &cfg).unwrap();
        for w in s.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn n_below_two_rejected() {
        assert!(karras_sigmas(1, &CmConfig::default()).is_err());
    }

    #[test]
    fn curriculum_plateaus_for_k_1000() {
        let cfg = CmConfig { total_iters: 1000, ..Default::default() };
        assert_eq!(cfg.curriculum_period().unwrap(), 200);
        assert_eq!(curriculum_n(0, &cfg).unwrap(), 11);
        assert_eq!(curriculum_n(199, &cfg).unwrap(), 11);
        assert_eq!(curriculum_n(200, &cfg).unwrap(), 21);
        assert_eq!(curriculum_n(400, &cfg).unwrap(), 41);
        assert_eq!(curriculum_n(600, &cfg).unwrap(), 81);
        assert_eq!(curriculum_n(800, &cfg).unwrap(), 161);
        assert_eq!(curriculum_n(999, &cfg).unwrap(), 161);
    }

    #[test]
    fn curriculum_nondecreasing_and_bounded() {
        let cfg = CmConfig { total_iters: 777, ..Default::default() };
        let mut prev = 0;
        for k in 0..cfg.total_iters {
            let n = curriculum_n(k, &cfg).unwrap();
            assert!(n >= prev);
            assert!(n <= cfg.s1 + 1);
            prev = n;
        }
    }

    #[test]
    fn too_small_k_is_config_error() {
        let cfg = CmConfig { total_iters: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_index_always_leaves_successor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_noise_index(2, &mut rng), 1);
        }
    }

    #[test]
    fn noise_index_uniform_within_binomial_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut counts = [0u64; 10];
        for _ in 0..draws {
            counts[sample_noise_index(11, &mut rng) - 1] += 1;
        }
        // each cell ~ Binomial(1e5, 0.1): mean 1e4, sigma = sqrt(1e5*0.1*0.9) ~ 94.9
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn noise_index_stream_reproducible() {
        let a: Vec<usize> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..50).map(|_| sample_noise_index(41, &mut rng)).collect()
        };
        let b: Vec<usize> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..50).map(|_| sample_noise_index(41, &mut rng)).collect()
        };
        assert_eq!(a, b);
    }
}
