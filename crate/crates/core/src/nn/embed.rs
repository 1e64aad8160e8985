//! Fourier features of the log noise level.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::tensor::Real;

/// 128-dimensional embedding: `[sin(2*pi*f_i*log(sigma)), cos(...)]` over 64
/// fixed frequencies drawn once from a seeded standard Gaussian. The
/// frequencies persist in checkpoints so embeddings replay exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEmbedding {
    pub freqs: Vec<f64>,
}

pub const NOISE_EMB_DIM: usize = 128;

impl NoiseEmbedding {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let freqs = (0..NOISE_EMB_DIM / 2).map(|_| rng.sample(StandardNormal)).collect();
        NoiseEmbedding { freqs }
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.len() != NOISE_EMB_DIM / 2 {
            return Err(Error::dim(format!(
                "noise embedding needs {} frequencies, got {}",
                NOISE_EMB_DIM / 2,
                freqs.len()
            )));
        }
        Ok(NoiseEmbedding { freqs })
    }

    pub fn dim(&self) -> usize {
        NOISE_EMB_DIM
    }

    /// Writes the embedding of `sigma` into `out` (length 128).
    pub fn embed_into<T: Real>(&self, sigma: f64, out: &mut [T]) -> Result<()> {
        if sigma <= 0.0 {
            return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
        }
        if out.len() != NOISE_EMB_DIM {
            return Err(Error::dim("noise embedding output length"));
        }
        let ls = sigma.ln();
        let half = self.freqs.len();
        for (i, f) in self.freqs.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * f * ls;
            out[i] = T::from_f64(phase.sin());
            out[half + i] = T::from_f64(phase.cos());
        }
        Ok(())
    }

    pub fn embed<T: Real>(&self, sigma: f64) -> Result<Vec<T>> {
        let mut out = vec![T::ZERO; NOISE_EMB_DIM];
        self.embed_into(sigma, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_dim_is_128() {
        let emb = NoiseEmbedding::from_seed(3);
        for sigma in [0.002, 0.5, 80.0] {
            assert_eq!(emb.embed::<f32>(sigma).unwrap().len(), 128);
        }
    }

    #[test]
    fn sigma_one_gives_zero_sines_unit_cosines() {
        let emb = NoiseEmbedding::from_seed(5);
        let v: Vec<f64> = emb.embed(1.0).unwrap();
        for &s in &v[..64] {
            assert!(s.abs() < 1e-12);
        }
        for &c in &v[64..] {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_embedding() {
        let a = NoiseEmbedding::from_seed(11);
        let b = NoiseEmbedding::from_seed(11);
        assert_eq!(a.embed::<f32>(0.37).unwrap(), b.embed::<f32>(0.37).unwrap());
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let emb = NoiseEmbedding::from_seed(0);
        assert!(emb.embed::<f32>(0.0).is_err());
        assert!(emb.embed::<f32>(-1.0).is_err());
    }
}
