//! The consistency model: skip/out parameterization around an MLP backbone,
//! the consistency-training objective, and one-step sampling.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cm::schedule::{curriculum_n, karras_sigmas, sample_noise_index, CmConfig};
use crate::error::{Error, Result};
use crate::nn::{ema_update, Mlp, MlpGrads, MlpSpec, NoiseEmbedding, Real, Tensor, NOISE_EMB_DIM};

/// c_skip(sigma) = sigma_data^2 / ((sigma - eps)^2 + sigma_data^2)
pub fn c_skip(cfg: &CmConfig, sigma: f64) -> f64 {
    let sd2 = cfg.sigma_data * cfg.sigma_data;
    sd2 / ((sigma - cfg.eps).powi(2) + sd2)
}

/// c_out(sigma) = sigma_data * (sigma - eps) / sqrt(sigma_data^2 + sigma^2)
pub fn c_out(cfg: &CmConfig, sigma: f64) -> f64 {
    cfg.sigma_data * (sigma - cfg.eps) / (cfg.sigma_data * cfg.sigma_data + sigma * sigma).sqrt()
}

/// Pseudo-Huber distance `sqrt(||u - v||^2 + c^2) - c` between two rows.
pub fn pseudo_huber(u: &[f64], v: &[f64], c: f64) -> f64 {
    let s: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (s + c * c).sqrt() - c
}

/// A denoiser over `target_dim`-dimensional normalized data, conditioned by
/// concatenation on a `cond_dim` feature vector.
#[derive(Debug)]
pub struct ConsistencyModel<T: Real> {
    pub cfg: CmConfig,
    pub target_dim: usize,
    pub cond_dim: usize,
    pub backbone: Mlp<T>,
    pub target_backbone: Mlp<T>,
    pub noise_emb: NoiseEmbedding,
    pub emb_seed: u64,
    /// Backbone row-evaluations made by the sampling path.
    forward_evals: AtomicU64,
    /// Rows sampled via one-step inference.
    samples_drawn: AtomicU64,
}

impl<T: Real> Clone for ConsistencyModel<T> {
    fn clone(&self) -> Self {
        ConsistencyModel {
            cfg: self.cfg.clone(),
            target_dim: self.target_dim,
            cond_dim: self.cond_dim,
            backbone: self.backbone.clone(),
            target_backbone: self.target_backbone.clone(),
            noise_emb: self.noise_emb.clone(),
            emb_seed: self.emb_seed,
            forward_evals: AtomicU64::new(self.forward_evals.load(Ordering::Relaxed)),
            samples_drawn: AtomicU64::new(self.samples_drawn.load(Ordering::Relaxed)),
        }
    }
}

/// Per-batch output of the consistency-training objective.
pub struct CtLossOutput<T: Real> {
    pub loss: f64,
    /// Gradients for the online backbone.
    pub grads: MlpGrads<T>,
    /// dL/d(cond) for chaining into an observation encoder.
    pub d_cond: Tensor<T>,
    /// Discretization count used this iteration.
    pub n_levels: usize,
}

impl<T: Real> ConsistencyModel<T> {
    pub fn new(
        cfg: CmConfig,
        target_dim: usize,
        cond_dim: usize,
        hidden_dims: Vec<usize>,
        rng: &mut ChaCha8Rng,
        emb_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = MlpSpec::new(target_dim + NOISE_EMB_DIM + cond_dim, hidden_dims, target_dim);
        let backbone = Mlp::init(spec, rng, true)?;
        let target_backbone = backbone.clone();
        Ok(ConsistencyModel {
            cfg,
            target_dim,
            cond_dim,
            backbone,
            target_backbone,
            noise_emb: NoiseEmbedding::from_seed(emb_seed),
            emb_seed,
            forward_evals: AtomicU64::new(0),
            samples_drawn: AtomicU64::new(0),
        })
    }

    pub fn forward_evals(&self) -> u64 {
        self.forward_evals.load(Ordering::Relaxed)
    }

    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn.load(Ordering::Relaxed)
    }

    fn check_sigma(&self, sigma: f64) -> Result<()> {
        if sigma < self.cfg.eps || sigma > self.cfg.sigma_max {
            return Err(Error::validation(format!(
                "sigma {sigma} outside [{}, {}]",
                self.cfg.eps, self.cfg.sigma_max
            )));
        }
        Ok(())
    }

    /// Assembles the backbone input `[x | embed(sigma) | cond]`, one sigma
    /// per row.
    fn assemble_input(
        &self,
        x: &Tensor<T>,
        sigmas: &[f64],
        cond: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if x.cols != self.target_dim || cond.cols != self.cond_dim || x.rows != cond.rows {
            return Err(Error::dim(format!(
                "cm input shapes: x {}x{}, cond {}x{} (target_dim {}, cond_dim {})",
                x.rows, x.cols, cond.rows, cond.cols, self.target_dim, self.cond_dim
            )));
        }
        if sigmas.len() != x.rows {
            return Err(Error::dim("one sigma required per row"));
        }
        let width = self.target_dim + NOISE_EMB_DIM + self.cond_dim;
        let mut input = Tensor::zeros(x.rows, width);
        let mut emb = vec![T::ZERO; NOISE_EMB_DIM];
        for r in 0..x.rows {
            self.check_sigma(sigmas[r])?;
            self.noise_emb.embed_into(sigmas[r], &mut emb)?;
            let row = input.row_mut(r);
            row[..self.target_dim].copy_from_slice(x.row(r));
            row[self.target_dim..self.target_dim + NOISE_EMB_DIM].copy_from_slice(&emb);
            row[self.target_dim + NOISE_EMB_DIM..].copy_from_slice(cond.row(r));
        }
        Ok(input)
    }

    /// Applies the skip/out parameterization to raw backbone output.
    fn parameterize(&self, x: &Tensor<T>, sigmas: &[f64], raw: &Tensor<T>) -> Tensor<T> {
        let mut out = raw.clone();
        for r in 0..out.rows {
            let skip = T::from_f64(c_skip(&self.cfg, sigmas[r]));
            let scale = T::from_f64(c_out(&self.cfg, sigmas[r]));
            let xr = x.row(r);
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = skip.mul(xr[c]).add(scale.mul(*v));
            }
        }
        out
    }

    /// f(x, sigma | cond) for a batch, optionally through the target copy.
    /// This is the inference entry point and counts backbone evaluations.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        sigmas: &[f64],
        cond: &Tensor<T>,
        use_target: bool,
    ) -> Result<Tensor<T>> {
        let input = self.assemble_input(x, sigmas, cond)?;
        let net = if use_target { &self.target_backbone } else { &self.backbone };
        let raw = net.forward(&input)?;
        self.forward_evals.fetch_add(x.rows as u64, Ordering::Relaxed);
        Ok(self.parameterize(x, sigmas, &raw))
    }

    /// One-step generation: draw x ~ N(0, sigma_max^2 I) and evaluate
    /// f(x, sigma_max | cond) once per row.
    pub fn sample(&self, cond: &Tensor<T>, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        let mut x = Tensor::zeros(cond.rows, self.target_dim);
        for v in x.data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = T::from_f64(z * self.cfg.sigma_max);
        }
        let sigmas = vec![self.cfg.sigma_max; cond.rows];
        let out = self.forward(&x, &sigmas, cond, false)?;
        self.samples_drawn.fetch_add(cond.rows as u64, Ordering::Relaxed);
        Ok(out)
    }

    /// The consistency-training objective at iteration `k`.
    ///
    /// Per sample: draw a noise level n and one z, form the adjacent pair
    /// `x + sigma_{n+1} z` (online branch) and `x + sigma_n z` (target
    /// branch, no gradient), and penalize their output discrepancy with
    /// `lambda = 1 / (sigma_{n+1} - sigma_n)` times the Pseudo-Huber
    /// distance. `cond_target` supplies the target branch's conditioning
    /// when it comes from a target-parameter encoder; pass None to share
    /// `cond` as a constant.
    pub fn ct_loss(
        &self,
        x: &Tensor<T>,
        cond: &Tensor<T>,
        cond_target: Option<&Tensor<T>>,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<CtLossOutput<T>> {
        let batch = x.rows;
        if batch == 0 {
            return Err(Error::validation("empty batch"));
        }
        let n_levels = curriculum_n(k, &self.cfg)?;
        let sigmas = karras_sigmas(n_levels, &self.cfg)?;

        let mut sig_lo = vec![0.0; batch];
        let mut sig_hi = vec![0.0; batch];
        let mut x_lo = Tensor::zeros(batch, self.target_dim);
        let mut x_hi = Tensor::zeros(batch, self.target_dim);
        for r in 0..batch {
            let n = sample_noise_index(n_levels, rng);
            sig_lo[r] = sigmas[n - 1];
            sig_hi[r] = sigmas[n];
            let xr = x.row(r);
            for c in 0..self.target_dim {
                let z: f64 = rng.sample(StandardNormal);
                x_lo.row_mut(r)[c] = T::from_f64(xr[c].to_f64() + sig_lo[r] * z);
                x_hi.row_mut(r)[c] = T::from_f64(xr[c].to_f64() + sig_hi[r] * z);
            }
        }

        // online branch (with cache for backprop)
        let input_hi = self.assemble_input(&x_hi, &sig_hi, cond)?;
        let (raw_on, cache) = self.backbone.forward_cached(&input_hi)?;
        let f_on = self.parameterize(&x_hi, &sig_hi, &raw_on);

        // target branch, values only
        let cond_tg = cond_target.unwrap_or(cond);
        let input_lo = self.assemble_input(&x_lo, &sig_lo, cond_tg)?;
        let raw_tg = self.target_backbone.forward(&input_lo)?;
        let f_tg = self.parameterize(&x_lo, &sig_lo, &raw_tg);

        // Pseudo-Huber with the schedule weighting, mean over the batch
        let c = self.cfg.huber_c;
        let mut loss = 0.0;
        let mut d_raw = Tensor::zeros(batch, self.target_dim);
        for r in 0..batch {
            let u = f_on.row(r);
            let v = f_tg.row(r);
            let s: f64 = u
                .iter()
                .zip(v)
                .map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2))
                .sum();
            let root = (s + c * c).sqrt();
            let lambda = 1.0 / (sig_hi[r] - sig_lo[r]);
            loss += lambda * (root - c);
            // dL/df_on = lambda/B * delta / root, then through c_out to raw
            let co = c_out(&self.cfg, sig_hi[r]);
            let scale = lambda / (batch as f64) / root * co;
            for cidx in 0..self.target_dim {
                let delta = u[cidx].to_f64() - v[cidx].to_f64();
                d_raw.row_mut(r)[cidx] = T::from_f64(scale * delta);
            }
        }
        loss /= batch as f64;

        let grads = self.backbone.backward(&cache, &d_raw)?;
        let d_cond = crate::nn::tensor::col_slice(
            &grads.input,
            self.target_dim + NOISE_EMB_DIM,
            self.target_dim + NOISE_EMB_DIM + self.cond_dim,
        );
        Ok(CtLossOutput { loss, grads, d_cond, n_levels })
    }

    /// theta_minus <- mu * theta_minus + (1 - mu) * theta.
    pub fn sync_target(&mut self) -> Result<()> {
        let online = self.backbone.params_flat();
        let mut target = self.target_backbone.params_flat();
        ema_update(&mut target, &online, self.cfg.mu)?;
        self.target_backbone.load_flat(&target)
    }

    pub fn cast<U: Real>(&self) -> ConsistencyModel<U> {
        ConsistencyModel {
            cfg: self.cfg.clone(),
            target_dim: self.target_dim,
            cond_dim: self.cond_dim,
            backbone: self.backbone.cast(),
            target_backbone: self.target_backbone.cast(),
            noise_emb: self.noise_emb.clone(),
            emb_seed: self.emb_seed,
            forward_evals: AtomicU64::new(0),
            samples_drawn: AtomicU64::new(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_model(seed: u64) -> ConsistencyModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConsistencyModel::new(
            CmConfig { total_iters: 100, ..Default::default() },
            3,
            2,
            vec![8, 8],
            &mut rng,
            77,
        )
        .unwrap()
    }

    #[test]
    fn skip_out_coefficients_match_closed_forms() {
        let cfg = CmConfig::default();
        // at sigma = eps: identity
        assert_eq!(c_skip(&cfg, cfg.eps), 1.0);
        assert_eq!(c_out(&cfg, cfg.eps), 0.0);
        // sigma - eps = 0.5 with sigma_data = 0.5
        let sigma = 0.502;
        assert!((c_skip(&cfg, sigma) - 0.5).abs() < 1e-12);
        let expect = 0.5 * 0.5 / (0.25f64 + sigma * sigma).sqrt();
        assert!((c_out(&cfg, sigma) - expect).abs() < 1e-12);
        assert!((c_out(&cfg, sigma) - 0.35283).abs() < 1e-4);
        // sigma_max
        let cs = c_skip(&cfg, 80.0);
        assert!((cs - 0.25 / (79.998f64.powi(2) + 0.25)).abs() < 1e-12);
        assert!((cs - 3.9063e-5).abs() < 1e-8);
    }

    #[test]
    fn boundary_identity_at_eps() {
        let model = tiny_model(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = Tensor::from_vec(
                1,
                3,
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let cond = Tensor::from_vec(
                1,
                2,
                (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y = model.forward(&x, &[model.cfg.eps], &cond, false).unwrap();
            for (a, b) in y.data.iter().zip(&x.data) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn sigma_out_of_range_rejected() {
        let model = tiny_model(1);
        let x = Tensor::zeros(1, 3);
        let cond = Tensor::zeros(1, 2);
        assert!(model.forward(&x, &[0.001], &cond, false).is_err());
        assert!(model.forward(&x, &[81.0], &cond, false).is_err());
    }

    #[test]
    fn pseudo_huber_known_values() {
        assert_eq!(pseudo_huber(&[1.0, 2.0], &[1.0, 2.0], 0.0064), 0.0);
        let d = pseudo_huber(&[1.0, 0.0], &[0.0, 0.0], 0.0064);
        assert!((d - ((1.0f64 + 0.0064 * 0.0064).sqrt() - 0.0064)).abs() < 1e-15);
        assert!((d - 0.99362).abs() < 1e-4);
    }

    #[test]
    fn lambda_weighting_is_reciprocal_gap() {
        let lambda: f64 = 1.0 / (0.01 - 0.002);
        assert!((lambda - 125.0).abs() < 1e-12);
    }

    #[test]
    fn one_forward_eval_per_sample() {
        let model = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cond = Tensor::zeros(1, 2);
        for i in 1..=5u64 {
            model.sample(&cond, &mut rng).unwrap();
            assert_eq!(model.forward_evals(), i);
            assert_eq!(model.samples_drawn(), i);
        }
        let cond4 = Tensor::zeros(4, 2);
        model.sample(&cond4, &mut rng).unwrap();
        assert_eq!(model.forward_evals(), 9);
        assert_eq!(model.samples_drawn(), 9);
    }

    #[test]
    fn sampling_deterministic_under_fixed_seed() {
        let model = tiny_model(3);
        let cond = Tensor::from_vec(1, 2, vec![0.3, -0.4]).unwrap();
        let a = model.sample(&cond, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = model.sample(&cond, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn zero_distance_gives_zero_loss() {
        // with mu = 0 the target equals the online net; at sigma pairs where
        // both branches see the same input the distance is zero. Force that
        // by zeroing the data and picking a model whose backbone output is
        // zero (zero-init final layer) so f = c_skip * x = 0 on both branches
        // only when z = 0; instead check d(u, u) = 0 directly.
        assert_eq!(pseudo_huber(&[0.3, -0.2, 0.9], &[0.3, -0.2, 0.9], 0.0064), 0.0);
    }

    #[test]
    fn ct_loss_gradients_match_finite_differences() {
        let mut model = tiny_model(4);
        let mut data_rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_vec(
            4,
            3,
            (0..12).map(|_| data_rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let cond = Tensor::from_vec(
            4,
            2,
            (0..8).map(|_| data_rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        // perturb the target copy so the two branches genuinely differ
        let mut tparams = model.target_backbone.params_flat();
        let mut trng = ChaCha8Rng::seed_from_u64(99);
        for v in tparams.iter_mut() {
            *v += trng.gen_range(-0.05..0.05);
        }
        model.target_backbone.load_flat(&tparams).unwrap();

        let k = 10;
        let loss_at = |m: &ConsistencyModel<f64>| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            m.ct_loss(&x, &cond, None, k, &mut rng).unwrap().loss
        };

        let out = {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            model.ct_loss(&x, &cond, None, k, &mut rng).unwrap()
        };
        let analytic = Mlp::grads_flat(&out.grads);
        let mut flat = model.backbone.params_flat();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for i in (0..flat.len()).step_by(5) {
            let orig = flat[i];
            flat[i] = orig + h;
            model.backbone.load_flat(&flat).unwrap();
            let lp = loss_at(&model);
            flat[i] = orig - h;
            model.backbone.load_flat(&flat).unwrap();
            let lm = loss_at(&model);
            flat[i] = orig;
            model.backbone.load_flat(&flat).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            max_rel = max_rel.max((fd - analytic[i]).abs() / denom);
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");

        // cond gradient as well
        let mut max_rel_c = 0.0f64;
        for i in 0..cond.data.len() {
            let mut cp = cond.clone();
            cp.data[i] += h;
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let lp = model.ct_loss(&x, &cp, None, k, &mut rng).unwrap().loss;
            let mut cm_ = cond.clone();
            cm_.data[i] -= h;
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let lm = model.ct_loss(&x, &cm_, None, k, &mut rng).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(out.d_cond.data[i].abs()).max(1e-6);
            max_rel_c = max_rel_c.max((fd - out.d_cond.data[i]).abs() / denom);
        }
        // the cond also feeds the frozen target branch; since we pass the
        // same tensor to both, finite differences see the target-branch
        // contribution too unless cond_target is pinned. Pin it:
        let pinned = cond.clone();
        let mut max_rel_pinned = 0.0f64;
        let out2 = {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            model.ct_loss(&x, &cond, Some(&pinned), k, &mut rng).unwrap()
        };
        let analytic_c = &out2.d_cond;
        for i in 0..cond.data.len() {
            let mut cp = cond.clone();
            cp.data[i] += h;
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let lp = model.ct_loss(&cp_x(&x), &cp, Some(&pinned), k, &mut rng).unwrap().loss;
            let mut cm_ = cond.clone();
            cm_.data[i] -= h;
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let lm = model.ct_loss(&cp_x(&x), &cm_, Some(&pinned), k, &mut rng).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(analytic_c.data[i].abs()).max(1e-6);
            max_rel_pinned = max_rel_pinned.max((fd - analytic_c.data[i]).abs() / denom);
        }
        assert!(max_rel_pinned < 1e-6, "cond grad relative error {max_rel_pinned}");
        let _ = max_rel_c;

        fn cp_x(x: &Tensor<f64>) -> Tensor<f64> {
            x.clone()
        }
    }

    #[test]
    fn no_gradient_reaches_target_branch() {
        // the gradient structure only covers online params; verify the loss
        // is insensitive to target perturbations in the analytic output by
        // checking grads length == online param count
        let model = tiny_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let cond = Tensor::zeros(2, 2);
        let out = model.ct_loss(&x, &cond, None, 0, &mut rng).unwrap();
        assert_eq!(Mlp::grads_flat(&out.grads).len(), model.backbone.param_count());
    }

    #[test]
    fn lambda_distance_product_finite_positive_across_curriculum() {
        let cfg = CmConfig { total_iters: 1000, ..Default::default() };
        for k in [0, 250, 500, 750, 999] {
            let n = curriculum_n(k, &cfg).unwrap();
            let sig = karras_sigmas(n, &cfg).unwrap();
            for i in 1..n {
                let lambda = 1.0 / (sig[i] - sig[i - 1]);
                let d = pseudo_huber(&[1.0], &[0.5], cfg.huber_c);
                assert!(lambda.is_finite() && lambda > 0.0);
                assert!((lambda * d).is_finite() && lambda * d > 0.0);
            }
        }
    }

    #[test]
    fn sync_target_with_mu_zero_copies() {
        let mut model = tiny_model(7);
        // drift online params
        let mut p = model.backbone.params_flat();
        for v in p.iter_mut() {
            *v += 0.25;
        }
        model.backbone.load_flat(&p).unwrap();
        model.sync_target().unwrap();
        assert_eq!(model.target_backbone.params_flat(), model.backbone.params_flat());
    }

    #[test]
    fn ct_loss_overfits_single_sample() {
        use crate::nn::{AdamW, OptimizerConfig};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model: ConsistencyModel<f32> = ConsistencyModel::new(
            CmConfig { total_iters: 200, s0: 10, s1: 160, ..Default::default() },
            2,
            0,
            vec![32, 32],
            &mut rng,
            5,
        )
        .unwrap();
        let x = Tensor::from_vec(8, 2, vec![0.5f32, -0.25].repeat(8)).unwrap();
        let cond = Tensor::zeros(8, 0);
        let mut opt = AdamW::new(
            OptimizerConfig { base_lr: 3e-3, total_steps: 200, ..Default::default() },
            model.backbone.param_count(),
        );
        // hold the curriculum at k = 0: lambda scales with the
        // discretization, so losses are only comparable within one plateau
        let mut losses = Vec::new();
        for _ in 0..100 {
            let out = model.ct_loss(&x, &cond, None, 0, &mut rng).unwrap();
            let mut params = model.backbone.params_flat();
            opt.update(&mut params, &Mlp::grads_flat(&out.grads)).unwrap();
            model.backbone.load_flat(&params).unwrap();
            model.sync_target().unwrap();
            losses.push(out.loss);
        }
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[80..].iter().sum::<f64>() / 20.0;
        assert!(
            tail < head,
            "smoothed ct loss should decrease: head {head}, tail {tail}"
        );
    }
}
