//! The two learned models: a dual-head keypose predictor (consistency-model
//! keypose head plus binary mode head over a shared observation encoder) and
//! a keypose-conditioned trajectory generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cm::{CmConfig, ConsistencyModel};
use crate::dataset::{KeyposeSample, NormStats, TrajectorySample};
use crate::demo::Observation;
use crate::error::{Error, Result};
use crate::nn::{
    checkpoint, AdamW, Mlp, MlpSpec, OptimizerConfig, Real, Tensor,
};

/// Stable seed derivation for independent rng streams.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in base.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub cm: CmConfig,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Backbone widths of the consistency heads.
    pub hidden_dims: Vec<usize>,
    /// Observation encoder: obs -> encoder_hidden -> obs_latent.
    pub encoder_hidden: usize,
    pub obs_latent: usize,
    /// Mode-head loss weight.
    pub beta: f64,
    pub seed: u64,
    /// Every n-th sample is held out for evaluation.
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cm: CmConfig::default(),
            batch_size: 64,
            base_lr: 1e-4,
            weight_decay: 1e-6,
            hidden_dims: vec![256, 256, 256],
            encoder_hidden: 128,
            obs_latent: 64,
            beta: 1.0,
            seed: 0,
            holdout_every: 20,
        }
    }
}

impl TrainConfig {
    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: self.base_lr,
            weight_decay: self.weight_decay,
            total_steps: self.cm.total_iters,
            ..Default::default()
        }
    }

    fn encoder_spec(&self, obs_dim: usize) -> MlpSpec {
        MlpSpec::new(obs_dim, vec![self.encoder_hidden], self.obs_latent)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    pub mode_loss: f64,
    pub lr: f64,
    pub n_levels: usize,
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> Result<Tensor<f32>> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut t = Tensor::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::dim("ragged rows"));
        }
        for (j, v) in r.iter().enumerate() {
            t.row_mut(i)[j] = *v as f32;
        }
    }
    Ok(t)
}

fn gather_rows<T: Real>(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(idx.len(), t.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(t.row(i));
    }
    out
}

/// sigmoid + numerically stable BCE on logits.
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn bce_with_logit(z: f64, label: f64) -> f64 {
    z.max(0.0) - z * label + (1.0 + (-z.abs()).exp()).ln()
}

// ---------------------------------------------------------------------------
// Keypose predictor
// ---------------------------------------------------------------------------

pub struct KeyposePredictor {
    pub encoder: Mlp<f32>,
    pub target_encoder: Mlp<f32>,
    pub cm: ConsistencyModel<f32>,
    pub mode_head: Mlp<f32>,
    pub stats: NormStats,
    pub beta: f64,
    pub q_dim: usize,
    pub obs_dim: usize,
    pub obs_latent: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictorEval {
    pub mode_accuracy: f64,
    pub keypose_rmse: f64,
    /// Fraction of held-out states whose sampled keypose lands within the
    /// attainment tolerance of the labelled one.
    pub attain_rate: f64,
}

/// Normalized matrices for predictor training.
struct KeyposeMatrices {
    obs: Tensor<f32>,
    k_prev: Tensor<f32>,
    k_next: Tensor<f32>,
    modes: Vec<f32>,
}

fn normalize_keypose_samples(
    samples: &[KeyposeSample],
    stats: &NormStats,
) -> Result<KeyposeMatrices> {
    let obs_rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| stats.normalize_obs(&s.obs))
        .collect::<Result<_>>()?;
    let kp_rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| stats.keypose.normalize(&s.k_prev))
        .collect::<Result<_>>()?;
    let kn_rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| stats.keypose.normalize(&s.k_next))
        .collect::<Result<_>>()?;
    Ok(KeyposeMatrices {
        obs: rows_to_tensor(&obs_rows)?,
        k_prev: rows_to_tensor(&kp_rows)?,
        k_next: rows_to_tensor(&kn_rows)?,
        modes: samples.iter().map(|s| if s.m_next { 1.0 } else { 0.0 }).collect(),
    })
}

pub fn train_keypose_predictor(
    samples: &[KeyposeSample],
    stats: &NormStats,
    cfg: &TrainConfig,
) -> Result<(KeyposePredictor, Vec<MetricRow>)> {
    if samples.is_empty() {
        return Err(Error::validation("empty keypose dataset"));
    }
    let q_dim = samples[0].k_next.len();
    let obs_dim = samples[0].obs.len();
    let mats = normalize_keypose_samples(samples, stats)?;

    let holdout: Vec<usize> = (0..samples.len())
        .filter(|i| cfg.holdout_every > 0 && i % cfg.holdout_every == cfg.holdout_every - 1)
        .collect();
    let train_idx: Vec<usize> = (0..samples.len())
        .filter(|i| !(cfg.holdout_every > 0 && i % cfg.holdout_every == cfg.holdout_every - 1))
        .collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "predictor-init"));
    let cond_dim = cfg.obs_latent + q_dim;
    let encoder = Mlp::init(cfg.encoder_spec(obs_dim), &mut init_rng, false)?;
    let cm = ConsistencyModel::new(
        cfg.cm.clone(),
        q_dim,
        cond_dim,
        cfg.hidden_dims.clone(),
        &mut init_rng,
        derive_seed(cfg.seed, "predictor-emb"),
    )?;
    let mode_head = Mlp::init(
        MlpSpec::new(cond_dim, vec![cfg.encoder_hidden], 1),
        &mut init_rng,
        false,
    )?;
    let mut model = KeyposePredictor {
        target_encoder: encoder.clone(),
        encoder,
        cm,
        mode_head,
        stats: stats.clone(),
        beta: cfg.beta,
        q_dim,
        obs_dim,
        obs_latent: cfg.obs_latent,
    };

    let mut opt_enc = AdamW::new(cfg.optimizer(), model.encoder.param_count());
    let mut opt_cm = AdamW::new(cfg.optimizer(), model.cm.backbone.param_count());
    let mut opt_mode = AdamW::new(cfg.optimizer(), model.mode_head.param_count());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "predictor-batch"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "predictor-noise"));

    let mut metrics = Vec::new();
    let total = cfg.cm.total_iters;
    for k in 0..total {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| train_idx[batch_rng.gen_range(0..train_idx.len())])
            .collect();
        let obs_b = gather_rows(&mats.obs, &idx);
        let kp_b = gather_rows(&mats.k_prev, &idx);
        let kn_b = gather_rows(&mats.k_next, &idx);

        let (enc_out, enc_cache) = model.encoder.forward_cached(&obs_b)?;
        let enc_tgt = model.target_encoder.forward(&obs_b)?;
        let cond = crate::nn::tensor::hcat(&[&enc_out, &kp_b])?;
        let cond_tgt = crate::nn::tensor::hcat(&[&enc_tgt, &kp_b])?;

        let ct = model.cm.ct_loss(&kn_b, &cond, Some(&cond_tgt), k, &mut noise_rng)?;

        // mode head on the shared conditioning features
        let (logits, mode_cache) = model.mode_head.forward_cached(&cond)?;
        let mut d_logits = Tensor::zeros(logits.rows, 1);
        let mut mode_loss = 0.0;
        for r in 0..logits.rows {
            let z = logits.row(r)[0] as f64;
            let label = mats.modes[idx[r]] as f64;
            mode_loss += bce_with_logit(z, label);
            d_logits.row_mut(r)[0] =
                ((sigmoid(z) - label) * model.beta / logits.rows as f64) as f32;
        }
        mode_loss /= logits.rows as f64;
        let mode_grads = model.mode_head.backward(&mode_cache, &d_logits)?;

        // encoder receives gradient from both heads
        let mut d_enc = crate::nn::tensor::col_slice(&ct.d_cond, 0, cfg.obs_latent);
        let d_enc_mode = crate::nn::tensor::col_slice(&mode_grads.input, 0, cfg.obs_latent);
        for (a, b) in d_enc.data.iter_mut().zip(&d_enc_mode.data) {
            *a += *b;
        }
        let enc_grads = model.encoder.backward(&enc_cache, &d_enc)?;

        let mut p = model.encoder.params_flat();
        opt_enc.update(&mut p, &Mlp::grads_flat(&enc_grads))?;
        model.encoder.load_flat(&p)?;
        let mut p = model.cm.backbone.params_flat();
        let lr = opt_cm.update(&mut p, &Mlp::grads_flat(&ct.grads))?;
        model.cm.backbone.load_flat(&p)?;
        let mut p = model.mode_head.params_flat();
        opt_mode.update(&mut p, &Mlp::grads_flat(&mode_grads))?;
        model.mode_head.load_flat(&p)?;

        model.cm.sync_target()?;
        let online = model.encoder.params_flat();
        let mut tgt = model.target_encoder.params_flat();
        crate::nn::ema_update(&mut tgt, &online, cfg.cm.mu)?;
        model.target_encoder.load_flat(&tgt)?;

        if k % 100 == 0 || k + 1 == total {
            metrics.push(MetricRow {
                step: k,
                loss: ct.loss,
                mode_loss,
                lr,
                n_levels: ct.n_levels,
            });
        }
    }
    let _ = holdout;
    Ok((model, metrics))
}

impl KeyposePredictor {
    /// Conditioning features for one (obs, k_prev) pair, normalized.
    fn cond_row(&self, obs: &Observation, k_cur: &[f64]) -> Result<Tensor<f32>> {
        let obs_n = self.stats.normalize_obs(&obs.features())?;
        let k_n = self.stats.keypose.normalize(k_cur)?;
        let obs_t = rows_to_tensor(&[obs_n])?;
        let enc = self.encoder.forward(&obs_t)?;
        let k_t = rows_to_tensor(&[k_n])?;
        crate::nn::tensor::hcat(&[&enc, &k_t])
    }

    /// One-step keypose sample plus the mode decision (strictly-greater
    /// threshold: a zero logit resolves to non-coordination).
    pub fn predict(
        &self,
        obs: &Observation,
        k_cur: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, bool)> {
        let cond = self.cond_row(obs, k_cur)?;
        let sample = self.cm.sample(&cond, rng)?;
        let k_next = self
            .stats
            .keypose
            .denormalize(&sample.row(0).iter().map(|v| *v as f64).collect::<Vec<f64>>())?;
        let logit = self.mode_head.forward(&cond)?.row(0)[0] as f64;
        Ok((k_next, sigmoid(logit) > 0.5))
    }

    /// Held-out evaluation: mode accuracy, keypose RMSE, and the fraction of
    /// predictions within `attain_tol` (Euclidean over the full q vector).
    pub fn evaluate(
        &self,
        samples: &[KeyposeSample],
        attain_tol: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<PredictorEval> {
        if samples.is_empty() {
            return Err(Error::validation("empty evaluation set"));
        }
        let mut correct = 0usize;
        let mut se = 0.0;
        let mut n_dims = 0usize;
        let mut attained = 0usize;
        for s in samples {
            let obs = Observation {
                proprio: s.obs[..self.stats.proprio.dim()].to_vec(),
                aux: s.obs[self.stats.proprio.dim()..].to_vec(),
            };
            let (k_hat, m_hat) = self.predict(&obs, &s.k_prev, rng)?;
            if m_hat == s.m_next {
                correct += 1;
            }
            let mut d2 = 0.0;
            for (a, b) in k_hat.iter().zip(&s.k_next) {
                se += (a - b) * (a - b);
                d2 += (a - b) * (a - b);
                n_dims += 1;
            }
            if d2.sqrt() < attain_tol {
                attained += 1;
            }
        }
        Ok(PredictorEval {
            mode_accuracy: correct as f64 / samples.len() as f64,
            keypose_rmse: (se / n_dims as f64).sqrt(),
            attain_rate: attained as f64 / samples.len() as f64,
        })
    }

    pub fn save(&self, dir: &Path, config_echo: serde_json::Value) -> Result<()> {
        let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
        push_mlp_tensors(&mut tensors, "encoder", &self.encoder);
        push_mlp_tensors(&mut tensors, "backbone", &self.cm.backbone);
        push_mlp_tensors(&mut tensors, "mode_head", &self.mode_head);
        let refs: Vec<(&str, &Tensor<f32>)> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let extra = serde_json::json!({
            "q_dim": self.q_dim,
            "obs_dim": self.obs_dim,
            "obs_latent": self.obs_latent,
            "beta": self.beta,
            "cm": self.cm.cfg,
            "emb_seed": self.cm.emb_seed,
            "noise_freqs": self.cm.noise_emb.freqs,
            "norm_stats": self.stats,
            "encoder_spec": self.encoder.spec,
            "backbone_spec": self.cm.backbone.spec,
            "mode_spec": self.mode_head.spec,
            "config": config_echo,
        });
        checkpoint::save(dir, "keypose_predictor", &refs, extra)
    }

    pub fn load(dir: &Path) -> Result<KeyposePredictor> {
        let ck = checkpoint::load(dir)?;
        if ck.manifest.kind != "keypose_predictor" {
            return Err(Error::Checkpoint(format!(
                "expected keypose_predictor checkpoint, found {}",
                ck.manifest.kind
            )));
        }
        let extra = &ck.manifest.extra;
        let q_dim = extra["q_dim"].as_u64().unwrap_or(0) as usize;
        let obs_dim = extra["obs_dim"].as_u64().unwrap_or(0) as usize;
        let obs_latent = extra["obs_latent"].as_u64().unwrap_or(0) as usize;
        let beta = extra["beta"].as_f64().unwrap_or(1.0);
        let cm_cfg: CmConfig = serde_json::from_value(extra["cm"].clone())?;
        let stats: NormStats = serde_json::from_value(extra["norm_stats"].clone())?;
        let enc_spec: MlpSpec = serde_json::from_value(extra["encoder_spec"].clone())?;
        let bb_spec: MlpSpec = serde_json::from_value(extra["backbone_spec"].clone())?;
        let mode_spec: MlpSpec = serde_json::from_value(extra["mode_spec"].clone())?;
        let emb_seed = extra["emb_seed"].as_u64().unwrap_or(0);

        let encoder = load_mlp(&ck, "encoder", enc_spec)?;
        let backbone = load_mlp(&ck, "backbone", bb_spec.clone())?;
        let mode_head = load_mlp(&ck, "mode_head", mode_spec)?;
        let freqs: Vec<f64> = serde_json::from_value(extra["noise_freqs"].clone())?;
        let mut cm = ConsistencyModel::new(
            cm_cfg,
            q_dim,
            bb_spec.input_dim - q_dim - crate::nn::NOISE_EMB_DIM,
            bb_spec.hidden_dims.clone(),
            &mut ChaCha8Rng::seed_from_u64(0),
            emb_seed,
        )?;
        cm.backbone = backbone.clone();
        cm.target_backbone = backbone;
        cm.noise_emb = crate::nn::NoiseEmbedding::from_freqs(freqs)?;
        Ok(KeyposePredictor {
            target_encoder: encoder.clone(),
            encoder,
            cm,
            mode_head,
            stats,
            beta,
            q_dim,
            obs_dim,
            obs_latent,
        })
    }
}

fn push_mlp_tensors(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, mlp: &Mlp<f32>) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.w"), layer.w.clone()));
        out.push((
            format!("{prefix}.{i}.b"),
            Tensor::from_vec(1, layer.b.len(), layer.b.clone()).unwrap(),
        ));
    }
}

fn load_mlp(ck: &checkpoint::Checkpoint, prefix: &str, spec: MlpSpec) -> Result<Mlp<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mlp = Mlp::init(spec, &mut rng, false)?;
    for (i, layer) in mlp.layers.iter_mut().enumerate() {
        let w = ck.tensor(&format!("{prefix}.{i}.w"))?;
        if w.rows != layer.w.rows || w.cols != layer.w.cols {
            return Err(Error::Checkpoint(format!("tensor {prefix}.{i}.w shape mismatch")));
        }
        layer.w = w.clone();
        layer.b = ck.tensor(&format!("{prefix}.{i}.b"))?.data.clone();
    }
    Ok(mlp)
}

// ---------------------------------------------------------------------------
// Trajectory generator
// ---------------------------------------------------------------------------

pub struct TrajectoryGenerator {
    pub encoder: Mlp<f32>,
    pub target_encoder: Mlp<f32>,
    pub cm: ConsistencyModel<f32>,
    pub stats: NormStats,
    pub h_o: usize,
    pub h_pred: usize,
    pub q_dim: usize,
    pub obs_dim: usize,
    pub obs_latent: usize,
    /// false = the keypose-free ablation: the conditioning keypose slot is
    /// zeroed (same shape, no information).
    pub use_keypose: bool,
}

struct TrajectoryMatrices {
    /// Stacked histories: row r*h_o + h is sample r's h-th observation.
    obs_stacked: Tensor<f32>,
    k_next: Tensor<f32>,
    chunks: Tensor<f32>,
}

fn normalize_trajectory_samples(
    samples: &[TrajectorySample],
    stats: &NormStats,
    h_o: usize,
    h_pred: usize,
    use_keypose: bool,
) -> Result<TrajectoryMatrices> {
    let mut obs_rows = Vec::with_capacity(samples.len() * h_o);
    let mut k_rows = Vec::with_capacity(samples.len());
    let mut chunk_rows = Vec::with_capacity(samples.len());
    for s in samples {
        if s.obs_hist.len() != h_o || s.actions.len() != h_pred {
            return Err(Error::dim("sample horizons do not match configuration"));
        }
        for o in &s.obs_hist {
            obs_rows.push(stats.normalize_obs(o)?);
        }
        if use_keypose {
            k_rows.push(stats.keypose.normalize(&s.k_next)?);
        } else {
            k_rows.push(vec![0.0; s.k_next.len()]);
        }
        let mut chunk = Vec::with_capacity(h_pred * s.actions[0].len());
        for a in &s.actions {
            chunk.extend(stats.action.normalize(a)?);
        }
        chunk_rows.push(chunk);
    }
    Ok(TrajectoryMatrices {
        obs_stacked: rows_to_tensor(&obs_rows)?,
        k_next: rows_to_tensor(&k_rows)?,
        chunks: rows_to_tensor(&chunk_rows)?,
    })
}

/// Reassembles per-history-slot encodings into one row per sample.
fn fold_history(enc: &Tensor<f32>, h_o: usize) -> Tensor<f32> {
    let n = enc.rows / h_o;
    let mut out = Tensor::zeros(n, h_o * enc.cols);
    for r in 0..n {
        for h in 0..h_o {
            let src = enc.row(r * h_o + h);
            out.row_mut(r)[h * enc.cols..(h + 1) * enc.cols].copy_from_slice(src);
        }
    }
    out
}

/// Spreads a folded gradient back onto the stacked rows.
fn unfold_history(d: &Tensor<f32>, h_o: usize, latent: usize) -> Tensor<f32> {
    let n = d.rows;
    let mut out = Tensor::zeros(n * h_o, latent);
    for r in 0..n {
        for h in 0..h_o {
            out.row_mut(r * h_o + h)
                .copy_from_slice(&d.row(r)[h * latent..(h + 1) * latent]);
        }
    }
    out
}

pub fn train_trajectory_generator(
    samples: &[TrajectorySample],
    stats: &NormStats,
    cfg: &TrainConfig,
    h_o: usize,
    h_pred: usize,
    use_keypose: bool,
) -> Result<(TrajectoryGenerator, Vec<MetricRow>)> {
    if samples.is_empty() {
        return Err(Error::validation("empty trajectory dataset"));
    }
    let q_dim = samples[0].k_next.len();
    let obs_dim = samples[0].obs_hist[0].len();
    let action_dim = samples[0].actions[0].len();
    let chunk_dim = h_pred * action_dim;
    let mats = normalize_trajectory_samples(samples, stats, h_o, h_pred, use_keypose)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "generator-init"));
    let cond_dim = h_o * cfg.obs_latent + q_dim;
    let encoder = Mlp::init(cfg.encoder_spec(obs_dim), &mut init_rng, false)?;
    let cm = ConsistencyModel::new(
        cfg.cm.clone(),
        chunk_dim,
        cond_dim,
        cfg.hidden_dims.clone(),
        &mut init_rng,
        derive_seed(cfg.seed, "generator-emb"),
    )?;
    let mut model = TrajectoryGenerator {
        target_encoder: encoder.clone(),
        encoder,
        cm,
        stats: stats.clone(),
        h_o,
        h_pred,
        q_dim,
        obs_dim,
        obs_latent: cfg.obs_latent,
        use_keypose,
    };

    let mut opt_enc = AdamW::new(cfg.optimizer(), model.encoder.param_count());
    let mut opt_cm = AdamW::new(cfg.optimizer(), model.cm.backbone.param_count());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "generator-batch"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "generator-noise"));

    let n = samples.len();
    let mut metrics = Vec::new();
    let total = cfg.cm.total_iters;
    for k in 0..total {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.gen_range(0..n)).collect();
        let stacked_idx: Vec<usize> = idx
            .iter()
            .flat_map(|&i| (0..h_o).map(move |h| i * h_o + h))
            .collect();
        let obs_b = gather_rows(&mats.obs_stacked, &stacked_idx);
        let k_b = gather_rows(&mats.k_next, &idx);
        let x_b = gather_rows(&mats.chunks, &idx);

        let (enc_out, enc_cache) = model.encoder.forward_cached(&obs_b)?;
        let enc_tgt = model.target_encoder.forward(&obs_b)?;
        let folded = fold_history(&enc_out, h_o);
        let folded_tgt = fold_history(&enc_tgt, h_o);
        let cond = crate::nn::tensor::hcat(&[&folded, &k_b])?;
        let cond_tgt = crate::nn::tensor::hcat(&[&folded_tgt, &k_b])?;

        let ct = model.cm.ct_loss(&x_b, &cond, Some(&cond_tgt), k, &mut noise_rng)?;

        let d_folded = crate::nn::tensor::col_slice(&ct.d_cond, 0, h_o * cfg.obs_latent);
        let d_enc = unfold_history(&d_folded, h_o, cfg.obs_latent);
        let enc_grads = model.encoder.backward(&enc_cache, &d_enc)?;

        let mut p = model.encoder.params_flat();
        opt_enc.update(&mut p, &Mlp::grads_flat(&enc_grads))?;
        model.encoder.load_flat(&p)?;
        let mut p = model.cm.backbone.params_flat();
        let lr = opt_cm.update(&mut p, &Mlp::grads_flat(&ct.grads))?;
        model.cm.backbone.load_flat(&p)?;

        model.cm.sync_target()?;
        let online = model.encoder.params_flat();
        let mut tgt = model.target_encoder.params_flat();
        crate::nn::ema_update(&mut tgt, &online, cfg.cm.mu)?;
        model.target_encoder.load_flat(&tgt)?;

        if k % 100 == 0 || k + 1 == total {
            metrics.push(MetricRow { step: k, loss: ct.loss, mode_loss: 0.0, lr, n_levels: ct.n_levels });
        }
    }
    Ok((model, metrics))
}

impl TrajectoryGenerator {
    fn cond_row(&self, obs_hist: &[Observation], k_next: &[f64]) -> Result<Tensor<f32>> {
        if obs_hist.len() != self.h_o {
            return Err(Error::dim(format!(
                "history length {} != H_o {}",
                obs_hist.len(),
                self.h_o
            )));
        }
        let obs_rows: Vec<Vec<f64>> = obs_hist
            .iter()
            .map(|o| self.stats.normalize_obs(&o.features()))
            .collect::<Result<_>>()?;
        let obs_t = rows_to_tensor(&obs_rows)?;
        let enc = self.encoder.forward(&obs_t)?;
        let folded = fold_history(&enc, self.h_o);
        let k_row = if self.use_keypose {
            self.stats.keypose.normalize(k_next)?
        } else {
            vec![0.0; k_next.len()]
        };
        let k_t = rows_to_tensor(&[k_row])?;
        crate::nn::tensor::hcat(&[&folded, &k_t])
    }

    /// One-step chunk generation: H_pred actions, denormalized.
    pub fn generate(
        &self,
        obs_hist: &[Observation],
        k_next: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let cond = self.cond_row(obs_hist, k_next)?;
        let sample = self.cm.sample(&cond, rng)?;
        let flat = sample.row(0);
        let action_dim = flat.len() / self.h_pred;
        (0..self.h_pred)
            .map(|i| {
                let row: Vec<f64> = flat[i * action_dim..(i + 1) * action_dim]
                    .iter()
                    .map(|v| *v as f64)
                    .collect();
                self.stats.action.denormalize(&row)
            })
            .collect()
    }

    /// Replay RMSE: chunks generated under ground-truth conditioning versus
    /// the demonstrated actions, in raw action units.
    pub fn replay_rmse(
        &self,
        samples: &[TrajectorySample],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut se = 0.0;
        let mut n = 0usize;
        for s in samples {
            let obs_hist: Vec<Observation> = s
                .obs_hist
                .iter()
                .map(|o| Observation {
                    proprio: o[..self.stats.proprio.dim()].to_vec(),
                    aux: o[self.stats.proprio.dim()..].to_vec(),
                })
                .collect();
            let chunk = self.generate(&obs_hist, &s.k_next, rng)?;
            for (a_hat, a) in chunk.iter().zip(&s.actions) {
                for (x, y) in a_hat.iter().zip(a) {
                    se += (x - y) * (x - y);
                    n += 1;
                }
            }
        }
        Ok((se / n as f64).sqrt())
    }

    pub fn save(&self, dir: &Path, config_echo: serde_json::Value) -> Result<()> {
        let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
        push_mlp_tensors(&mut tensors, "encoder", &self.encoder);
        push_mlp_tensors(&mut tensors, "backbone", &self.cm.backbone);
        let refs: Vec<(&str, &Tensor<f32>)> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let extra = serde_json::json!({
            "q_dim": self.q_dim,
            "obs_dim": self.obs_dim,
            "obs_latent": self.obs_latent,
            "h_o": self.h_o,
            "h_pred": self.h_pred,
            "use_keypose": self.use_keypose,
            "cm": self.cm.cfg,
            "emb_seed": self.cm.emb_seed,
            "noise_freqs": self.cm.noise_emb.freqs,
            "norm_stats": self.stats,
            "encoder_spec": self.encoder.spec,
            "backbone_spec": self.cm.backbone.spec,
            "config": config_echo,
        });
        checkpoint::save(dir, "trajectory_generator", &refs, extra)
    }

    pub fn load(dir: &Path) -> Result<TrajectoryGenerator> {
        let ck = checkpoint::load(dir)?;
        if ck.manifest.kind != "trajectory_generator" {
            return Err(Error::Checkpoint(format!(
                "expected trajectory_generator checkpoint, found {}",
                ck.manifest.kind
            )));
        }
        let extra = &ck.manifest.extra;
        let q_dim = extra["q_dim"].as_u64().unwrap_or(0) as usize;
        let obs_dim = extra["obs_dim"].as_u64().unwrap_or(0) as usize;
        let obs_latent = extra["obs_latent"].as_u64().unwrap_or(0) as usize;
        let h_o = extra["h_o"].as_u64().unwrap_or(0) as usize;
        let h_pred = extra["h_pred"].as_u64().unwrap_or(0) as usize;
        let use_keypose = extra["use_keypose"].as_bool().unwrap_or(true);
        let cm_cfg: CmConfig = serde_json::from_value(extra["cm"].clone())?;
        let stats: NormStats = serde_json::from_value(extra["norm_stats"].clone())?;
        let enc_spec: MlpSpec = serde_json::from_value(extra["encoder_spec"].clone())?;
        let bb_spec: MlpSpec = serde_json::from_value(extra["backbone_spec"].clone())?;
        let emb_seed = extra["emb_seed"].as_u64().unwrap_or(0);

        let encoder = load_mlp(&ck, "encoder", enc_spec)?;
        let backbone = load_mlp(&ck, "backbone", bb_spec.clone())?;
        let freqs: Vec<f64> = serde_json::from_value(extra["noise_freqs"].clone())?;
        let chunk_dim = bb_spec.output_dim;
        let mut cm = ConsistencyModel::new(
            cm_cfg,
            chunk_dim,
            bb_spec.input_dim - chunk_dim - crate::nn::NOISE_EMB_DIM,
            bb_spec.hidden_dims.clone(),
            &mut ChaCha8Rng::seed_from_u64(0),
            emb_seed,
        )?;
        cm.backbone = backbone.clone();
        cm.target_backbone = backbone;
        cm.noise_emb = crate::nn::NoiseEmbedding::from_freqs(freqs)?;
        Ok(TrajectoryGenerator {
            target_encoder: encoder.clone(),
            encoder,
            cm,
            stats,
            h_o,
            h_pred,
            q_dim,
            obs_dim,
            obs_latent,
            use_keypose,
        })
    }
}
