//! Closed-loop deployment: chain the keypose predictor and trajectory
//! generator with mode-dependent attainment and chunked execution.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::{split_arms, ArmSide, Observation};
use crate::error::{Error, Result};
use crate::policy::{derive_seed, KeyposePredictor, TrajectoryGenerator};
use crate::sim::task::{check_stages, stagewise_rates, PlanarEnv, StageOutcome};
use crate::sim::world::{Holder, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Keypose predictor + keypose-conditioned generator with attainment-
    /// gated re-inference.
    Hierarchical,
    /// The ablation: no keypose conditioning, no attainment, fixed-cadence
    /// chunk execution.
    ChunkedOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DeployConfig {
    /// Keypose attainment tolerance (Euclidean, includes gripper dims).
    pub attain_tolerance: f64,
    /// Actions executed from each generated chunk.
    pub h_exec: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub policy_mode: PolicyMode,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig {
            attain_tolerance: 0.06,
            h_exec: 8,
            max_steps: 600,
            seed: 0,
            policy_mode: PolicyMode::Hierarchical,
        }
    }
}

impl DeployConfig {
    pub fn validate(&self, h_pred: usize) -> Result<()> {
        if !(self.attain_tolerance > 0.0) {
            return Err(Error::validation("attain_tolerance must be positive"));
        }
        if self.h_exec < 1 || self.h_exec > h_pred {
            return Err(Error::validation(format!(
                "need 1 <= h_exec <= h_pred, got h_exec {} h_pred {h_pred}",
                self.h_exec
            )));
        }
        Ok(())
    }
}

/// Mode-dependent attainment test.
///
/// Coordination (`mode = true`): the full bimanual command must lie within
/// `eps` of the keypose. Non-coordination: either arm's half suffices.
pub fn attained(action: &[f64], keypose: &[f64], mode: bool, eps: f64) -> Result<bool> {
    if action.len() != keypose.len() {
        return Err(Error::dim(format!(
            "attainment dim mismatch: action {} vs keypose {}",
            action.len(),
            keypose.len()
        )));
    }
    let (al, ar) = split_arms(action)?;
    let (kl, kr) = split_arms(keypose)?;
    let d = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    Ok(if mode {
        let full = (d(al, kl).powi(2) + d(ar, kr).powi(2)).sqrt();
        full < eps
    } else {
        d(al, kl) < eps || d(ar, kr) < eps
    })
}

/// Where target keyposes come from during deployment.
pub trait KeyposeSource: Sync {
    fn next_keypose(
        &self,
        obs: &Observation,
        k_cur: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, bool)>;
}

impl KeyposeSource for KeyposePredictor {
    fn next_keypose(
        &self,
        obs: &Observation,
        k_cur: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, bool)> {
        self.predict(obs, k_cur, rng)
    }
}

/// Replays a fixed keypose schedule (ground-truth injection).
pub struct OracleKeyposes {
    schedule: Vec<(Vec<f64>, bool)>,
    cursor: AtomicU64,
}

impl OracleKeyposes {
    pub fn new(schedule: Vec<(Vec<f64>, bool)>) -> Self {
        OracleKeyposes { schedule, cursor: AtomicU64::new(0) }
    }
}

impl KeyposeSource for OracleKeyposes {
    fn next_keypose(
        &self,
        _obs: &Observation,
        _k_cur: &[f64],
        _rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, bool)> {
        let at = self.cursor.fetch_add(1, Ordering::Relaxed) as usize;
        let idx = at.min(self.schedule.len().saturating_sub(1));
        let (k, m) = &self.schedule[idx];
        Ok((k.clone(), *m))
    }
}

pub trait ChunkSource: Sync {
    fn chunk(
        &self,
        obs_hist: &[Observation],
        k_next: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>>;
    fn h_o(&self) -> usize;
    fn q_dim(&self) -> usize;
}

impl ChunkSource for TrajectoryGenerator {
    fn chunk(
        &self,
        obs_hist: &[Observation],
        k_next: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        self.generate(obs_hist, k_next, rng)
    }

    fn h_o(&self) -> usize {
        self.h_o
    }

    fn q_dim(&self) -> usize {
        self.q_dim
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeyposeTransition {
    pub t: usize,
    pub keypose: Vec<f64>,
    pub mode: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutStep {
    pub t: usize,
    pub proprio: Vec<f64>,
    pub aux: Vec<f64>,
    pub action: Vec<f64>,
    /// Index into the transition log of the keypose being pursued.
    pub keypose_id: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub steps: Vec<RolloutStep>,
    pub transitions: Vec<KeyposeTransition>,
    pub outcome: StageOutcome,
    pub success: bool,
    pub predictor_calls: u64,
    pub generator_calls: u64,
    /// Seconds per generator inference.
    pub gen_latency_s: Vec<f64>,
    pub first_grasp_arm: Option<ArmSide>,
}

fn first_grasp_arm(states: &[WorldState]) -> Option<ArmSide> {
    for st in states {
        for obj in &st.objects {
            if let Holder::Arm(arm) = obj.holder {
                return Some(arm);
            }
        }
    }
    None
}

/// Runs one closed-loop episode.
///
/// The loop follows the deployment workflow: predict a target keypose once
/// at reset, generate chunks of `h_exec` actions, test attainment on every
/// commanded action, and on attainment adopt the keypose, re-predict, and
/// discard the pending chunk. Stops at task success or `max_steps`.
pub fn run_episode(
    env: &mut PlanarEnv,
    predictor: Option<&dyn KeyposeSource>,
    generator: &dyn ChunkSource,
    cfg: &DeployConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutRecord> {
    let hierarchical = cfg.policy_mode == PolicyMode::Hierarchical;
    if hierarchical && predictor.is_none() {
        return Err(Error::validation("hierarchical deployment needs a keypose source"));
    }
    let mut obs = env.reset(rng)?;
    let h_o = generator.h_o();
    let q_dim = generator.q_dim();
    let mut hist: VecDeque<Observation> = VecDeque::with_capacity(h_o);
    for _ in 0..h_o {
        hist.push_back(obs.clone());
    }

    let mut predictor_calls = 0u64;
    let mut generator_calls = 0u64;
    let mut gen_latency = Vec::new();
    let mut transitions: Vec<KeyposeTransition> = Vec::new();
    let zeros = vec![0.0; q_dim];

    let (mut k_nxt, mut m_nxt) = if hierarchical {
        let k_cur = obs.proprio.clone();
        let (k, m) = predictor.unwrap().next_keypose(&obs, &k_cur, rng)?;
        predictor_calls += 1;
        transitions.push(KeyposeTransition { t: 0, keypose: k.clone(), mode: m });
        (k, m)
    } else {
        (zeros.clone(), false)
    };

    let mut pending: VecDeque<Vec<f64>> = VecDeque::new();
    let mut steps = Vec::new();
    let mut states = vec![env.state.clone()];
    let mut non_finite = false;

    for t in 0..cfg.max_steps {
        if pending.is_empty() {
            let hist_vec: Vec<Observation> = hist.iter().cloned().collect();
            let target = if hierarchical { &k_nxt } else { &zeros };
            let start = Instant::now();
            let chunk = generator.chunk(&hist_vec, target, rng)?;
            gen_latency.push(start.elapsed().as_secs_f64());
            generator_calls += 1;
            for action in chunk.into_iter().take(cfg.h_exec) {
                pending.push_back(action);
            }
        }
        let action = pending.pop_front().unwrap();
        if action.iter().any(|v| !v.is_finite()) {
            non_finite = true;
            break;
        }
        if hierarchical && attained(&action, &k_nxt, m_nxt, cfg.attain_tolerance)? {
            let k_cur = k_nxt.clone();
            let (k, m) = predictor.unwrap().next_keypose(&obs, &k_cur, rng)?;
            predictor_calls += 1;
            k_nxt = k;
            m_nxt = m;
            transitions.push(KeyposeTransition {
                t: t + 1,
                keypose: k_nxt.clone(),
                mode: m_nxt,
            });
            pending.clear();
        }
        steps.push(RolloutStep {
            t,
            proprio: obs.proprio.clone(),
            aux: obs.aux.clone(),
            action: action.clone(),
            keypose_id: transitions.len().saturating_sub(1),
        });
        obs = env.step(&action)?;
        states.push(env.state.clone());
        hist.push_back(obs.clone());
        while hist.len() > h_o {
            hist.pop_front();
        }
        if env.success() {
            break;
        }
    }
    if non_finite {
        return Err(Error::validation("policy emitted a non-finite action"));
    }

    let outcome = check_stages(&env.task, &states);
    Ok(RolloutRecord {
        steps,
        success: outcome.success,
        first_grasp_arm: first_grasp_arm(&states),
        outcome,
        transitions,
        predictor_calls,
        generator_calls,
        gen_latency_s: gen_latency,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_rollouts: usize,
    pub success_rate: f64,
    /// Per stage: (successes, attempts, rate).
    pub stage_rates: Vec<(usize, usize, f64)>,
    pub stage_names: Vec<String>,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub mean_generator_calls: f64,
    pub mean_predictor_calls: f64,
    /// Episodes won by the left arm grasping first / right first.
    pub left_first: usize,
    pub right_first: usize,
    /// Counter check: every sample drew exactly one backbone forward.
    pub one_step_verified: bool,
}

/// Evaluates a policy over seeded rollouts (parallel; rollout i uses a seed
/// derived from `cfg.seed` and i).
pub fn evaluate(
    env_proto: &PlanarEnv,
    predictor: Option<&KeyposePredictor>,
    generator: &TrajectoryGenerator,
    cfg: &DeployConfig,
    n_rollouts: usize,
) -> Result<(EvalReport, Vec<RolloutRecord>)> {
    cfg.validate(generator.h_pred)?;
    let evals_before = generator.cm.forward_evals() + predictor.map(|p| p.cm.forward_evals()).unwrap_or(0);
    let samples_before =
        generator.cm.samples_drawn() + predictor.map(|p| p.cm.samples_drawn()).unwrap_or(0);

    let records: Vec<RolloutRecord> = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut env = env_proto.clone();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("rollout-{i}")));
            run_episode(
                &mut env,
                predictor.map(|p| p as &dyn KeyposeSource),
                generator,
                cfg,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let evals_after = generator.cm.forward_evals() + predictor.map(|p| p.cm.forward_evals()).unwrap_or(0);
    let samples_after =
        generator.cm.samples_drawn() + predictor.map(|p| p.cm.samples_drawn()).unwrap_or(0);
    let one_step_verified = evals_after - evals_before == samples_after - samples_before;

    let outcomes: Vec<StageOutcome> = records.iter().map(|r| r.outcome.clone()).collect();
    let stage_rates = stagewise_rates(&outcomes);
    let successes = records.iter().filter(|r| r.success).count();
    let mut latencies: Vec<f64> = records
        .iter()
        .flat_map(|r| r.gen_latency_s.iter().map(|s| s * 1e3))
        .collect();
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_latency_ms = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<f64>() / latencies.len() as f64
    };
    let p95_latency_ms = if latencies.is_empty() {
        0.0
    } else {
        latencies[((latencies.len() as f64 * 0.95) as usize).min(latencies.len() - 1)]
    };
    let left_first = records
        .iter()
        .filter(|r| r.success && r.first_grasp_arm == Some(ArmSide::Left))
        .count();
    let right_first = records
        .iter()
        .filter(|r| r.success && r.first_grasp_arm == Some(ArmSide::Right))
        .count();

    let report = EvalReport {
        n_rollouts,
        success_rate: successes as f64 / n_rollouts as f64,
        stage_rates,
        stage_names: env_proto.task.stage_names.clone(),
        mean_latency_ms,
        p95_latency_ms,
        mean_generator_calls: records.iter().map(|r| r.generator_calls as f64).sum::<f64>()
            / n_rollouts as f64,
        mean_predictor_calls: records.iter().map(|r| r.predictor_calls as f64).sum::<f64>()
            / n_rollouts as f64,
        left_first,
        right_first,
        one_step_verified,
    };
    Ok((report, records))
}

/// Writes rollout records as JSONL (one step object per line, transition log
/// in a trailer object).
pub fn write_rollout(path: &std::path::Path, record: &RolloutRecord) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in &record.steps {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    let trailer = serde_json::json!({
        "transitions": record.transitions,
        "success": record.success,
        "outcome": record.outcome,
        "predictor_calls": record.predictor_calls,
        "generator_calls": record.generator_calls,
    });
    serde_json::to_writer(&mut f, &trailer)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
