//! Subcommand implementations. Each stage reads and writes the documented
//! file formats so stages can be re-run or swapped independently.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use duet_core::contact::{ContactRecord, CoordinationInterval, IntervalFile};
use duet_core::dataset::{
    self, build_keypose_dataset, build_trajectory_dataset, keypose_dataset_blobs,
    trajectory_dataset_blobs, NormStats,
};
use duet_core::demo::{
    read_all_demos, read_annotations, write_annotations, write_demo, KeyposeAnnotation,
    Trajectory,
};
use duet_core::deploy::{evaluate, run_episode, write_rollout, EvalReport, PolicyMode};
use duet_core::heuristics::MergedUnimanualKeypose;
use duet_core::pipeline::{extract_keyposes_sim, intervals_from_record};
use duet_core::policy::{
    derive_seed, train_keypose_predictor, train_trajectory_generator, KeyposePredictor,
    MetricRow, TrajectoryGenerator,
};
use duet_core::sim::{generate_demos, PlanarEnv, TaskSpec};
use duet_core::vlm::{fetch_contacts_vlm, ContactSource, TaskMeta};

use crate::config::RunConfig;

pub fn write_config_echo(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(cfg.out())?;
    std::fs::write(
        cfg.out().join("config.json"),
        serde_json::to_string_pretty(&cfg.echo_json())?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// demo-gen
// ---------------------------------------------------------------------------

pub fn demo_gen(cfg: &RunConfig) -> anyhow::Result<()> {
    let task = TaskSpec::new(cfg.task_kind()?);
    let demos = generate_demos(
        &task,
        &cfg.world,
        &cfg.expert,
        &format!("{}_s{}", cfg.task, cfg.seed),
        cfg.n_demos,
        derive_seed(cfg.seed, "demo-gen"),
    )?;
    let dir = cfg.demos_dir();
    let mut gt = Vec::new();
    for demo in &demos {
        write_demo(&dir, &demo.trajectory)?;
        demo.contact_record(&cfg.world)
            .write(&dir.join(format!("{}.contacts.json", demo.trajectory.id)))?;
        gt.push(demo.annotation.clone());
    }
    write_annotations(&cfg.gt_annotations_path(), &gt)?;
    write_config_echo(cfg)?;
    println!(
        "demo-gen: wrote {} demonstrations to {}",
        demos.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// extract-keyposes
// ---------------------------------------------------------------------------

type UnimanualFile = BTreeMap<String, Vec<MergedUnimanualKeypose>>;

pub fn extract_keyposes(cfg: &RunConfig) -> anyhow::Result<()> {
    let demos = read_all_demos(&cfg.demos_dir())
        .with_context(|| format!("reading demos from {}", cfg.demos_dir().display()))?;
    if demos.is_empty() {
        return Err(anyhow!("no demonstrations in {}", cfg.demos_dir().display()));
    }
    let mut out: UnimanualFile = BTreeMap::new();
    for traj in &demos {
        let [left, right] = extract_keyposes_sim(traj, &cfg.world, &cfg.pipeline.heuristics)?;
        let mut all = left;
        all.extend(right);
        all.sort_by_key(|k| (k.t, k.arm));
        out.insert(traj.id.clone(), all);
    }
    let path = cfg.unimanual_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&out)?)?;
    println!("extract-keyposes: {} trajectories -> {}", demos.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// detect-coordination
// ---------------------------------------------------------------------------

fn contact_record_for(
    cfg: &RunConfig,
    traj: &Trajectory,
    source: &ContactSource,
) -> anyhow::Result<ContactRecord> {
    match source {
        ContactSource::SimGroundTruth => {
            let path = cfg.demos_dir().join(format!("{}.contacts.json", traj.id));
            Ok(ContactRecord::read(&path)
                .with_context(|| format!("reading {}", path.display()))?)
        }
        ContactSource::RecordedJson { dir } => {
            let path = Path::new(dir).join(format!("{}.contacts.json", traj.id));
            Ok(ContactRecord::read(&path)
                .with_context(|| format!("reading {}", path.display()))?)
        }
        ContactSource::VlmHttp(vcfg) => {
            let task = TaskSpec::new(cfg.task_kind()?);
            let frames_dir = cfg.out().join("frames").join(&traj.id);
            let meta = TaskMeta {
                task_name: cfg.task.clone(),
                objects: task.objects.clone(),
                surfaces: task.surfaces.clone(),
                duration_s: traj.len() as f64 * traj.dt,
            };
            let parsed = fetch_contacts_vlm(&frames_dir, vcfg, &meta)?;
            Ok(ContactRecord::from_parts(
                &parsed.initial,
                &parsed.events,
                vcfg.frame_rate_hz,
                1.0 / traj.dt,
            ))
        }
    }
}

pub fn detect_coordination(cfg: &RunConfig, source_override: Option<&str>) -> anyhow::Result<()> {
    let source = match source_override {
        None => cfg.contact.clone(),
        Some("sim") => ContactSource::SimGroundTruth,
        Some("json") => match &cfg.contact {
            ContactSource::RecordedJson { dir } => {
                ContactSource::RecordedJson { dir: dir.clone() }
            }
            _ => ContactSource::RecordedJson {
                dir: cfg.demos_dir().to_string_lossy().into_owned(),
            },
        },
        Some("vlm") => match &cfg.contact {
            ContactSource::VlmHttp(v) => ContactSource::VlmHttp(v.clone()),
            _ => return Err(anyhow!("config carries no vlm contact settings")),
        },
        Some(other) => return Err(anyhow!("unknown contact source {other}")),
    };
    let demos = read_all_demos(&cfg.demos_dir())?;
    let mut out: IntervalFile = BTreeMap::new();
    for traj in &demos {
        let record = contact_record_for(cfg, traj, &source)?;
        let intervals: Vec<CoordinationInterval> =
            intervals_from_record(traj, &record, &cfg.pipeline.coordination)?;
        out.insert(traj.id.clone(), intervals);
    }
    let path = cfg.intervals_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&out)?)?;
    println!("detect-coordination: {} trajectories -> {}", demos.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// merge-keyposes
// ---------------------------------------------------------------------------

pub fn merge_keyposes(cfg: &RunConfig) -> anyhow::Result<()> {
    let demos = read_all_demos(&cfg.demos_dir())?;
    let unimanual: UnimanualFile =
        serde_json::from_str(&std::fs::read_to_string(cfg.unimanual_path())?)?;
    let intervals: IntervalFile =
        serde_json::from_str(&std::fs::read_to_string(cfg.intervals_path())?)?;
    let mut merged = Vec::new();
    for traj in &demos {
        let marks = unimanual
            .get(&traj.id)
            .ok_or_else(|| anyhow!("no unimanual keyposes for {}", traj.id))?;
        let ivs = intervals.get(&traj.id).cloned().unwrap_or_default();
        let left: Vec<MergedUnimanualKeypose> = marks
            .iter()
            .filter(|k| k.arm == duet_core::demo::ArmSide::Left)
            .cloned()
            .collect();
        let right: Vec<MergedUnimanualKeypose> = marks
            .iter()
            .filter(|k| k.arm == duet_core::demo::ArmSide::Right)
            .cloned()
            .collect();
        merged.push(duet_core::contact::merge_to_bimanual(
            &left,
            &right,
            &ivs,
            traj,
            cfg.pipeline.heuristics.merge_window,
        )?);
    }
    write_annotations(&cfg.merged_path(), &merged)?;
    println!("merge-keyposes: {} annotations -> {}", merged.len(), cfg.merged_path().display());
    Ok(())
}

// ---------------------------------------------------------------------------
// build-datasets
// ---------------------------------------------------------------------------

pub fn build_datasets(cfg: &RunConfig) -> anyhow::Result<()> {
    let demos = read_all_demos(&cfg.demos_dir())?;
    let annotations = read_annotations(&cfg.merged_path())?;
    let stats = NormStats::fit(&demos)?;

    let keypose = build_keypose_dataset(&demos, &annotations)?;
    let (obs, k_prev, k_next, m) = keypose_dataset_blobs(&keypose);
    let obs_dim = keypose[0].obs.len();
    let q_dim = keypose[0].k_next.len();
    dataset::write_blobs(
        &cfg.dataset_dir("keypose"),
        "keypose",
        keypose.len(),
        &[
            ("obs", keypose.len(), obs_dim, &obs),
            ("k_prev", keypose.len(), q_dim, &k_prev),
            ("k_next", keypose.len(), q_dim, &k_next),
            ("mode", keypose.len(), 1, &m),
        ],
        serde_json::json!({"config": cfg.echo_json(), "obs_dim": obs_dim, "q_dim": q_dim}),
    )?;

    let traj = build_trajectory_dataset(&demos, &annotations, cfg.horizons.h_o, cfg.horizons.h_pred)?;
    let (obs_t, k_t, act_t) = trajectory_dataset_blobs(&traj);
    let action_dim = traj[0].actions[0].len();
    dataset::write_blobs(
        &cfg.dataset_dir("trajectory"),
        "trajectory",
        traj.len(),
        &[
            ("obs_hist", traj.len(), cfg.horizons.h_o * obs_dim, &obs_t),
            ("k_next", traj.len(), q_dim, &k_t),
            ("actions", traj.len(), cfg.horizons.h_pred * action_dim, &act_t),
        ],
        serde_json::json!({
            "config": cfg.echo_json(),
            "h_o": cfg.horizons.h_o,
            "h_pred": cfg.horizons.h_pred,
            "obs_dim": obs_dim,
            "q_dim": q_dim,
            "action_dim": action_dim,
        }),
    )?;

    std::fs::write(cfg.stats_path(), serde_json::to_string_pretty(&stats)?)?;
    println!(
        "build-datasets: {} keypose samples, {} trajectory samples",
        keypose.len(),
        traj.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

fn write_metrics(path: &Path, rows: &[MetricRow]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,mode_loss,lr,n_levels")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.step, r.loss, r.mode_loss, r.lr, r.n_levels)?;
    }
    Ok(())
}

fn load_stats(cfg: &RunConfig) -> anyhow::Result<NormStats> {
    Ok(serde_json::from_str(&std::fs::read_to_string(cfg.stats_path())?)?)
}

pub fn train_predictor(cfg: &RunConfig) -> anyhow::Result<()> {
    let (manifest, blobs) = dataset::read_blobs(&cfg.dataset_dir("keypose"))?;
    if manifest.kind != "keypose" {
        return Err(anyhow!("dataset at keypose/ has kind {}", manifest.kind));
    }
    let samples = dataset::keypose_samples_from_blobs(
        &blobs["obs"],
        &blobs["k_prev"],
        &blobs["k_next"],
        &blobs["mode"],
    )?;
    let stats = load_stats(cfg)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = derive_seed(cfg.seed, "train-predictor");
    let (model, metrics) = train_keypose_predictor(&samples, &stats, &tcfg)?;
    model.save(&cfg.checkpoint_dir("predictor"), cfg.echo_json())?;
    write_metrics(&cfg.metrics_path("predictor"), &metrics)?;

    // held-out diagnostics
    let holdout: Vec<_> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| tcfg.holdout_every > 0 && i % tcfg.holdout_every == tcfg.holdout_every - 1)
        .map(|(_, s)| s.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "predictor-eval"));
    let eval = model.evaluate(&holdout, cfg.deploy.attain_tolerance, &mut rng)?;
    println!(
        "train-predictor: mode accuracy {:.3}, keypose rmse {:.4}, attain rate {:.3}",
        eval.mode_accuracy, eval.keypose_rmse, eval.attain_rate
    );
    Ok(())
}

pub fn train_generator(cfg: &RunConfig, use_keypose: bool) -> anyhow::Result<()> {
    let (manifest, blobs) = dataset::read_blobs(&cfg.dataset_dir("trajectory"))?;
    if manifest.kind != "trajectory" {
        return Err(anyhow!("dataset at trajectory/ has kind {}", manifest.kind));
    }
    let samples = dataset::trajectory_samples_from_blobs(
        &blobs["obs_hist"],
        &blobs["k_next"],
        &blobs["actions"],
        cfg.horizons.h_o,
        cfg.horizons.h_pred,
    )?;
    let stats = load_stats(cfg)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = derive_seed(cfg.seed, if use_keypose { "train-generator" } else { "train-generator-cp" });
    let (model, metrics) = train_trajectory_generator(
        &samples,
        &stats,
        &tcfg,
        cfg.horizons.h_o,
        cfg.horizons.h_pred,
        use_keypose,
    )?;
    let kind = if use_keypose { "generator" } else { "generator_cp" };
    model.save(&cfg.checkpoint_dir(kind), cfg.echo_json())?;
    write_metrics(&cfg.metrics_path(kind), &metrics)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "generator-eval"));
    let replay: Vec<_> = samples.iter().step_by(97).cloned().collect();
    let rmse = model.replay_rmse(&replay, &mut rng)?;
    println!("train-generator ({kind}): replay rmse {rmse:.4} over {} samples", replay.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// rollout / eval
// ---------------------------------------------------------------------------

fn load_models(
    cfg: &RunConfig,
    cp: bool,
) -> anyhow::Result<(Option<KeyposePredictor>, TrajectoryGenerator)> {
    let generator = TrajectoryGenerator::load(&cfg.checkpoint_dir(if cp {
        "generator_cp"
    } else {
        "generator"
    }))?;
    let predictor = if cp {
        None
    } else {
        Some(KeyposePredictor::load(&cfg.checkpoint_dir("predictor"))?)
    };
    Ok((predictor, generator))
}

fn deploy_config(cfg: &RunConfig, cp: bool) -> duet_core::deploy::DeployConfig {
    let mut d = cfg.deploy.clone();
    d.seed = derive_seed(cfg.seed, "deploy");
    d.policy_mode = if cp { PolicyMode::ChunkedOnly } else { PolicyMode::Hierarchical };
    d
}

pub fn rollout(cfg: &RunConfig, count: usize, cp: bool) -> anyhow::Result<()> {
    let (predictor, generator) = load_models(cfg, cp)?;
    let task = TaskSpec::new(cfg.task_kind()?);
    let dcfg = deploy_config(cfg, cp);
    let dir = cfg.rollouts_dir();
    std::fs::create_dir_all(&dir)?;
    for i in 0..count {
        let mut env = PlanarEnv::new(cfg.world.clone(), task.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(dcfg.seed, &format!("rollout-{i}")));
        let record = run_episode(
            &mut env,
            predictor.as_ref().map(|p| p as &dyn duet_core::deploy::KeyposeSource),
            &generator,
            &dcfg,
            &mut rng,
        )?;
        let path = dir.join(format!("rollout_{i:03}.jsonl"));
        write_rollout(&path, &record)?;
        println!(
            "rollout {i}: success={} steps={} keypose transitions={}",
            record.success,
            record.steps.len(),
            record.transitions.len()
        );
    }
    Ok(())
}

pub fn write_results_csv(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "stage,successes,attempts,rate")?;
    for (name, (s, a, r)) in report.stage_names.iter().zip(&report.stage_rates) {
        writeln!(f, "{name},{s},{a},{r:.4}")?;
    }
    writeln!(f, "overall,{},{},{:.4}",
        (report.success_rate * report.n_rollouts as f64).round() as usize,
        report.n_rollouts,
        report.success_rate)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, cp: bool) -> anyhow::Result<EvalReport> {
    let (predictor, generator) = load_models(cfg, cp)?;
    let task = TaskSpec::new(cfg.task_kind()?);
    let env = PlanarEnv::new(cfg.world.clone(), task)?;
    let dcfg = deploy_config(cfg, cp);
    let (report, _records) = evaluate(
        &env,
        predictor.as_ref(),
        &generator,
        &dcfg,
        cfg.n_rollouts,
    )?;
    let suffix = if cp { "_cp" } else { "" };
    write_results_csv(&cfg.eval_dir().join(format!("results{suffix}.csv")), &report)?;
    // latency is timing data: kept out of the deterministic results table
    std::fs::write(
        cfg.eval_dir().join(format!("latency{suffix}.json")),
        serde_json::to_string_pretty(&serde_json::json!({
            "mean_latency_ms": report.mean_latency_ms,
            "p95_latency_ms": report.p95_latency_ms,
            "mean_generator_calls": report.mean_generator_calls,
            "mean_predictor_calls": report.mean_predictor_calls,
            "one_step_verified": report.one_step_verified,
        }))?,
    )?;
    std::fs::write(
        cfg.eval_dir().join(format!("report{suffix}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "eval{}: overall success {:.1}% over {} rollouts (mean latency {:.2} ms, one-step {})",
        suffix,
        report.success_rate * 100.0,
        report.n_rollouts,
        report.mean_latency_ms,
        report.one_step_verified,
    );
    for (name, (s, a, r)) in report.stage_names.iter().zip(&report.stage_rates) {
        println!("  {name}: {s}/{a} = {:.1}%", r * 100.0);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// pipeline check helper (used by eval-style reporting)
// ---------------------------------------------------------------------------

pub fn gt_recovery(cfg: &RunConfig) -> anyhow::Result<(f64, usize, usize)> {
    let truth = read_annotations(&cfg.gt_annotations_path())?;
    let merged = read_annotations(&cfg.merged_path())?;
    let by_id: BTreeMap<&str, &KeyposeAnnotation> =
        merged.iter().map(|a| (a.trajectory_id.as_str(), a)).collect();
    let mut rates = Vec::new();
    for gt in &truth {
        if let Some(rec) = by_id.get(gt.trajectory_id.as_str()) {
            rates.push(duet_core::pipeline::keypose_recovery_rate(gt, rec, 2));
        }
    }
    let mean = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
    let perfect = rates.iter().filter(|&&r| r >= 1.0).count();
    Ok((mean, perfect, rates.len()))
}
