//! Run configuration: one JSON file drives every subcommand; its full
//! contents are echoed into output manifests for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use duet_core::deploy::DeployConfig;
use duet_core::pipeline::PipelineConfig;
use duet_core::policy::TrainConfig;
use duet_core::sim::{ExpertConfig, TaskKind, WorldConfig};
use duet_core::vlm::ContactSource;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Horizons {
    pub h_o: usize,
    pub h_pred: usize,
}

impl Default for Horizons {
    fn default() -> Self {
        Horizons { h_o: 2, h_pred: 16 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    pub seed: u64,
    pub out_dir: String,
    pub n_demos: usize,
    pub n_rollouts: usize,
    pub world: WorldConfig,
    pub expert: ExpertConfig,
    pub pipeline: PipelineConfig,
    pub contact: ContactSource,
    pub train: TrainConfig,
    pub horizons: Horizons,
    pub deploy: DeployConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: "planar_transfer".into(),
            seed: 7,
            out_dir: "runs/planar_transfer".into(),
            n_demos: 50,
            n_rollouts: 50,
            world: WorldConfig::default(),
            expert: ExpertConfig::default(),
            pipeline: PipelineConfig::default(),
            contact: ContactSource::SimGroundTruth,
            train: TrainConfig::default(),
            horizons: Horizons::default(),
            deploy: DeployConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config parse error in {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn task_kind(&self) -> duet_core::Result<TaskKind> {
        TaskKind::parse(&self.task)
    }

    /// Cross-field consistency, checked before any work.
    pub fn validate(&self) -> duet_core::Result<()> {
        self.task_kind()?;
        self.world.validate()?;
        self.pipeline.heuristics.validate()?;
        self.train.cm.validate()?;
        if self.horizons.h_o < 1 || self.horizons.h_pred < 1 {
            return Err(duet_core::Error::validation("horizons must be >= 1"));
        }
        self.deploy.validate(self.horizons.h_pred)?;
        if self.n_demos == 0 || self.n_rollouts == 0 {
            return Err(duet_core::Error::validation("n_demos and n_rollouts must be >= 1"));
        }
        if let ContactSource::VlmHttp(v) = &self.contact {
            v.validate()?;
        }
        Ok(())
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn demos_dir(&self) -> PathBuf {
        self.out().join("demos")
    }

    pub fn gt_annotations_path(&self) -> PathBuf {
        self.out().join("gt_annotations.json")
    }

    pub fn unimanual_path(&self) -> PathBuf {
        self.out().join("annotations/unimanual.json")
    }

    pub fn intervals_path(&self) -> PathBuf {
        self.out().join("annotations/intervals.json")
    }

    pub fn merged_path(&self) -> PathBuf {
        self.out().join("annotations/merged.json")
    }

    pub fn dataset_dir(&self, kind: &str) -> PathBuf {
        self.out().join("datasets").join(kind)
    }

    pub fn stats_path(&self) -> PathBuf {
        self.out().join("datasets/stats.json")
    }

    pub fn checkpoint_dir(&self, kind: &str) -> PathBuf {
        self.out().join("checkpoints").join(kind)
    }

    pub fn metrics_path(&self, kind: &str) -> PathBuf {
        self.out().join("metrics").join(format!("{kind}.csv"))
    }

    pub fn rollouts_dir(&self) -> PathBuf {
        self.out().join("rollouts")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out().join("eval")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out().join("report")
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}
