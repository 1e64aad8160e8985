//! Supervised datasets for the keypose predictor and trajectory generator,
//! plus normalization statistics and flat binary persistence.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demo::{KeyposeAnnotation, Trajectory};
use crate::error::{Error, Result};

/// One high-level sample: observation at t with its bracketing keyposes and
/// the successor's coordination mode.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyposeSample {
    pub obs: Vec<f64>,
    pub k_prev: Vec<f64>,
    pub k_next: Vec<f64>,
    pub m_next: bool,
}

/// One low-level sample: a short observation history, the segment's target
/// keypose, and the action chunk (boundary-padded).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    /// H_o observation feature vectors, oldest first.
    pub obs_hist: Vec<Vec<f64>>,
    pub k_next: Vec<f64>,
    /// H_pred actions.
    pub actions: Vec<Vec<f64>>,
    /// How many trailing actions were padded with the pre-boundary action.
    pub padded: usize,
}

fn annotation_for<'a>(
    annotations: &'a [KeyposeAnnotation],
    traj: &Trajectory,
) -> Result<&'a KeyposeAnnotation> {
    annotations
        .iter()
        .find(|a| a.trajectory_id == traj.id)
        .ok_or_else(|| Error::validation(format!("no annotation for trajectory {}", traj.id)))
}

/// Builds the keypose dataset: for every demo, segment j, and
/// t in [t_j, t_{j+1} - 1], the tuple (o_t, k_j, k_{j+1}, m_{j+1}).
/// Yields exactly T samples per demo.
pub fn build_keypose_dataset(
    demos: &[Trajectory],
    annotations: &[KeyposeAnnotation],
) -> Result<Vec<KeyposeSample>> {
    let mut out = Vec::new();
    for traj in demos {
        let ann = annotation_for(annotations, traj)?;
        ann.validate(traj)?;
        for (k_prev, k_next) in ann.segments() {
            for t in k_prev.t..k_next.t {
                out.push(KeyposeSample {
                    obs: traj.observation(t).features(),
                    k_prev: k_prev.q.clone(),
                    k_next: k_next.q.clone(),
                    m_next: k_next.mode,
                });
            }
        }
    }
    Ok(out)
}

/// Builds the trajectory dataset. Observation histories are front-padded by
/// repeating o_0; action chunks replace every index at or past the segment
/// boundary t_{j+1} with a_{t_{j+1}-1}, so no chunk crosses a sub-stage.
pub fn build_trajectory_dataset(
    demos: &[Trajectory],
    annotations: &[KeyposeAnnotation],
    h_o: usize,
    h_pred: usize,
) -> Result<Vec<TrajectorySample>> {
    if h_o < 1 || h_pred < 1 {
        return Err(Error::validation("horizons must be >= 1"));
    }
    let mut out = Vec::new();
    for traj in demos {
        let ann = annotation_for(annotations, traj)?;
        ann.validate(traj)?;
        for (k_prev, k_next) in ann.segments() {
            let boundary = k_next.t;
            for t in k_prev.t..boundary {
                let obs_hist: Vec<Vec<f64>> = (0..h_o)
                    .map(|i| {
                        let idx = (t + i + 1).saturating_sub(h_o);
                        traj.observation(idx).features()
                    })
                    .collect();
                let mut padded = 0;
                let actions: Vec<Vec<f64>> = (0..h_pred)
                    .map(|i| {
                        let idx = t + i;
                        if idx >= boundary {
                            padded += 1;
                            traj.action(boundary - 1).target_proprio.clone()
                        } else {
                            traj.action(idx).target_proprio.clone()
                        }
                    })
                    .collect();
                out.push(TrajectorySample {
                    obs_hist,
                    k_next: k_next.q.clone(),
                    actions,
                    padded,
                });
            }
        }
    }
    Ok(out)
}

/// Per-dimension min/max of one vector family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> Result<Self> {
        let mut iter = rows.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::validation("cannot fit stats on an empty family"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::dim("inconsistent dims while fitting stats"));
            }
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// x' = 2 (x - min) / (max - min) - 1; degenerate dims map to 0.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.min.len() {
            return Err(Error::dim(format!(
                "normalize dim {} != stats dim {}",
                x.len(),
                self.min.len()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let range = self.max[i] - self.min[i];
                if range == 0.0 {
                    0.0
                } else {
                    2.0 * (v - self.min[i]) / range - 1.0
                }
            })
            .collect())
    }

    /// Inverse of [`MinMax::normalize`]; degenerate dims return min.
    pub fn denormalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.min.len() {
            return Err(Error::dim(format!(
                "denormalize dim {} != stats dim {}",
                x.len(),
                self.min.len()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let range = self.max[i] - self.min[i];
                if range == 0.0 {
                    self.min[i]
                } else {
                    (v + 1.0) * 0.5 * range + self.min[i]
                }
            })
            .collect())
    }
}

/// Normalization statistics for every vector family the models touch.
/// Keyposes share the proprio/q statistic: a keypose is a proprio snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub proprio: MinMax,
    pub aux: MinMax,
    pub action: MinMax,
    pub keypose: MinMax,
}

impl NormStats {
    pub fn fit(demos: &[Trajectory]) -> Result<Self> {
        let proprio = MinMax::fit(
            demos
                .iter()
                .flat_map(|t| t.steps.iter().map(|(o, _)| o.proprio.as_slice())),
        )?;
        let aux = MinMax::fit(
            demos
                .iter()
                .flat_map(|t| t.steps.iter().map(|(o, _)| o.aux.as_slice())),
        )?;
        let action = MinMax::fit(
            demos
                .iter()
                .flat_map(|t| t.steps.iter().map(|(_, a)| a.target_proprio.as_slice())),
        )?;
        let keypose = proprio.clone();
        Ok(NormStats { proprio, aux, action, keypose })
    }

    /// Normalizes a flat `proprio ∥ aux` observation feature vector.
    pub fn normalize_obs(&self, features: &[f64]) -> Result<Vec<f64>> {
        let pd = self.proprio.dim();
        if features.len() != pd + self.aux.dim() {
            return Err(Error::dim("observation feature dim mismatch"));
        }
        let mut out = self.proprio.normalize(&features[..pd])?;
        out.extend(self.aux.normalize(&features[pd..])?);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Persistence: manifest JSON + flat little-endian f32 blobs, row-major.
// ---------------------------------------------------------------------------

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: String,
    pub count: usize,
    /// name -> [rows, cols] for each blob, in file order.
    pub blobs: Vec<(String, usize, usize)>,
    pub extra: serde_json::Value,
}

/// Writes matrices as one `data.bin` plus `manifest.json` in `dir`.
pub fn write_blobs(
    dir: &Path,
    kind: &str,
    count: usize,
    blobs: &[(&str, usize, usize, &[f64])],
    extra: serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        kind: kind.to_string(),
        count,
        blobs: blobs
            .iter()
            .map(|(n, r, c, _)| (n.to_string(), *r, *c))
            .collect(),
        extra,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("data.bin"))?);
    for (_, rows, cols, data) in blobs {
        if data.len() != rows * cols {
            return Err(Error::dim("blob shape mismatch"));
        }
        for v in *data {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_blobs(dir: &Path) -> Result<(DatasetManifest, BTreeMap<String, (usize, usize, Vec<f64>)>)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut bytes = Vec::new();
    std::fs::File::open(dir.join("data.bin"))?.read_to_end(&mut bytes)?;
    let expected: usize = manifest.blobs.iter().map(|(_, r, c)| r * c * 4).sum();
    if bytes.len() != expected {
        return Err(Error::validation(format!(
            "data.bin holds {} bytes, manifest expects {expected}",
            bytes.len()
        )));
    }
    let mut out = BTreeMap::new();
    let mut at = 0;
    for (name, rows, cols) in &manifest.blobs {
        let n = rows * cols;
        let data: Vec<f64> = bytes[at..at + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        at += n * 4;
        out.insert(name.clone(), (*rows, *cols, data));
    }
    Ok((manifest, out))
}

/// Serializes keypose samples into blob matrices.
pub fn keypose_dataset_blobs(samples: &[KeyposeSample]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let obs: Vec<f64> = samples.iter().flat_map(|s| s.obs.iter().copied()).collect();
    let k_prev: Vec<f64> = samples.iter().flat_map(|s| s.k_prev.iter().copied()).collect();
    let k_next: Vec<f64> = samples.iter().flat_map(|s| s.k_next.iter().copied()).collect();
    let m: Vec<f64> = samples.iter().map(|s| if s.m_next { 1.0 } else { 0.0 }).collect();
    (obs, k_prev, k_next, m)
}

/// Serializes trajectory samples into blob matrices (flattened histories and
/// chunks).
pub fn trajectory_dataset_blobs(samples: &[TrajectorySample]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let obs: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.obs_hist.iter().flat_map(|o| o.iter().copied()))
        .collect();
    let k: Vec<f64> = samples.iter().flat_map(|s| s.k_next.iter().copied()).collect();
    let act: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.actions.iter().flat_map(|a| a.iter().copied()))
        .collect();
    (obs, k, act)
}

/// Rebuilds keypose samples from blob matrices.
pub fn keypose_samples_from_blobs(
    obs: &(usize, usize, Vec<f64>),
    k_prev: &(usize, usize, Vec<f64>),
    k_next: &(usize, usize, Vec<f64>),
    modes: &(usize, usize, Vec<f64>),
) -> Result<Vec<KeyposeSample>> {
    let n = obs.0;
    if k_prev.0 != n || k_next.0 != n || modes.2.len() != n {
        return Err(Error::dim("keypose blob row counts disagree"));
    }
    Ok((0..n)
        .map(|i| KeyposeSample {
            obs: obs.2[i * obs.1..(i + 1) * obs.1].to_vec(),
            k_prev: k_prev.2[i * k_prev.1..(i + 1) * k_prev.1].to_vec(),
            k_next: k_next.2[i * k_next.1..(i + 1) * k_next.1].to_vec(),
            m_next: modes.2[i] > 0.5,
        })
        .collect())
}

/// Rebuilds trajectory samples from blob matrices.
pub fn trajectory_samples_from_blobs(
    obs: &(usize, usize, Vec<f64>),
    k_next: &(usize, usize, Vec<f64>),
    actions: &(usize, usize, Vec<f64>),
    h_o: usize,
    h_pred: usize,
) -> Result<Vec<TrajectorySample>> {
    let n = obs.0;
    if k_next.0 != n || actions.0 != n || obs.1 % h_o != 0 || actions.1 % h_pred != 0 {
        return Err(Error::dim("trajectory blob shapes disagree with horizons"));
    }
    let obs_dim = obs.1 / h_o;
    let action_dim = actions.1 / h_pred;
    Ok((0..n)
        .map(|i| {
            let orow = &obs.2[i * obs.1..(i + 1) * obs.1];
            let arow = &actions.2[i * actions.1..(i + 1) * actions.1];
            TrajectorySample {
                obs_hist: (0..h_o)
                    .map(|h| orow[h * obs_dim..(h + 1) * obs_dim].to_vec())
                    .collect(),
                k_next: k_next.2[i * k_next.1..(i + 1) * k_next.1].to_vec(),
                actions: (0..h_pred)
                    .map(|j| arow[j * action_dim..(j + 1) * action_dim].to_vec())
                    .collect(),
                padded: 0,
            }
        })
        .collect())
}
