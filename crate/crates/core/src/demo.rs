//! Demonstration data model: observations, actions, trajectories, and
//! bimanual keypose annotations.
//!
//! A bimanual joint vector `q` is laid out as one block per arm,
//! `[left joints.., left gripper, right joints.., right gripper]`, so the
//! left/right sub-vectors are simply the two halves. Gripper commands are
//! normalized to `[0, 1]` with 1 = open.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which arm of the bimanual system a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSide {
    Left,
    Right,
}

impl ArmSide {
    pub const BOTH: [ArmSide; 2] = [ArmSide::Left, ArmSide::Right];

    /// 0 for left, 1 for right; indexes the per-arm blocks of `q`.
    pub fn index(self) -> usize {
        match self {
            ArmSide::Left => 0,
            ArmSide::Right => 1,
        }
    }

    pub fn other(self) -> ArmSide {
        match self {
            ArmSide::Left => ArmSide::Right,
            ArmSide::Right => ArmSide::Left,
        }
    }
}

impl fmt::Display for ArmSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArmSide::Left => write!(f, "left"),
            ArmSide::Right => write!(f, "right"),
        }
    }
}

/// Splits a bimanual vector into its (left, right) halves.
pub fn split_arms(q: &[f64]) -> Result<(&[f64], &[f64])> {
    if q.len() % 2 != 0 {
        return Err(Error::dim(format!(
            "bimanual vector has odd length {}",
            q.len()
        )));
    }
    Ok(q.split_at(q.len() / 2))
}

/// Selects one arm's half of a bimanual vector.
pub fn arm_slice(q: &[f64], arm: ArmSide) -> Result<&[f64]> {
    let (l, r) = split_arms(q)?;
    Ok(match arm {
        ArmSide::Left => l,
        ArmSide::Right => r,
    })
}

/// Concatenates two per-arm halves back into a bimanual vector.
pub fn concat_arms(left: &[f64], right: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(left.len() + right.len());
    q.extend_from_slice(left);
    q.extend_from_slice(right);
    q
}

/// A single observation: bimanual proprioception plus low-dimensional
/// task-state scalars (object positions) standing in for visual features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub proprio: Vec<f64>,
    pub aux: Vec<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.proprio.len() + self.aux.len()
    }

    /// Flat `proprio ∥ aux` feature vector consumed by observation encoders.
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.proprio);
        v.extend_from_slice(&self.aux);
        v
    }
}

/// A control command: the desired proprioceptive state at the next step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub target_proprio: Vec<f64>,
}

/// One demonstration: a time-indexed sequence of (observation, action) pairs.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub id: String,
    pub dt: f64,
    pub per_arm_dim: usize,
    pub steps: Vec<(Observation, Action)>,
}

/// A violation reported by [`validate_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    TooShort { len: usize },
    BadDt { dt: f64 },
    BadPerArmDim { per_arm_dim: usize },
    DimMismatch { step: usize, field: &'static str, expected: usize, got: usize },
    NonFinite { step: usize, field: &'static str, index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooShort { len } => write!(f, "T < 2 (got {len} steps)"),
            Violation::BadDt { dt } => write!(f, "dt must be > 0 (got {dt})"),
            Violation::BadPerArmDim { per_arm_dim } => {
                write!(f, "per_arm_dim must be >= 2 (got {per_arm_dim})")
            }
            Violation::DimMismatch { step, field, expected, got } => {
                write!(f, "step {step}: {field} has dim {got}, expected {expected}")
            }
            Violation::NonFinite { step, field, index } => {
                write!(f, "step {step}: {field}[{index}] is not finite")
            }
        }
    }
}

impl Trajectory {
    /// Number of steps T.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Bimanual proprioceptive vector at step `t`, clamped to the last step
    /// so the end sentinel at t = T resolves to q(T-1).
    pub fn q_at(&self, t: usize) -> &[f64] {
        let idx = t.min(self.steps.len().saturating_sub(1));
        &self.steps[idx].0.proprio
    }

    pub fn observation(&self, t: usize) -> &Observation {
        &self.steps[t].0
    }

    pub fn action(&self, t: usize) -> &Action {
        &self.steps[t].1
    }

    /// One arm's gripper command at step `t` (last entry of the arm block).
    pub fn commanded_gripper(&self, t: usize, arm: ArmSide) -> f64 {
        let a = &self.steps[t].1.target_proprio;
        a[arm.index() * self.per_arm_dim + self.per_arm_dim - 1]
    }

    /// One arm's commanded joint sub-vector (gripper excluded) at step `t`.
    pub fn commanded_joints(&self, t: usize, arm: ArmSide) -> &[f64] {
        let a = &self.steps[t].1.target_proprio;
        let lo = arm.index() * self.per_arm_dim;
        &a[lo..lo + self.per_arm_dim - 1]
    }
}

/// Checks every trajectory invariant and returns all violations found.
pub fn validate_trajectory(traj: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    if traj.steps.len() < 2 {
        out.push(Violation::TooShort { len: traj.steps.len() });
    }
    if !(traj.dt > 0.0) {
        out.push(Violation::BadDt { dt: traj.dt });
    }
    if traj.per_arm_dim < 2 {
        out.push(Violation::BadPerArmDim { per_arm_dim: traj.per_arm_dim });
    }
    let proprio_dim = 2 * traj.per_arm_dim;
    let aux_dim = traj.steps.first().map(|(o, _)| o.aux.len()).unwrap_or(0);
    for (t, (obs, act)) in traj.steps.iter().enumerate() {
        if obs.proprio.len() != proprio_dim {
            out.push(Violation::DimMismatch {
                step: t,
                field: "proprio",
                expected: proprio_dim,
                got: obs.proprio.len(),
            });
        }
        if obs.aux.len() != aux_dim {
            out.push(Violation::DimMismatch {
                step: t,
                field: "aux",
                expected: aux_dim,
                got: obs.aux.len(),
            });
        }
        if act.target_proprio.len() != proprio_dim {
            out.push(Violation::DimMismatch {
                step: t,
                field: "action",
                expected: proprio_dim,
                got: act.target_proprio.len(),
            });
        }
        for (field, v) in [
            ("proprio", &obs.proprio),
            ("aux", &obs.aux),
            ("action", &act.target_proprio),
        ] {
            for (i, x) in v.iter().enumerate() {
                if !x.is_finite() {
                    out.push(Violation::NonFinite { step: t, field, index: i });
                }
            }
        }
    }
    out
}

/// A full joint-space snapshot at a keypose timestep plus its coordination
/// mode flag. `mode = true` means both arms must reach it synchronously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimanualKeypose {
    pub t: usize,
    pub q: Vec<f64>,
    pub mode: bool,
}

impl BimanualKeypose {
    /// Builds a keypose from the trajectory's own proprio at `t`, which may
    /// be T for the end sentinel (resolved to q(T-1)).
    pub fn at(traj: &Trajectory, t: usize, mode: bool) -> Result<Self> {
        if t > traj.len() {
            return Err(Error::validation(format!(
                "keypose timestep {t} out of range for trajectory of length {}",
                traj.len()
            )));
        }
        Ok(BimanualKeypose { t, q: traj.q_at(t).to_vec(), mode })
    }
}

/// Ordered keyposes for one trajectory, bracketed by sentinels at t = 0 and
/// t = T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyposeAnnotation {
    pub trajectory_id: String,
    pub keyposes: Vec<BimanualKeypose>,
}

impl KeyposeAnnotation {
    /// Wraps interior keyposes (strictly inside (0, T)) with the two
    /// sentinels. Interior keyposes must be strictly increasing in t.
    pub fn with_sentinels(traj: &Trajectory, interior: Vec<BimanualKeypose>) -> Result<Self> {
        let t_end = traj.len();
        let mut keyposes = Vec::with_capacity(interior.len() + 2);
        keyposes.push(BimanualKeypose::at(traj, 0, false)?);
        let mut prev = 0usize;
        for kp in interior {
            if kp.t <= prev || kp.t >= t_end {
                return Err(Error::validation(format!(
                    "interior keypose t={} not strictly inside (0, {t_end}) or out of order",
                    kp.t
                )));
            }
            prev = kp.t;
            keyposes.push(kp);
        }
        keyposes.push(BimanualKeypose::at(traj, t_end, false)?);
        Ok(KeyposeAnnotation { trajectory_id: traj.id.clone(), keyposes })
    }

    /// Count of interior keyposes J (sentinels excluded).
    pub fn interior_count(&self) -> usize {
        self.keyposes.len().saturating_sub(2)
    }

    /// Segments as consecutive keypose pairs (k_j, k_{j+1}).
    pub fn segments(&self) -> impl Iterator<Item = (&BimanualKeypose, &BimanualKeypose)> {
        self.keyposes.iter().zip(self.keyposes.iter().skip(1))
    }

    pub fn validate(&self, traj: &Trajectory) -> Result<()> {
        if self.keyposes.len() < 2 {
            return Err(Error::validation("annotation must contain both sentinels"));
        }
        if self.keyposes[0].t != 0 {
            return Err(Error::validation("first keypose must sit at t = 0"));
        }
        if self.keyposes.last().unwrap().t != traj.len() {
            return Err(Error::validation("last keypose must sit at t = T"));
        }
        for w in self.keyposes.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::validation(format!(
                    "keypose timesteps not strictly increasing at t={}",
                    w[1].t
                )));
            }
        }
        for kp in &self.keyposes {
            if kp.q != traj.q_at(kp.t) {
                return Err(Error::validation(format!(
                    "keypose q at t={} does not equal trajectory proprio",
                    kp.t
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Demonstration files: one JSONL file per trajectory plus a meta sidecar.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StepRecord {
    t: usize,
    proprio: Vec<f64>,
    aux: Vec<f64>,
    action: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    id: String,
    dt: f64,
    per_arm_dim: usize,
}

/// Writes `<dir>/<id>.jsonl` and `<dir>/<id>.meta.json`.
pub fn write_demo(dir: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = MetaRecord {
        id: traj.id.clone(),
        dt: traj.dt,
        per_arm_dim: traj.per_arm_dim,
    };
    let meta_path = dir.join(format!("{}.meta.json", traj.id));
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;

    let jsonl_path = dir.join(format!("{}.jsonl", traj.id));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&jsonl_path)?);
    for (t, (obs, act)) in traj.steps.iter().enumerate() {
        let rec = StepRecord {
            t,
            proprio: obs.proprio.clone(),
            aux: obs.aux.clone(),
            action: act.target_proprio.clone(),
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a demonstration from `<dir>/<id>.jsonl` + `<dir>/<id>.meta.json`.
pub fn read_demo(dir: &Path, id: &str) -> Result<Trajectory> {
    let meta_path = dir.join(format!("{id}.meta.json"));
    let meta: MetaRecord = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    let jsonl_path = dir.join(format!("{id}.jsonl"));
    let reader = BufReader::new(std::fs::File::open(&jsonl_path)?);
    let mut steps = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)?;
        if rec.t != steps.len() {
            return Err(Error::validation(format!(
                "{}: line {} has t={}, expected {}",
                jsonl_path.display(),
                lineno + 1,
                rec.t,
                steps.len()
            )));
        }
        steps.push((
            Observation { proprio: rec.proprio, aux: rec.aux },
            Action { target_proprio: rec.action },
        ));
    }
    Ok(Trajectory { id: meta.id, dt: meta.dt, per_arm_dim: meta.per_arm_dim, steps })
}

/// Lists demonstration ids in a directory (every `*.meta.json` stem), sorted.
pub fn list_demo_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".meta.json") {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Reads every demonstration in a directory, sorted by id.
pub fn read_all_demos(dir: &Path) -> Result<Vec<Trajectory>> {
    list_demo_ids(dir)?.iter().map(|id| read_demo(dir, id)).collect()
}

/// Annotation files map trajectory id to its keypose list.
pub type AnnotationFile = BTreeMap<String, Vec<BimanualKeypose>>;

pub fn write_annotations(path: &Path, annotations: &[KeyposeAnnotation]) -> Result<()> {
    let map: AnnotationFile = annotations
        .iter()
        .map(|a| (a.trajectory_id.clone(), a.keyposes.clone()))
        .collect();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&map)?)?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<KeyposeAnnotation>> {
    let map: AnnotationFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(map
        .into_iter()
        .map(|(trajectory_id, keyposes)| KeyposeAnnotation { trajectory_id, keyposes })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_traj(t_len: usize, per_arm_dim: usize) -> Trajectory {
        let dim = 2 * per_arm_dim;
        let steps = (0..t_len)
            .map(|t| {
                let q: Vec<f64> = (0..dim).map(|i| t as f64 * 0.01 + i as f64).collect();
                (
                    Observation { proprio: q.clone(), aux: vec![0.1, 0.2] },
                    Action { target_proprio: q },
                )
            })
            .collect();
        Trajectory { id: "toy".into(), dt: 0.02, per_arm_dim, steps }
    }

    #[test]
    fn split_arms_halves_by_layout() {
        let (l, r) = split_arms(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(l, &[1.0, 2.0]);
        assert_eq!(r, &[3.0, 4.0]);

        let (l, r) = split_arms(&[0.0, 0.0]).unwrap();
        assert_eq!(l, &[0.0]);
        assert_eq!(r, &[0.0]);

        // the 14-dof layout used by full-size bimanual rigs
        let q: Vec<f64> = (0..14).map(|i| i as f64).collect();
        let (l, r) = split_arms(&q).unwrap();
        assert_eq!(l.len(), 7);
        assert_eq!(r.len(), 7);
    }

    #[test]
    fn split_arms_rejects_odd_dim() {
        assert!(matches!(split_arms(&[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn validate_accepts_wellformed_demo() {
        let traj = toy_traj(400, 4);
        assert!(validate_trajectory(&traj).is_empty());
    }

    #[test]
    fn validate_reports_nan_at_step() {
        let mut traj = toy_traj(10, 4);
        traj.steps[3].0.proprio[2] = f64::NAN;
        let v = validate_trajectory(&traj);
        assert_eq!(
            v,
            vec![Violation::NonFinite { step: 3, field: "proprio", index: 2 }]
        );
    }

    #[test]
    fn validate_reports_empty_steps() {
        let traj = Trajectory { id: "e".into(), dt: 0.02, per_arm_dim: 4, steps: vec![] };
        assert!(validate_trajectory(&traj).contains(&Violation::TooShort { len: 0 }));
    }

    #[test]
    fn annotation_brackets_with_sentinels() {
        let traj = toy_traj(20, 4);
        let kp = BimanualKeypose::at(&traj, 7, true).unwrap();
        let ann = KeyposeAnnotation::with_sentinels(&traj, vec![kp]).unwrap();
        assert_eq!(ann.keyposes.len(), 3);
        assert_eq!(ann.keyposes[0].t, 0);
        assert_eq!(ann.keyposes[2].t, 20);
        assert_eq!(ann.keyposes[2].q, traj.q_at(19));
        assert_eq!(ann.interior_count(), 1);
        ann.validate(&traj).unwrap();
    }

    #[test]
    fn annotation_rejects_out_of_order_interior() {
        let traj = toy_traj(20, 4);
        let a = BimanualKeypose::at(&traj, 9, false).unwrap();
        let b = BimanualKeypose::at(&traj, 4, false).unwrap();
        assert!(KeyposeAnnotation::with_sentinels(&traj, vec![a, b]).is_err());
    }

    #[test]
    fn demo_roundtrip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let traj = toy_traj(25, 4);
        write_demo(dir.path(), &traj).unwrap();
        let back = read_demo(dir.path(), "toy").unwrap();
        assert_eq!(back.id, traj.id);
        assert_eq!(back.dt, traj.dt);
        assert_eq!(back.per_arm_dim, traj.per_arm_dim);
        assert_eq!(back.steps, traj.steps);
        assert_eq!(list_demo_ids(dir.path()).unwrap(), vec!["toy".to_string()]);
    }
}
