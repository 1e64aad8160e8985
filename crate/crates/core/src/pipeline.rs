//! End-to-end keypose identification for one demonstration: heuristic
//! extraction, coordination identification from a contact record, and
//! coordination-driven merging.

use serde::{Deserialize, Serialize};

use crate::contact::{
    graph_timeline, identify_coordination, merge_to_bimanual, ContactRecord,
    CoordinationConfig, CoordinationInterval,
};
use crate::demo::{ArmSide, KeyposeAnnotation, Trajectory};
use crate::error::Result;
use crate::heuristics::{extract_unimanual_keyposes, HeuristicConfig, MergedUnimanualKeypose};
use crate::sim::world::{fk, WorldConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub heuristics: HeuristicConfig,
    pub coordination: CoordinationConfig,
}

/// Forward-kinematics callback over the planar world for spatial rules;
/// returns (x, height above the table line).
pub fn sim_fk(
    world: &WorldConfig,
) -> impl Fn(ArmSide, &[f64]) -> Result<[f64; 2]> + '_ {
    move |arm, joints| {
        let p = fk(joints, world.base(arm), &world.link_lengths);
        Ok([p[0], p[1] - world.table_y])
    }
}

/// Stage-1 extraction with the simulator's kinematics.
pub fn extract_keyposes_sim(
    traj: &Trajectory,
    world: &WorldConfig,
    cfg: &HeuristicConfig,
) -> Result<[Vec<MergedUnimanualKeypose>; 2]> {
    let fk_fn = sim_fk(world);
    extract_unimanual_keyposes(traj, cfg, &fk_fn)
}

/// Stage-2 on a recorded contact stream.
pub fn intervals_from_record(
    traj: &Trajectory,
    record: &ContactRecord,
    cfg: &CoordinationConfig,
) -> Result<Vec<CoordinationInterval>> {
    let initial = record.initial()?;
    let events = record.events();
    let timeline = graph_timeline(&initial, &events)?;
    Ok(identify_coordination(&timeline, record.frame_to_step(), traj.len(), cfg))
}

/// Stages 1-3 for one demonstration.
pub fn annotate_demo(
    traj: &Trajectory,
    record: &ContactRecord,
    world: &WorldConfig,
    cfg: &PipelineConfig,
) -> Result<(KeyposeAnnotation, Vec<CoordinationInterval>)> {
    let [left, right] = extract_keyposes_sim(traj, world, &cfg.heuristics)?;
    let intervals = intervals_from_record(traj, record, &cfg.coordination)?;
    let annotation = merge_to_bimanual(
        &left,
        &right,
        &intervals,
        traj,
        cfg.heuristics.merge_window,
    )?;
    Ok((annotation, intervals))
}

/// How well a recovered annotation matches ground truth: the fraction of
/// ground-truth interior keyposes with a recovered keypose within
/// `tol_steps` carrying the same mode flag.
pub fn keypose_recovery_rate(
    truth: &KeyposeAnnotation,
    recovered: &KeyposeAnnotation,
    tol_steps: usize,
) -> f64 {
    let interior_truth: Vec<_> = truth
        .keyposes
        .iter()
        .skip(1)
        .take(truth.interior_count())
        .collect();
    if interior_truth.is_empty() {
        return 1.0;
    }
    let matched = interior_truth
        .iter()
        .filter(|gt| {
            recovered
                .keyposes
                .iter()
                .skip(1)
                .take(recovered.interior_count())
                .any(|r| r.t.abs_diff(gt.t) <= tol_steps && r.mode == gt.mode)
        })
        .count();
    matched as f64 / interior_truth.len() as f64
}
