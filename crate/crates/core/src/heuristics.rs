//! Unimanual keypose extraction from action traces.
//!
//! Three detectors scan each arm's commanded trajectory: gripper transitions
//! (a close run ending or an open run beginning), motion stalls (joint speed
//! below a threshold for several consecutive steps), and spatial rules
//! (inter-gripper distance or end-effector height dropping below thresholds).
//! Their union, deduplicated within a merge window, is the per-arm keypose
//! list fed into coordination-driven merging.

use serde::{Deserialize, Serialize};

use crate::demo::{ArmSide, Trajectory};
use crate::error::Result;

/// Commanded gripper values closer than this are treated as constant.
const FLAT_TOL: f64 = 1e-6;

/// Which heuristic produced a detection.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicRule {
    GripperTransition,
    MotionStall,
    Spatial(SpatialRuleKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRuleKind {
    InterGripperDistance,
    EndEffectorHeight,
}

/// A single raw detection on one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct UnimanualKeypose {
    pub arm: ArmSide,
    pub t: usize,
    pub rule: HeuristicRule,
}

/// A deduplicated per-arm keypose carrying every rule that fired nearby.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedUnimanualKeypose {
    pub arm: ArmSide,
    pub t: usize,
    pub rules: Vec<HeuristicRule>,
}

/// Thresholds for the three detectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Joint-speed stall threshold (rad/step).
    pub v_min: f64,
    /// Consecutive slow steps needed before a stall fires.
    pub stall_window: usize,
    /// Inter-gripper distance threshold (m).
    pub d_min: f64,
    /// End-effector height-above-table threshold (m).
    pub h_min: f64,
    /// Detections within this many steps collapse to the earliest.
    pub merge_window: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            v_min: 0.01,
            stall_window: 3,
            d_min: 0.05,
            h_min: 0.02,
            merge_window: 5,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.d_min > 0.0 && self.h_min > 0.0) {
            return Err(crate::error::Error::validation(
                "heuristic thresholds must be positive".to_string(),
            ));
        }
        if self.stall_window < 1 {
            return Err(crate::error::Error::validation(
                "stall_window must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

fn sign_with_tol(delta: f64) -> i8 {
    if delta > FLAT_TOL {
        1
    } else if delta < -FLAT_TOL {
        -1
    } else {
        0
    }
}

/// Keyposes where the arm's gripper command begins to open or stops closing.
///
/// "Open begins": the command strictly increases at `t` after a non-increasing
/// step (or at the start of the trace). "Close stops": a strictly decreasing
/// run ends at `t`, i.e. the value at `t` is the last of the run and the next
/// step no longer decreases.
pub fn detect_gripper_transitions(traj: &Trajectory, arm: ArmSide) -> Vec<UnimanualKeypose> {
    let t_len = traj.len();
    let g: Vec<f64> = (0..t_len).map(|t| traj.commanded_gripper(t, arm)).collect();
    let mut out = Vec::new();
    for t in 1..t_len {
        let d = sign_with_tol(g[t] - g[t - 1]);
        if d > 0 {
            let prev = if t >= 2 { sign_with_tol(g[t - 1] - g[t - 2]) } else { 0 };
            if prev <= 0 {
                out.push(UnimanualKeypose { arm, t, rule: HeuristicRule::GripperTransition });
            }
        } else if d < 0 && t + 1 < t_len {
            let next = sign_with_tol(g[t + 1] - g[t]);
            if next >= 0 {
                out.push(UnimanualKeypose { arm, t, rule: HeuristicRule::GripperTransition });
            }
        }
    }
    out
}

/// Per-step joint speed of one arm: Euclidean norm of the forward difference
/// of the commanded joint sub-vector (gripper excluded). Defined for
/// `t in [0, T-1)`.
fn joint_speeds(traj: &Trajectory, arm: ArmSide) -> Vec<f64> {
    let t_len = traj.len();
    (0..t_len.saturating_sub(1))
        .map(|t| {
            let a = traj.commanded_joints(t, arm);
            let b = traj.commanded_joints(t + 1, arm);
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Keyposes at the first step of every maximal run of at least
/// `stall_window` consecutive steps with joint speed below `v_min`.
/// A run starting at t = 0 is reported at t = 1 (keyposes never
/// collide with the start sentinel).
pub fn detect_motion_stalls(
    traj: &Trajectory,
    arm: ArmSide,
    cfg: &HeuristicConfig,
) -> Vec<UnimanualKeypose> {
    let speeds = joint_speeds(traj, arm);
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for t in 0..=speeds.len() {
        let slow = t < speeds.len() && speeds[t] < cfg.v_min;
        match (slow, run_start) {
            (true, None) => run_start = Some(t),
            (false, Some(start)) => {
                if t - start >= cfg.stall_window {
                    out.push(UnimanualKeypose {
                        arm,
                        t: start.max(1),
                        rule: HeuristicRule::MotionStall,
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Forward kinematics callback: maps an arm's joint sub-vector to its
/// end-effector planar position `(x, height-above-table)`.
pub type FkFn<'a> = &'a dyn Fn(ArmSide, &[f64]) -> Result<[f64; 2]>;

/// Spatial keyposes: the first step of every contiguous interval where the
/// inter-gripper distance is below `d_min` (reported on both arms), and the
/// first step of every interval where one arm's end-effector height is below
/// `h_min` (reported on that arm). A detection at t = 0 is reported at t = 1.
pub fn detect_spatial_rules(
    traj: &Trajectory,
    cfg: &HeuristicConfig,
    fk: FkFn,
) -> Result<Vec<UnimanualKeypose>> {
    let t_len = traj.len();
    let mut pos = vec![[[0.0; 2]; 2]; t_len];
    for t in 0..t_len {
        for arm in ArmSide::BOTH {
            pos[t][arm.index()] = fk(arm, traj.commanded_joints(t, arm))?;
        }
    }

    let mut out = Vec::new();

    // inter-gripper distance, rising-edge per interval, fires on both arms
    let mut inside = false;
    for t in 0..t_len {
        let [l, r] = pos[t];
        let d = ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2)).sqrt();
        let sat = d < cfg.d_min;
        if sat && !inside {
            for arm in ArmSide::BOTH {
                out.push(UnimanualKeypose {
                    arm,
                    t: t.max(1),
                    rule: HeuristicRule::Spatial(SpatialRuleKind::InterGripperDistance),
                });
            }
        }
        inside = sat;
    }

    // end-effector height per arm
    for arm in ArmSide::BOTH {
        let mut inside = false;
        for t in 0..t_len {
            let h = pos[t][arm.index()][1];
            let sat = h < cfg.h_min;
            if sat && !inside {
                out.push(UnimanualKeypose {
                    arm,
                    t: t.max(1),
                    rule: HeuristicRule::Spatial(SpatialRuleKind::EndEffectorHeight),
                });
            }
            inside = sat;
        }
    }
    Ok(out)
}

/// Collapses sorted detections so no two survivors on the same arm lie within
/// `merge_window` steps: each cluster is anchored at its earliest member and
/// keeps every rule tag that fired.
fn dedup_arm(mut detections: Vec<UnimanualKeypose>, merge_window: usize) -> Vec<MergedUnimanualKeypose> {
    detections.sort_by_key(|k| k.t);
    let mut out: Vec<MergedUnimanualKeypose> = Vec::new();
    for det in detections {
        match out.last_mut() {
            Some(last) if det.t <= last.t + merge_window => {
                if !last.rules.contains(&det.rule) {
                    last.rules.push(det.rule);
                }
            }
            _ => out.push(MergedUnimanualKeypose {
                arm: det.arm,
                t: det.t,
                rules: vec![det.rule],
            }),
        }
    }
    out
}

/// Runs every detector on both arms and returns per-arm sorted, deduplicated
/// keypose lists, indexed `[left, right]`.
pub fn extract_unimanual_keyposes(
    traj: &Trajectory,
    cfg: &HeuristicConfig,
    fk: FkFn,
) -> Result<[Vec<MergedUnimanualKeypose>; 2]> {
    cfg.validate()?;
    let spatial = detect_spatial_rules(traj, cfg, fk)?;
    let mut per_arm: [Vec<UnimanualKeypose>; 2] = [Vec::new(), Vec::new()];
    for arm in ArmSide::BOTH {
        per_arm[arm.index()].extend(detect_gripper_transitions(traj, arm));
        per_arm[arm.index()].extend(detect_motion_stalls(traj, arm, cfg));
    }
    for det in spatial {
        per_arm[det.arm.index()].push(det);
    }
    let [left, right] = per_arm;
    Ok([
        dedup_arm(left, cfg.merge_window),
        dedup_arm(right, cfg.merge_window),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{Action, Observation};

    /// Builds a 4-dof-per-arm trajectory from per-step commanded vectors.
    fn traj_from_actions(actions: Vec<Vec<f64>>) -> Trajectory {
        let steps = actions
            .into_iter()
            .map(|a| {
                (
                    Observation { proprio: a.clone(), aux: vec![] },
                    Action { target_proprio: a },
                )
            })
            .collect();
        Trajectory { id: "t".into(), dt: 0.02, per_arm_dim: 4, steps }
    }

    /// Left-arm command vector with the given joints and gripper; the right
    /// arm stays parked at zero.
    fn left_cmd(joints: [f64; 3], grip: f64) -> Vec<f64> {
        vec![joints[0], joints[1], joints[2], grip, 0.0, 0.0, 0.0, 1.0]
    }

    fn gripper_trace(values: &[f64]) -> Trajectory {
        traj_from_actions(values.iter().map(|&g| left_cmd([0.0; 3], g)).collect())
    }

    #[test]
    fn close_stop_fires_at_first_constant_step() {
        let traj = gripper_trace(&[0.8, 0.8, 0.4, 0.0, 0.0, 0.0]);
        let kps = detect_gripper_transitions(&traj, ArmSide::Left);
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].t, 3);
        assert_eq!(kps[0].rule, HeuristicRule::GripperTransition);
    }

    #[test]
    fn open_begin_fires_at_first_increasing_step() {
        let traj = gripper_trace(&[0.0, 0.0, 0.5, 1.0]);
        let kps = detect_gripper_transitions(&traj, ArmSide::Left);
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].t, 2);
    }

    #[test]
    fn constant_gripper_fires_nothing() {
        let traj = gripper_trace(&[0.5, 0.5, 0.5]);
        assert!(detect_gripper_transitions(&traj, ArmSide::Left).is_empty());
    }

    #[test]
    fn stall_fires_at_run_start() {
        // forward-difference speeds: [0.5, 0.5, 0.001, 0.001, 0.001, 0.5]
        let mut x = 0.0;
        let deltas = [0.5, 0.5, 0.001, 0.001, 0.001, 0.5];
        let mut actions = vec![left_cmd([x, 0.0, 0.0], 1.0)];
        for d in deltas {
            x += d;
            actions.push(left_cmd([x, 0.0, 0.0], 1.0));
        }
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig { v_min: 0.01, stall_window: 3, ..Default::default() };
        let kps = detect_motion_stalls(&traj, ArmSide::Left, &cfg);
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].t, 2);
    }

    #[test]
    fn no_stall_when_fast() {
        let actions: Vec<Vec<f64>> =
            (0..10).map(|t| left_cmd([t as f64 * 0.5, 0.0, 0.0], 1.0)).collect();
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig::default();
        assert!(detect_motion_stalls(&traj, ArmSide::Left, &cfg).is_empty());
    }

    #[test]
    fn all_zero_motion_fires_once_at_first_valid_index() {
        let actions: Vec<Vec<f64>> = (0..8).map(|_| left_cmd([0.3, 0.1, 0.0], 1.0)).collect();
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig::default();
        let kps = detect_motion_stalls(&traj, ArmSide::Left, &cfg);
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].t, 1);
    }

    /// fk stub: the "end effector" is just (joint0, joint1) so tests can
    /// place it directly.
    fn fk_identity(arm: ArmSide, joints: &[f64]) -> Result<[f64; 2]> {
        let _ = arm;
        Ok([joints[0], joints[1]])
    }

    #[test]
    fn distance_rule_fires_once_per_interval_on_both_arms() {
        // left ee at (x, 0.5), right parked at (0, 0); distance dips below
        // d_min at t = 3 and stays there.
        let mut actions = Vec::new();
        for t in 0..8 {
            let x = if t < 3 { 0.5 } else { 0.01 };
            let mut a = left_cmd([x, 0.0, 0.0], 1.0);
            a[5] = 0.0; // right joint1 -> height 0
            actions.push(a);
        }
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig { h_min: 1e-9, ..Default::default() };
        let kps = detect_spatial_rules(&traj, &cfg, &fk_identity).unwrap();
        let dist: Vec<_> = kps
            .iter()
            .filter(|k| k.rule == HeuristicRule::Spatial(SpatialRuleKind::InterGripperDistance))
            .collect();
        assert_eq!(dist.len(), 2);
        assert!(dist.iter().all(|k| k.t == 3));
        assert_eq!(dist.iter().filter(|k| k.arm == ArmSide::Left).count(), 1);
    }

    #[test]
    fn distance_rule_two_intervals_two_detections() {
        let xs = [0.5, 0.01, 0.5, 0.5, 0.01, 0.01, 0.5];
        let actions: Vec<Vec<f64>> = xs.iter().map(|&x| left_cmd([x, 0.0, 0.0], 1.0)).collect();
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig { h_min: 1e-9, ..Default::default() };
        let kps = detect_spatial_rules(&traj, &cfg, &fk_identity).unwrap();
        let left_hits: Vec<usize> = kps
            .iter()
            .filter(|k| {
                k.arm == ArmSide::Left
                    && k.rule == HeuristicRule::Spatial(SpatialRuleKind::InterGripperDistance)
            })
            .map(|k| k.t)
            .collect();
        assert_eq!(left_hits, vec![1, 4]);
    }

    #[test]
    fn spatial_rule_never_satisfied_is_empty() {
        let actions: Vec<Vec<f64>> =
            (0..6).map(|_| left_cmd([5.0, 5.0, 0.0], 1.0)).collect();
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig { h_min: 1e-9, ..Default::default() };
        // park the right arm far away too
        let mut actions2: Vec<Vec<f64>> = Vec::new();
        for (o, _) in &traj.steps {
            let mut a = o.proprio.clone();
            a[4] = -5.0;
            a[5] = 5.0;
            actions2.push(a);
        }
        let traj = traj_from_actions(actions2);
        assert!(detect_spatial_rules(&traj, &cfg, &fk_identity).unwrap().is_empty());
    }

    #[test]
    fn extraction_merges_within_window_keeping_tags() {
        // close stop at t=10, open begin at t=12 -> merged at t=10
        let mut grips = vec![1.0; 20];
        for g in grips.iter_mut().take(11).skip(9) {
            *g = 0.0;
        }
        grips[9] = 0.5;
        grips[10] = 0.0;
        grips[11] = 0.0;
        // values: t8=1.0, t9=0.5, t10=0.0, t11=0.0, t12=1.0 -> close stop at 10,
        // open begin at 12
        let mut actions = Vec::new();
        for (t, g) in grips.iter().enumerate() {
            // keep joints moving so no stall fires
            actions.push(left_cmd([t as f64 * 0.3, 5.0, 0.0], *g));
        }
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig { merge_window: 3, h_min: 1e-9, d_min: 1e-9, ..Default::default() };
        let [left, _right] = extract_unimanual_keyposes(&traj, &cfg, &fk_identity).unwrap();
        assert_eq!(left.len(), 1);
        assert_eq!(left[0].t, 10);
        assert_eq!(left[0].rules, vec![HeuristicRule::GripperTransition]);
    }

    #[test]
    fn extraction_keeps_disjoint_detections() {
        let mut grips = vec![1.0; 60];
        grips[10] = 0.0; // close at 10 (stays closed)
        for g in grips.iter_mut().skip(11) {
            *g = 0.0;
        }
        for g in grips.iter_mut().skip(50) {
            *g = 1.0; // open at 50
        }
        let mut actions = Vec::new();
        for (t, g) in grips.iter().enumerate() {
            actions.push(left_cmd([t as f64 * 0.3, 5.0, 0.0], *g));
        }
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig { h_min: 1e-9, d_min: 1e-9, ..Default::default() };
        let [left, right] = extract_unimanual_keyposes(&traj, &cfg, &fk_identity).unwrap();
        let ts: Vec<usize> = left.iter().map(|k| k.t).collect();
        assert_eq!(ts, vec![10, 50]);
        // right arm is parked: a single stall keypose at t=1
        assert_eq!(right.len(), 1);
        assert_eq!(right[0].t, 1);
    }

    #[test]
    fn empty_detectors_give_empty_lists() {
        // both arms in constant fast motion, grippers flat, far apart, high up
        let actions: Vec<Vec<f64>> = (0..10)
            .map(|t| {
                vec![
                    -5.0 + t as f64 * 0.5,
                    5.0,
                    0.0,
                    1.0,
                    5.0 + t as f64 * 0.5,
                    5.0,
                    0.0,
                    1.0,
                ]
            })
            .collect();
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig::default();
        let [left, right] = extract_unimanual_keyposes(&traj, &cfg, &fk_identity).unwrap();
        assert!(left.is_empty());
        assert!(right.is_empty());
    }

    #[test]
    fn determinism_same_input_same_output() {
        let actions: Vec<Vec<f64>> = (0..40)
            .map(|t| left_cmd([(t as f64 * 0.37).sin(), 2.0, 0.0], if t > 20 { 0.0 } else { 1.0 }))
            .collect();
        let traj = traj_from_actions(actions);
        let cfg = HeuristicConfig::default();
        let a = extract_unimanual_keyposes(&traj, &cfg, &fk_identity).unwrap();
        let b = extract_unimanual_keyposes(&traj, &cfg, &fk_identity).unwrap();
        assert_eq!(a, b);
    }

    // -----------------------------------------------------------------
    // Brute-force oracle: re-derive every detector from its definition.
    // -----------------------------------------------------------------

    fn oracle_gripper(traj: &Trajectory, arm: ArmSide) -> Vec<usize> {
        let g: Vec<f64> = (0..traj.len()).map(|t| traj.commanded_gripper(t, arm)).collect();
        let mut hits = Vec::new();
        for t in 1..g.len() {
            let up = g[t] - g[t - 1] > FLAT_TOL;
            let down = g[t] - g[t - 1] < -FLAT_TOL;
            if up {
                let prev_up = t >= 2 && g[t - 1] - g[t - 2] > FLAT_TOL;
                if !prev_up {
                    hits.push(t);
                }
            }
            if down && t + 1 < g.len() && g[t + 1] - g[t] >= -FLAT_TOL {
                hits.push(t);
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits
    }

    fn oracle_stalls(traj: &Trajectory, arm: ArmSide, cfg: &HeuristicConfig) -> Vec<usize> {
        let speeds = joint_speeds(traj, arm);
        let mut hits = Vec::new();
        let mut t = 0;
        while t < speeds.len() {
            if speeds[t] < cfg.v_min {
                let start = t;
                while t < speeds.len() && speeds[t] < cfg.v_min {
                    t += 1;
                }
                if t - start >= cfg.stall_window {
                    hits.push(start.max(1));
                }
            } else {
                t += 1;
            }
        }
        hits
    }

    proptest::proptest! {
        #[test]
        fn detectors_match_bruteforce_oracle(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t_len = rng.gen_range(5..50);
            let mut actions = Vec::new();
            let mut joints = [0.0f64; 3];
            let mut grip: f64 = 1.0;
            for _ in 0..t_len {
                if rng.gen_bool(0.3) {
                    let d: f64 = rng.gen_range(-0.3..0.3);
                    joints[rng.gen_range(0..3)] += d;
                }
                if rng.gen_bool(0.2) {
                    grip = (grip + rng.gen_range(-0.7..0.7f64)).clamp(0.0, 1.0);
                }
                actions.push(left_cmd(joints, grip));
            }
            let traj = traj_from_actions(actions);
            let cfg = HeuristicConfig::default();

            let got: Vec<usize> = detect_gripper_transitions(&traj, ArmSide::Left)
                .into_iter().map(|k| k.t).collect();
            proptest::prop_assert_eq!(got, oracle_gripper(&traj, ArmSide::Left));

            let got: Vec<usize> = detect_motion_stalls(&traj, ArmSide::Left, &cfg)
                .into_iter().map(|k| k.t).collect();
            proptest::prop_assert_eq!(got, oracle_stalls(&traj, ArmSide::Left, &cfg));
        }

        #[test]
        fn dedup_output_strictly_increasing_and_spaced(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dets: Vec<UnimanualKeypose> = (0..rng.gen_range(0..30))
                .map(|_| UnimanualKeypose {
                    arm: ArmSide::Left,
                    t: rng.gen_range(1..80),
                    rule: HeuristicRule::MotionStall,
                })
                .collect();
            let window = rng.gen_range(0..8usize);
            let merged = dedup_arm(dets, window);
            for w in merged.windows(2) {
                proptest::prop_assert!(w[1].t > w[0].t + window);
            }
        }
    }

    #[test]
    fn rule_locality_tail_perturbation() {
        // perturbing steps > t does not change detections at steps <= t - stall_window
        let base: Vec<Vec<f64>> = (0..40)
            .map(|t| left_cmd([(t as f64 * 0.41).sin(), 2.0, 0.0], if t >= 15 && t < 30 { 0.0 } else { 1.0 }))
            .collect();
        let mut perturbed = base.clone();
        for a in perturbed.iter_mut().skip(25) {
            a[0] += 3.0;
            a[3] = 0.7;
        }
        let cfg = HeuristicConfig::default();
        let t_cut = 25 - cfg.stall_window;
        let tr_a = traj_from_actions(base);
        let tr_b = traj_from_actions(perturbed);
        for traj_pair in [(tr_a, tr_b)] {
            let ka: Vec<_> = detect_gripper_transitions(&traj_pair.0, ArmSide::Left)
                .into_iter()
                .chain(detect_motion_stalls(&traj_pair.0, ArmSide::Left, &cfg))
                .filter(|k| k.t <= t_cut)
                .collect();
            let kb: Vec<_> = detect_gripper_transitions(&traj_pair.1, ArmSide::Left)
                .into_iter()
                .chain(detect_motion_stalls(&traj_pair.1, ArmSide::Left, &cfg))
                .filter(|k| k.t <= t_cut)
                .collect();
            assert_eq!(ka, kb);
        }
    }
}
