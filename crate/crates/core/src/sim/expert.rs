//! Scripted experts that generate demonstrations with ground-truth keypose
//! annotations and contact events.
//!
//! Each demonstration is a fixed dance: segments in which both arms move
//! from their current configurations to new ones, arriving together at the
//! segment boundary. The shorter path idles first (delay, then constant-
//! speed joint interpolation), so arrival instants coincide and keypose
//! heuristics fire exactly at boundaries. Gripper changes ramp over a few
//! steps at segment starts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::contact::{ContactEvent, ContactGraph, ContactRecord};
use crate::demo::{Action, ArmSide, BimanualKeypose, KeyposeAnnotation, Observation, Trajectory};
use crate::error::{Error, Result};
use crate::sim::ik::solve_ik;
use crate::sim::task::{home_joints, PlanarEnv, TaskKind, TaskSpec};
use crate::sim::world::{contact_events_between, WorldConfig};

/// Constant joint-space speed of scripted motion (L2 rad/step); below the
/// rate limit and above the stall threshold.
const V_MOVE: f64 = 0.024;
/// Gripper close command ramp.
const RAMP_CLOSE: [f64; 3] = [0.4, 0.02, 0.0];
/// Gripper open command ramp.
const RAMP_OPEN: [f64; 3] = [0.6, 0.98, 1.0];

#[derive(Clone, Copy, Debug, PartialEq)]
enum GripOp {
    Close,
    Open,
}

impl GripOp {
    fn ramp(self) -> &'static [f64; 3] {
        match self {
            GripOp::Close => &RAMP_CLOSE,
            GripOp::Open => &RAMP_OPEN,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct ArmSeg {
    grip: Option<GripOp>,
    /// Steps to hold before the gripper ramp begins.
    grip_delay: usize,
    /// Cartesian waypoints visited in order.
    waypoints: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
struct SegPlan {
    arms: [ArmSeg; 2],
    min_steps: usize,
    /// Declare a ground-truth keypose (with this mode) at the segment's
    /// final step.
    keypose_mode: Option<bool>,
}

/// A demonstration plus its ground truth.
#[derive(Clone, Debug)]
pub struct ExpertDemo {
    pub trajectory: Trajectory,
    pub annotation: KeyposeAnnotation,
    pub initial_graph: ContactGraph,
    pub events: Vec<ContactEvent>,
    /// Which arm acted first (dual-pick modality).
    pub first_arm: Option<ArmSide>,
}

impl ExpertDemo {
    pub fn contact_record(&self, cfg: &WorldConfig) -> ContactRecord {
        ContactRecord::from_parts(
            &self.initial_graph,
            &self.events,
            cfg.control_rate_hz(),
            cfg.control_rate_hz(),
        )
    }
}

/// Joint-space interpolation steps from `from` to `to` at V_MOVE.
fn interp_leg(from: [f64; 3], to: [f64; 3]) -> Vec<[f64; 3]> {
    let dist: f64 = from
        .iter()
        .zip(&to)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let n = (dist / V_MOVE).ceil().max(1.0) as usize;
    (1..=n)
        .map(|j| {
            let f = j as f64 / n as f64;
            [
                from[0] + f * (to[0] - from[0]),
                from[1] + f * (to[1] - from[1]),
                from[2] + f * (to[2] - from[2]),
            ]
        })
        .collect()
}

struct CompiledArm {
    /// Per-step (joints, gripper) commands for one segment.
    steps: Vec<([f64; 3], f64)>,
}

fn compile_arm(
    seg: &ArmSeg,
    arm: ArmSide,
    cfg: &WorldConfig,
    joints: &mut [f64; 3],
    grip: &mut f64,
    n_total: usize,
) -> Result<CompiledArm> {
    let mut steps: Vec<([f64; 3], f64)> = Vec::with_capacity(n_total);
    let hold = *joints;
    for _ in 0..seg.grip_delay {
        steps.push((hold, *grip));
    }
    if let Some(op) = seg.grip {
        for &g in op.ramp() {
            steps.push((hold, g));
        }
        *grip = op.ramp()[2];
    }
    // interpolate through waypoints
    let mut path: Vec<[f64; 3]> = Vec::new();
    let mut cur = *joints;
    for wp in &seg.waypoints {
        let solved = solve_ik(*wp, cfg.base(arm), &cfg.link_lengths, cur)?;
        path.extend(interp_leg(cur, solved));
        cur = solved;
    }
    // pacing: idle between ramp and motion so the move ends at n_total
    let used = steps.len() + path.len();
    if used > n_total {
        return Err(Error::validation(format!(
            "segment overflow: arm {arm} needs {used} steps, segment has {n_total}"
        )));
    }
    for _ in 0..n_total - used {
        steps.push((*joints, *grip));
    }
    for p in path {
        steps.push((p, *grip));
    }
    *joints = cur;
    Ok(CompiledArm { steps })
}

fn arm_steps_needed(
    seg: &ArmSeg,
    arm: ArmSide,
    cfg: &WorldConfig,
    joints: [f64; 3],
) -> Result<usize> {
    let mut n = seg.grip_delay + if seg.grip.is_some() { 3 } else { 0 };
    let mut cur = joints;
    for wp in &seg.waypoints {
        let solved = solve_ik(*wp, cfg.base(arm), &cfg.link_lengths, cur)?;
        n += interp_leg(cur, solved).len();
        cur = solved;
    }
    Ok(n)
}

/// Compiles segment plans into an action list plus ground-truth keypose
/// boundary indices.
fn compile(
    plans: &[SegPlan],
    cfg: &WorldConfig,
    init_joints: [[f64; 3]; 2],
) -> Result<(Vec<Vec<f64>>, Vec<(usize, bool)>)> {
    let mut joints = init_joints;
    let mut grips = [1.0f64, 1.0];
    let mut actions: Vec<Vec<f64>> = Vec::new();
    let mut keyposes: Vec<(usize, bool)> = Vec::new();
    for plan in plans {
        let n = ArmSide::BOTH
            .iter()
            .map(|&a| arm_steps_needed(&plan.arms[a.index()], a, cfg, joints[a.index()]))
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .max()
            .unwrap()
            .max(plan.min_steps)
            .max(1);
        let left = compile_arm(
            &plan.arms[0],
            ArmSide::Left,
            cfg,
            &mut joints[0],
            &mut grips[0],
            n,
        )?;
        let right = compile_arm(
            &plan.arms[1],
            ArmSide::Right,
            cfg,
            &mut joints[1],
            &mut grips[1],
            n,
        )?;
        for (l, r) in left.steps.iter().zip(&right.steps) {
            let mut a = Vec::with_capacity(8);
            a.extend_from_slice(&l.0);
            a.push(l.1);
            a.extend_from_slice(&r.0);
            a.push(r.1);
            actions.push(a);
        }
        if let Some(mode) = plan.keypose_mode {
            keyposes.push((actions.len() - 1, mode));
        }
    }
    Ok((actions, keyposes))
}

/// Randomized script parameters for one transfer demonstration.
struct TransferScript {
    handover_y: f64,
    place_x: f64,
}

fn transfer_plans(cube: [f64; 2], script: &TransferScript) -> Vec<SegPlan> {
    let cx = cube[0];
    let hy = script.handover_y;
    let px = script.place_x;
    vec![
        // approach: right to the cube, left to a staging point
        SegPlan {
            arms: [
                ArmSeg {
                    waypoints: vec![[-0.26, 0.14], [-0.16, 0.18]],
                    ..Default::default()
                },
                ArmSeg {
                    waypoints: vec![[cx, 0.12], [cx, 0.025]],
                    ..Default::default()
                },
            ],
            min_steps: 0,
            keypose_mode: Some(false),
        },
        // grasp, lift, and carry to the handover point; left meets it there
        SegPlan {
            arms: [
                ArmSeg { waypoints: vec![[-0.1, hy], [0.0, hy]], ..Default::default() },
                ArmSeg {
                    grip: Some(GripOp::Close),
                    waypoints: vec![[cx, hy], [cx * 0.5, hy + 0.04], [0.0, hy]],
                    ..Default::default()
                },
            ],
            min_steps: 0,
            keypose_mode: Some(true),
        },
        // exchange: left closes, then right opens (both-hold in between)
        SegPlan {
            arms: [
                ArmSeg { grip: Some(GripOp::Close), ..Default::default() },
                ArmSeg { grip: Some(GripOp::Open), grip_delay: 3, ..Default::default() },
            ],
            min_steps: 6,
            keypose_mode: None,
        },
        // transport to the goal and descend; right retreats
        SegPlan {
            arms: [
                ArmSeg {
                    waypoints: vec![[px * 0.5, hy + 0.02], [px, 0.12], [px, 0.025]],
                    ..Default::default()
                },
                ArmSeg { waypoints: vec![[0.2, 0.12], [0.28, 0.18]], ..Default::default() },
            ],
            min_steps: 0,
            keypose_mode: Some(false),
        },
        // release and retract
        SegPlan {
            arms: [
                ArmSeg {
                    grip: Some(GripOp::Open),
                    waypoints: vec![[px, 0.12]],
                    ..Default::default()
                },
                ArmSeg { waypoints: vec![[0.3, 0.22]], ..Default::default() },
            ],
            min_steps: 0,
            keypose_mode: None,
        },
    ]
}

fn dual_pick_plans(first: ArmSide, obj_first: [f64; 2], obj_second: [f64; 2]) -> Vec<SegPlan> {
    let mk_pick_approach = |p: [f64; 2]| ArmSeg {
        waypoints: vec![[p[0], 0.10], [p[0], 0.025]],
        ..Default::default()
    };
    let staging = |p: [f64; 2]| ArmSeg {
        waypoints: vec![[p[0] * 0.75, 0.16]],
        ..Default::default()
    };
    let fi = first.index();
    let si = first.other().index();
    let mut seg1_arms: [ArmSeg; 2] = [ArmSeg::default(), ArmSeg::default()];
    seg1_arms[fi] = mk_pick_approach(obj_first);
    seg1_arms[si] = staging(obj_second);
    let mut seg2_arms: [ArmSeg; 2] = [ArmSeg::default(), ArmSeg::default()];
    seg2_arms[fi] = ArmSeg {
        grip: Some(GripOp::Close),
        waypoints: vec![[obj_first[0], 0.16]],
        ..Default::default()
    };
    seg2_arms[si] = mk_pick_approach(obj_second);
    let mut seg3_arms: [ArmSeg; 2] = [ArmSeg::default(), ArmSeg::default()];
    seg3_arms[fi] = ArmSeg { waypoints: vec![[obj_first[0], 0.22]], ..Default::default() };
    seg3_arms[si] = ArmSeg {
        grip: Some(GripOp::Close),
        waypoints: vec![[obj_second[0], 0.16]],
        ..Default::default()
    };
    vec![
        SegPlan { arms: seg1_arms, min_steps: 0, keypose_mode: Some(false) },
        SegPlan { arms: seg2_arms, min_steps: 0, keypose_mode: Some(false) },
        SegPlan { arms: seg3_arms, min_steps: 0, keypose_mode: None },
    ]
}

/// Script randomization ranges, exposed so tests and configs can pin them.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub handover_y: [f64; 2],
    pub place_x: [f64; 2],
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig { handover_y: [0.14, 0.24], place_x: [-0.38, -0.22] }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

/// Generates one demonstration by planning and executing the task script.
/// Fails (for the caller to resample) if kinematics reject the spawn or the
/// rollout does not reach task success.
pub fn scripted_expert(
    task: &TaskSpec,
    cfg: &WorldConfig,
    expert_cfg: &ExpertConfig,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<ExpertDemo> {
    let mut env = PlanarEnv::new(cfg.clone(), task.clone())?;
    let first_obs = env.reset(rng)?;

    let (plans, first_arm) = match task.kind {
        TaskKind::PlanarTransfer => {
            let cube = env.state.object("cube").unwrap().pos;
            let script = TransferScript {
                handover_y: sample_range(rng, expert_cfg.handover_y),
                place_x: sample_range(rng, expert_cfg.place_x),
            };
            (transfer_plans(cube, &script), None)
        }
        TaskKind::DualPick => {
            let first = if rng.gen_bool(0.5) { ArmSide::Left } else { ArmSide::Right };
            let a = env.state.object("obj_a").unwrap().pos;
            let b = env.state.object("obj_b").unwrap().pos;
            let (obj_first, obj_second) = match first {
                ArmSide::Left => (a, b),
                ArmSide::Right => (b, a),
            };
            (dual_pick_plans(first, obj_first, obj_second), Some(first))
        }
    };

    let (actions, gt_keyposes) = compile(&plans, cfg, home_joints(cfg)?)?;

    // execute, recording observations and contact changes
    let initial_graph = env.state.contact_graph(cfg);
    let mut prev_contacts = env.state.contact_edges(cfg);
    let mut events: Vec<ContactEvent> = Vec::new();
    let mut steps: Vec<(Observation, Action)> = Vec::new();
    let mut obs = first_obs;
    for (t, action) in actions.iter().enumerate() {
        steps.push((obs.clone(), Action { target_proprio: action.clone() }));
        obs = env.step(action)?;
        let contacts = env.state.contact_edges(cfg);
        events.extend(contact_events_between(&prev_contacts, &contacts, t as u64));
        prev_contacts = contacts;
    }
    if !env.success() {
        return Err(Error::validation(format!(
            "scripted rollout failed stages {:?}",
            env.stages_done()
        )));
    }

    let trajectory = Trajectory {
        id: id.to_string(),
        dt: cfg.dt,
        per_arm_dim: 4,
        steps,
    };
    let interior = gt_keyposes
        .into_iter()
        .map(|(t, mode)| BimanualKeypose::at(&trajectory, t, mode))
        .collect::<Result<Vec<_>>>()?;
    let annotation = KeyposeAnnotation::with_sentinels(&trajectory, interior)?;

    Ok(ExpertDemo { trajectory, annotation, initial_graph, events, first_arm })
}

/// Generates `count` demonstrations, resampling spawns on kinematic
/// rejections (up to a bounded number of retries).
pub fn generate_demos(
    task: &TaskSpec,
    cfg: &WorldConfig,
    expert_cfg: &ExpertConfig,
    prefix: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<ExpertDemo>> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(count);
    let mut rejected = 0usize;
    while demos.len() < count {
        let id = format!("{prefix}_{:04}", demos.len());
        match scripted_expert(task, cfg, expert_cfg, &id, &mut rng) {
            Ok(demo) => demos.push(demo),
            Err(e) => {
                rejected += 1;
                if rejected > count * 3 + 10 {
                    return Err(Error::validation(format!(
                        "expert rejected too many spawns: last error {e}"
                    )));
                }
            }
        }
    }
    Ok(demos)
}
