//! Task definitions, stage checking, and the closed-loop environment.

use serde::{Deserialize, Serialize};

use crate::demo::{ArmSide, Observation};
use crate::error::{Error, Result};
use crate::sim::ik::solve_ik;
use crate::sim::world::{step, Holder, Rect, SimObject, WorldConfig, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Right arm picks a cube, hands it over to the left arm mid-air, the
    /// left arm places it in a goal region on its side.
    PlanarTransfer,
    /// Each arm picks its own object and lifts it; the pick order alternates
    /// across demonstrations.
    DualPick,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "planar_transfer" => Ok(TaskKind::PlanarTransfer),
            "dual_pick" => Ok(TaskKind::DualPick),
            other => Err(Error::validation(format!("unknown task {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::PlanarTransfer => "planar_transfer",
            TaskKind::DualPick => "dual_pick",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub stage_names: Vec<String>,
    pub max_steps: usize,
    /// Goal region for placement tasks.
    pub goal_region: Rect,
    /// Height above which an object counts as lifted.
    pub lift_height: f64,
    pub objects: Vec<String>,
    pub surfaces: Vec<String>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        match kind {
            TaskKind::PlanarTransfer => TaskSpec {
                kind,
                stage_names: vec!["to_grasp".into(), "lifting".into(), "transferring".into()],
                max_steps: 600,
                goal_region: Rect { x: [-0.42, -0.18], y: [0.0, 0.03] },
                lift_height: 0.1,
                objects: vec!["cube".into()],
                surfaces: vec!["table".into()],
            },
            TaskKind::DualPick => TaskSpec {
                kind,
                stage_names: vec!["first_grasp".into(), "second_grasp".into(), "lifted".into()],
                max_steps: 500,
                goal_region: Rect { x: [-1.0, 1.0], y: [0.0, 1.0] },
                lift_height: 0.1,
                objects: vec!["obj_a".into(), "obj_b".into()],
                surfaces: vec!["table".into()],
            },
        }
    }

    pub fn stage_count(&self) -> usize {
        self.stage_names.len()
    }

    /// Whether stage `idx` is satisfied by the given state.
    pub fn stage_satisfied(&self, idx: usize, state: &WorldState) -> bool {
        match self.kind {
            TaskKind::PlanarTransfer => {
                let cube = match state.object("cube") {
                    Some(o) => o,
                    None => return false,
                };
                match idx {
                    0 => cube.holder == Holder::Arm(ArmSide::Right),
                    1 => cube.holder == Holder::Arm(ArmSide::Right) && cube.pos[1] > self.lift_height,
                    2 => cube.holder == Holder::Table && self.goal_region.contains(cube.pos),
                    _ => false,
                }
            }
            TaskKind::DualPick => {
                let held: Vec<bool> = self
                    .objects
                    .iter()
                    .map(|n| {
                        state
                            .object(n)
                            .map(|o| matches!(o.holder, Holder::Arm(_)))
                            .unwrap_or(false)
                    })
                    .collect();
                let lifted: Vec<bool> = self
                    .objects
                    .iter()
                    .map(|n| {
                        state
                            .object(n)
                            .map(|o| {
                                matches!(o.holder, Holder::Arm(_)) && o.pos[1] > self.lift_height
                            })
                            .unwrap_or(false)
                    })
                    .collect();
                match idx {
                    0 => held.iter().any(|&h| h),
                    1 => held.iter().all(|&h| h),
                    2 => lifted.iter().all(|&l| l),
                    _ => false,
                }
            }
        }
    }
}

/// Per-rollout stage outcome under the attempts-gated rule: a stage counts
/// as attempted only once every earlier stage has been satisfied, scanning
/// the state sequence forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub attempted: Vec<bool>,
    pub satisfied: Vec<bool>,
    pub success: bool,
}

pub fn check_stages(task: &TaskSpec, states: &[WorldState]) -> StageOutcome {
    let n = task.stage_count();
    let mut attempted = vec![false; n];
    let mut satisfied = vec![false; n];
    let mut from = 0usize;
    for idx in 0..n {
        attempted[idx] = true;
        let hit = states[from..].iter().position(|s| task.stage_satisfied(idx, s));
        match hit {
            Some(offset) => {
                satisfied[idx] = true;
                from += offset;
            }
            None => {
                // later stages were never attempted
                break;
            }
        }
    }
    let success = satisfied.iter().all(|&s| s);
    StageOutcome { attempted, satisfied, success }
}

/// Aggregates rollout outcomes into stagewise success rates: the denominator
/// of stage j is the count of rollouts that passed stage j-1.
pub fn stagewise_rates(outcomes: &[StageOutcome]) -> Vec<(usize, usize, f64)> {
    if outcomes.is_empty() {
        return Vec::new();
    }
    let n_stages = outcomes[0].satisfied.len();
    let mut rates = Vec::with_capacity(n_stages);
    let mut attempts = outcomes.len();
    for j in 0..n_stages {
        let successes = outcomes.iter().filter(|o| o.satisfied[..=j].iter().all(|&s| s)).count();
        let rate = if attempts == 0 { 0.0 } else { successes as f64 / attempts as f64 };
        rates.push((successes, attempts, rate));
        attempts = successes;
    }
    rates
}

/// Fixed home end-effector targets shared by the environment and the expert.
pub fn home_targets() -> [[f64; 2]; 2] {
    [[-0.3, 0.22], [0.3, 0.22]]
}

/// IK seeds that put each arm's elbow in a consistent configuration.
pub fn home_seeds() -> [[f64; 3]; 2] {
    [[0.9, -0.5, -0.3], [std::f64::consts::PI - 0.9, 0.5, 0.3]]
}

pub fn home_joints(cfg: &WorldConfig) -> Result<[[f64; 3]; 2]> {
    let targets = home_targets();
    let seeds = home_seeds();
    let left = solve_ik(targets[0], cfg.left_base, &cfg.link_lengths, seeds[0])?;
    let right = solve_ik(targets[1], cfg.right_base, &cfg.link_lengths, seeds[1])?;
    Ok([left, right])
}

/// The closed-loop environment: deterministic given its reset rng.
#[derive(Clone, Debug)]
pub struct PlanarEnv {
    pub cfg: WorldConfig,
    pub task: TaskSpec,
    pub state: WorldState,
    pub t: usize,
    stages_done: Vec<bool>,
}

impl PlanarEnv {
    pub fn new(cfg: WorldConfig, task: TaskSpec) -> Result<Self> {
        cfg.validate()?;
        let state = WorldState { joints: home_joints(&cfg)?, grippers: [1.0, 1.0], objects: vec![] };
        let n = task.stage_count();
        Ok(PlanarEnv { cfg, task, state, t: 0, stages_done: vec![false; n] })
    }

    /// Spawns objects and rehomes the arms. Returns the first observation.
    pub fn reset(&mut self, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Observation> {
        self.t = 0;
        self.stages_done = vec![false; self.task.stage_count()];
        self.state.joints = home_joints(&self.cfg)?;
        self.state.grippers = [1.0, 1.0];
        self.state.objects = match self.task.kind {
            TaskKind::PlanarTransfer => {
                let pos = self.cfg.spawn_region.sample(rng);
                vec![SimObject { name: "cube".into(), pos, holder: Holder::Table }]
            }
            TaskKind::DualPick => {
                let right = self.cfg.spawn_region.sample(rng);
                let left_region = Rect {
                    x: [-self.cfg.spawn_region.x[1], -self.cfg.spawn_region.x[0]],
                    y: self.cfg.spawn_region.y,
                };
                let left = left_region.sample(rng);
                vec![
                    SimObject { name: "obj_a".into(), pos: left, holder: Holder::Table },
                    SimObject { name: "obj_b".into(), pos: right, holder: Holder::Table },
                ]
            }
        };
        Ok(self.state.observation())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Observation> {
        self.state = step(&self.state, action, &self.cfg)?;
        self.t += 1;
        // stages unlock strictly in order
        for idx in 0..self.task.stage_count() {
            if !self.stages_done[idx] {
                if self.task.stage_satisfied(idx, &self.state) {
                    self.stages_done[idx] = true;
                } else {
                    break;
                }
            }
        }
        Ok(self.state.observation())
    }

    pub fn success(&self) -> bool {
        self.stages_done.iter().all(|&d| d)
    }

    pub fn stages_done(&self) -> &[bool] {
        &self.stages_done
    }

    pub fn proprio_dim(&self) -> usize {
        8
    }

    pub fn aux_dim(&self) -> usize {
        2 * self.task.objects.len()
    }
}
