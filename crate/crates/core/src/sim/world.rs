//! A deterministic planar two-arm kinematic world.
//!
//! Both arms are 3-link chains rooted on a tabletop line at y = 0; the state
//! is purely kinematic (joints track commanded targets under a rate limit,
//! grippers snap). Objects attach to an arm when its gripper closes within
//! the grasp radius, transfer when the other arm closes on a held object,
//! and stay where released.

use serde::{Deserialize, Serialize};

use crate::contact::{arm_node, ContactEvent, ContactGraph, Edge, EventOp};
use crate::demo::{ArmSide, Observation};
use crate::error::{Error, Result};

/// Axis-aligned rectangle, degenerate ranges allowed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }

    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> [f64; 2] {
        use rand::Rng;
        let x = if self.x[0] == self.x[1] { self.x[0] } else { rng.gen_range(self.x[0]..self.x[1]) };
        let y = if self.y[0] == self.y[1] { self.y[0] } else { rng.gen_range(self.y[0]..self.y[1]) };
        [x, y]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub left_base: [f64; 2],
    pub right_base: [f64; 2],
    pub link_lengths: [f64; 3],
    pub grasp_radius: f64,
    pub table_y: f64,
    /// Control period in seconds.
    pub dt: f64,
    /// Per-joint rate limit, rad per step.
    pub omega_max: f64,
    /// Default object spawn region (tasks may mirror it for the left arm).
    pub spawn_region: Rect,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            left_base: [-0.5, 0.0],
            right_base: [0.5, 0.0],
            link_lengths: [0.25, 0.2, 0.15],
            grasp_radius: 0.03,
            table_y: 0.0,
            dt: 0.02,
            omega_max: 0.15,
            spawn_region: Rect { x: [0.22, 0.38], y: [0.0, 0.0] },
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|&l| l <= 0.0) || self.grasp_radius <= 0.0 {
            return Err(Error::validation("link lengths and grasp radius must be positive"));
        }
        if self.dt <= 0.0 || self.omega_max <= 0.0 {
            return Err(Error::validation("dt and omega_max must be positive"));
        }
        let reach: f64 = self.link_lengths.iter().sum();
        for corner in [
            [self.spawn_region.x[0], self.spawn_region.y[0]],
            [self.spawn_region.x[1], self.spawn_region.y[1]],
        ] {
            let d = dist(corner, self.right_base);
            if d > reach {
                return Err(Error::validation(format!(
                    "spawn corner ({}, {}) outside arm reach {reach}",
                    corner[0], corner[1]
                )));
            }
        }
        Ok(())
    }

    pub fn base(&self, arm: ArmSide) -> [f64; 2] {
        match arm {
            ArmSide::Left => self.left_base,
            ArmSide::Right => self.right_base,
        }
    }

    pub fn control_rate_hz(&self) -> f64 {
        1.0 / self.dt
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Planar chain forward kinematics: p = base + sum_i L_i (cos Theta_i,
/// sin Theta_i) with cumulative angles.
pub fn fk(joints: &[f64], base: [f64; 2], link_lengths: &[f64; 3]) -> [f64; 2] {
    let mut p = base;
    let mut theta = 0.0;
    for (q, l) in joints.iter().zip(link_lengths) {
        theta += q;
        p[0] += l * theta.cos();
        p[1] += l * theta.sin();
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Holder {
    Table,
    Arm(ArmSide),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimObject {
    pub name: String,
    pub pos: [f64; 2],
    pub holder: Holder,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldState {
    /// Joint angles per arm, `[left, right]`.
    pub joints: [[f64; 3]; 2],
    /// Gripper openness per arm in [0, 1], 1 = open.
    pub grippers: [f64; 2],
    pub objects: Vec<SimObject>,
}

/// Objects resting at or below this height touch the table. Sits above
/// the grasp hover height so a just-placed object still counts as resting.
pub const TABLE_CONTACT_EPS: f64 = 0.028;

impl WorldState {
    pub fn ee(&self, arm: ArmSide, cfg: &WorldConfig) -> [f64; 2] {
        fk(&self.joints[arm.index()], cfg.base(arm), &cfg.link_lengths)
    }

    pub fn object(&self, name: &str) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Bimanual proprio vector `[left joints, left grip, right joints, right grip]`.
    pub fn proprio(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(8);
        for arm in ArmSide::BOTH {
            q.extend_from_slice(&self.joints[arm.index()]);
            q.push(self.grippers[arm.index()]);
        }
        q
    }

    pub fn observation(&self) -> Observation {
        let aux = self.objects.iter().flat_map(|o| o.pos).collect();
        Observation { proprio: self.proprio(), aux }
    }

    /// The current physical contact edges: arms on the table always; an arm
    /// touches an object while its gripper is closed within the grasp
    /// radius; objects touch the table at table height.
    pub fn contact_edges(&self, cfg: &WorldConfig) -> std::collections::BTreeSet<Edge> {
        let mut edges = std::collections::BTreeSet::new();
        edges.insert(Edge::new(arm_node(ArmSide::Left), "table"));
        edges.insert(Edge::new(arm_node(ArmSide::Right), "table"));
        for obj in &self.objects {
            if obj.pos[1] - cfg.table_y <= TABLE_CONTACT_EPS {
                edges.insert(Edge::new(obj.name.clone(), "table"));
            }
            for arm in ArmSide::BOTH {
                let closed = self.grippers[arm.index()] < 0.5;
                if closed && dist(self.ee(arm, cfg), obj.pos) <= cfg.grasp_radius {
                    edges.insert(Edge::new(arm_node(arm), obj.name.clone()));
                }
            }
        }
        edges
    }

    pub fn contact_graph(&self, cfg: &WorldConfig) -> ContactGraph {
        let mut nodes: std::collections::BTreeSet<String> = self
            .objects
            .iter()
            .map(|o| o.name.clone())
            .collect();
        nodes.insert(arm_node(ArmSide::Left).to_string());
        nodes.insert(arm_node(ArmSide::Right).to_string());
        nodes.insert("table".to_string());
        ContactGraph { nodes, edges: self.contact_edges(cfg) }
    }
}

/// Advances the world by one control step.
pub fn step(state: &WorldState, action: &[f64], cfg: &WorldConfig) -> Result<WorldState> {
    if action.len() != 8 {
        return Err(Error::dim(format!("action must have dim 8, got {}", action.len())));
    }
    let mut next = state.clone();
    for arm in ArmSide::BOTH {
        let ai = arm.index();
        for j in 0..3 {
            let target = action[ai * 4 + j];
            let delta = (target - next.joints[ai][j]).clamp(-cfg.omega_max, cfg.omega_max);
            next.joints[ai][j] += delta;
        }
        next.grippers[ai] = action[ai * 4 + 3].clamp(0.0, 1.0);
    }

    // held objects ride their holder's end effector
    let ee = [next.ee(ArmSide::Left, cfg), next.ee(ArmSide::Right, cfg)];
    for obj in next.objects.iter_mut() {
        if let Holder::Arm(arm) = obj.holder {
            obj.pos = ee[arm.index()];
        }
    }

    // releases first, then grasps (a release and a grasp in the same step
    // hand the object over cleanly)
    for arm in ArmSide::BOTH {
        let ai = arm.index();
        let opened = state.grippers[ai] < 0.5 && next.grippers[ai] >= 0.5;
        if opened {
            for obj in next.objects.iter_mut() {
                if obj.holder == Holder::Arm(arm) {
                    obj.holder = Holder::Table;
                }
            }
        }
    }
    for arm in ArmSide::BOTH {
        let ai = arm.index();
        let closed = state.grippers[ai] >= 0.5 && next.grippers[ai] < 0.5;
        if closed {
            // nearest object within the grasp radius; attachment transfers
            // from another arm implement handover
            let ee_pos = ee[ai];
            let mut best: Option<(usize, f64)> = None;
            for (i, obj) in next.objects.iter().enumerate() {
                let d = dist(ee_pos, obj.pos);
                if d <= cfg.grasp_radius && best.map(|(_, bd)| d < bd).unwrap_or(true) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                next.objects[i].holder = Holder::Arm(arm);
                next.objects[i].pos = ee_pos;
            }
        }
    }
    Ok(next)
}

/// Diffs two contact sets into Add/Remove events at `frame`.
pub fn contact_events_between(
    prev: &std::collections::BTreeSet<Edge>,
    next: &std::collections::BTreeSet<Edge>,
    frame: u64,
) -> Vec<ContactEvent> {
    let mut events = Vec::new();
    for e in next.difference(prev) {
        events.push(ContactEvent { frame_idx: frame, edge: e.clone(), op: EventOp::Add });
    }
    for e in prev.difference(next) {
        events.push(ContactEvent { frame_idx: frame, edge: e.clone(), op: EventOp::Remove });
    }
    events
}
