//! Contact graphs, contact-change events, coordination-interval
//! identification, and coordination-driven merging of unimanual keyposes.
//!
//! Scene entities (arms, objects, surfaces) are graph nodes; physical
//! contacts are undirected edges. A demonstration yields a sequence of
//! graphs; three principles mark coordination phases:
//!
//! * P1 — both arms hold an edge to the same object over a run of graphs;
//! * P2 — an object swaps its arm contact between adjacent graphs;
//! * P3 — two objects, each touching a different arm, gain a mutual edge.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demo::{ArmSide, BimanualKeypose, KeyposeAnnotation, Trajectory};
use crate::error::{Error, Result};
use crate::heuristics::MergedUnimanualKeypose;

pub const ROBOT_LEFT: &str = "robot_left";
pub const ROBOT_RIGHT: &str = "robot_right";

pub fn arm_node(arm: ArmSide) -> &'static str {
    match arm {
        ArmSide::Left => ROBOT_LEFT,
        ArmSide::Right => ROBOT_RIGHT,
    }
}

/// An unordered node pair; stored sorted so (a, b) == (b, a).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub String, pub String);

impl Edge {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn touches(&self, node: &str) -> bool {
        self.0 == node || self.1 == node
    }

    /// The endpoint opposite `node`, if the edge touches it.
    pub fn other(&self, node: &str) -> Option<&str> {
        if self.0 == node {
            Some(&self.1)
        } else if self.1 == node {
            Some(&self.0)
        } else {
            None
        }
    }
}

/// Scene entities and their current contacts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<Edge>,
}

impl ContactGraph {
    pub fn new<N, E>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator<Item = String>,
        E: IntoIterator<Item = Edge>,
    {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let mut graph = ContactGraph { nodes, edges: BTreeSet::new() };
        for e in edges {
            if e.0 == e.1 {
                return Err(Error::validation(format!("self-edge on node {}", e.0)));
            }
            graph.nodes.insert(e.0.clone());
            graph.nodes.insert(e.1.clone());
            graph.edges.insert(e);
        }
        Ok(graph)
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    /// Nodes connected to `node`.
    pub fn neighbors<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> {
        self.edges.iter().filter_map(move |e| e.other(node))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventOp {
    Add,
    Remove,
}

/// A timestamped contact change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub frame_idx: u64,
    pub edge: Edge,
    pub op: EventOp,
}

/// Applies a sorted event stream and returns the graph after each distinct
/// frame index, prepended with the initial graph.
///
/// Adding an existing edge or removing a missing one is an event-consistency
/// error naming the offending frame.
pub fn apply_events(initial: &ContactGraph, events: &[ContactEvent]) -> Result<Vec<ContactGraph>> {
    Ok(graph_timeline(initial, events)?.into_iter().map(|(_, g)| g).collect())
}

/// Like [`apply_events`] but keeps the frame at which each graph became
/// active. The initial graph is active from frame 0.
pub fn graph_timeline(
    initial: &ContactGraph,
    events: &[ContactEvent],
) -> Result<Vec<(u64, ContactGraph)>> {
    let mut timeline = vec![(0u64, initial.clone())];
    let mut current = initial.clone();
    let mut prev_frame: Option<u64> = None;
    for ev in events {
        if let Some(pf) = prev_frame {
            if ev.frame_idx < pf {
                return Err(Error::EventConsistency {
                    frame: ev.frame_idx,
                    detail: format!("events not sorted (previous frame {pf})"),
                });
            }
        }
        if ev.edge.0 == ev.edge.1 {
            return Err(Error::EventConsistency {
                frame: ev.frame_idx,
                detail: format!("self-edge on node {}", ev.edge.0),
            });
        }
        match ev.op {
            EventOp::Add => {
                if current.edges.contains(&ev.edge) {
                    return Err(Error::EventConsistency {
                        frame: ev.frame_idx,
                        detail: format!("duplicate add of edge ({}, {})", ev.edge.0, ev.edge.1),
                    });
                }
                current.nodes.insert(ev.edge.0.clone());
                current.nodes.insert(ev.edge.1.clone());
                current.edges.insert(ev.edge.clone());
            }
            EventOp::Remove => {
                if !current.edges.remove(&ev.edge) {
                    return Err(Error::EventConsistency {
                        frame: ev.frame_idx,
                        detail: format!("remove of absent edge ({}, {})", ev.edge.0, ev.edge.1),
                    });
                }
            }
        }
        if prev_frame == Some(ev.frame_idx) {
            // same frame: replace the graph we just pushed
            timeline.last_mut().unwrap().1 = current.clone();
        } else {
            timeline.push((ev.frame_idx, current.clone()));
        }
        prev_frame = Some(ev.frame_idx);
    }
    Ok(timeline)
}

/// Affine map from contact-frame index to trajectory timestep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FrameToStep {
    /// Trajectory steps per contact frame.
    pub steps_per_frame: f64,
    pub offset: f64,
}

impl FrameToStep {
    pub fn identity() -> Self {
        FrameToStep { steps_per_frame: 1.0, offset: 0.0 }
    }

    /// From a frame-extraction rate and the control rate (1/dt).
    pub fn from_rates(frame_rate_hz: f64, control_rate_hz: f64) -> Self {
        FrameToStep { steps_per_frame: control_rate_hz / frame_rate_hz, offset: 0.0 }
    }

    pub fn map(&self, frame: u64) -> i64 {
        (self.offset + self.steps_per_frame * frame as f64).round() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Principle {
    P1,
    P2,
    P3,
}

/// A coordination phase in trajectory timesteps, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationInterval {
    pub t_start: usize,
    pub t_end: usize,
    pub principle: Principle,
}

impl CoordinationInterval {
    pub fn contains(&self, t: usize) -> bool {
        t >= self.t_start && t <= self.t_end
    }
}

pub fn in_any_interval(intervals: &[CoordinationInterval], t: usize) -> bool {
    intervals.iter().any(|iv| iv.contains(t))
}

/// Settings for coordination identification.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationConfig {
    /// Symmetric dilation (trajectory steps) applied to each raw interval.
    pub dilation_steps: usize,
    /// Node names treated as supporting surfaces, never as objects.
    pub surfaces: BTreeSet<String>,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        CoordinationConfig {
            dilation_steps: 10,
            surfaces: BTreeSet::from(["table".to_string()]),
        }
    }
}

impl CoordinationConfig {
    fn is_object(&self, node: &str) -> bool {
        node != ROBOT_LEFT && node != ROBOT_RIGHT && !self.surfaces.contains(node)
    }
}

fn p1_holds(g: &ContactGraph, cfg: &CoordinationConfig) -> bool {
    g.neighbors(ROBOT_LEFT)
        .any(|o| cfg.is_object(o) && g.has_edge(ROBOT_RIGHT, o))
}

fn p2_holds(a: &ContactGraph, b: &ContactGraph, cfg: &CoordinationConfig) -> bool {
    let objects: BTreeSet<&str> = a
        .nodes
        .iter()
        .chain(b.nodes.iter())
        .map(String::as_str)
        .filter(|n| cfg.is_object(n))
        .collect();
    for o in objects {
        for (x, y) in [(ROBOT_LEFT, ROBOT_RIGHT), (ROBOT_RIGHT, ROBOT_LEFT)] {
            let lost = a.has_edge(x, o) && !b.has_edge(x, o);
            let gained = !a.has_edge(y, o) && b.has_edge(y, o);
            if lost && gained {
                return true;
            }
        }
    }
    false
}

fn p3_holds(a: &ContactGraph, b: &ContactGraph, cfg: &CoordinationConfig) -> bool {
    let la: Vec<&str> = a.neighbors(ROBOT_LEFT).filter(|o| cfg.is_object(o)).collect();
    let ra: Vec<&str> = a.neighbors(ROBOT_RIGHT).filter(|o| cfg.is_object(o)).collect();
    for oa in &la {
        for ob in &ra {
            if oa == ob {
                continue;
            }
            let formed = !a.has_edge(oa, ob) && b.has_edge(oa, ob);
            let arms_kept = b.has_edge(ROBOT_LEFT, oa) && b.has_edge(ROBOT_RIGHT, ob);
            if formed && arms_kept {
                return true;
            }
        }
    }
    false
}

/// Frame span of the i-th timeline entry: `[from, to]` inclusive, where `to`
/// is the frame before the next change (`u64::MAX` for the last graph).
fn frame_span(timeline: &[(u64, ContactGraph)], i: usize) -> (u64, u64) {
    let from = timeline[i].0;
    let to = if i + 1 < timeline.len() {
        timeline[i + 1].0.saturating_sub(1)
    } else {
        u64::MAX
    };
    (from, to)
}

/// Identifies coordination intervals from a graph timeline.
///
/// Raw frame intervals are mapped through `frame_to_step`, dilated by
/// `cfg.dilation_steps` on both sides, clamped to `[0, t_len - 1]`, and
/// merged where they overlap.
pub fn identify_coordination(
    timeline: &[(u64, ContactGraph)],
    frame_to_step: FrameToStep,
    t_len: usize,
    cfg: &CoordinationConfig,
) -> Vec<CoordinationInterval> {
    if timeline.is_empty() || t_len == 0 {
        return Vec::new();
    }
    let mut raw: Vec<(u64, u64, Principle)> = Vec::new();

    // P1: maximal runs of graphs where both arms hold the same object.
    let mut run_start: Option<usize> = None;
    for i in 0..=timeline.len() {
        let holds = i < timeline.len()
            && p1_holds(&timeline[i].1, cfg)
            && frame_span(timeline, i).0 <= frame_span(timeline, i).1;
        match (holds, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let (f0, _) = frame_span(timeline, s);
                let (_, f1) = frame_span(timeline, i - 1);
                raw.push((f0, f1, Principle::P1));
                run_start = None;
            }
            _ => {}
        }
    }

    // P2/P3: event-local, spanning the last frame of G_i and the first of
    // G_{i+1}.
    for i in 0..timeline.len().saturating_sub(1) {
        let (a, b) = (&timeline[i].1, &timeline[i + 1].1);
        let f_change = timeline[i + 1].0;
        let f_before = f_change.saturating_sub(1).max(timeline[i].0);
        if p2_holds(a, b, cfg) {
            raw.push((f_before, f_change, Principle::P2));
        }
        if p3_holds(a, b, cfg) {
            raw.push((f_before, f_change, Principle::P3));
        }
    }

    // map to steps, dilate, clamp
    let max_t = t_len - 1;
    let mut intervals: Vec<CoordinationInterval> = raw
        .into_iter()
        .filter_map(|(f0, f1, p)| {
            let s0 = frame_to_step.map(f0);
            let s1 = if f1 == u64::MAX { max_t as i64 } else { frame_to_step.map(f1) };
            let lo = (s0 - cfg.dilation_steps as i64).clamp(0, max_t as i64) as usize;
            let hi = (s1.saturating_add(cfg.dilation_steps as i64)).clamp(0, max_t as i64) as usize;
            if lo <= hi {
                Some(CoordinationInterval { t_start: lo, t_end: hi, principle: p })
            } else {
                None
            }
        })
        .collect();

    intervals.sort_by_key(|iv| (iv.t_start, iv.t_end));
    let mut merged: Vec<CoordinationInterval> = Vec::new();
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.t_start <= last.t_end => {
                last.t_end = last.t_end.max(iv.t_end);
            }
            _ => merged.push(iv),
        }
    }
    merged
}

/// Merges per-arm keypose lists into a bimanual annotation using the
/// coordination intervals.
///
/// Keyposes inside an interval become mode-1 (the other arm's joints at the
/// same timestep are adopted implicitly, since the stored q is the full
/// bimanual vector); keyposes outside stay mode-0. Keyposes from both arms
/// within `merge_window` steps collapse to one entry; if any member of a
/// cluster is coordination-mode, the surviving timestep is the earliest
/// mode-1 member so the entry stays inside its interval.
pub fn merge_to_bimanual(
    left: &[MergedUnimanualKeypose],
    right: &[MergedUnimanualKeypose],
    intervals: &[CoordinationInterval],
    traj: &Trajectory,
    merge_window: usize,
) -> Result<KeyposeAnnotation> {
    let t_len = traj.len();
    let mut ts: Vec<usize> = left.iter().chain(right.iter()).map(|k| k.t).collect();
    ts.sort_unstable();
    ts.dedup();
    for &t in &ts {
        if t >= t_len {
            return Err(Error::validation(format!(
                "unimanual keypose t={t} out of range (T={t_len})"
            )));
        }
    }

    let mut interior: Vec<BimanualKeypose> = Vec::new();
    let mut i = 0;
    while i < ts.len() {
        let anchor = ts[i];
        let mut j = i;
        while j + 1 < ts.len() && ts[j + 1] <= anchor + merge_window {
            j += 1;
        }
        let cluster = &ts[i..=j];
        let survivor = cluster
            .iter()
            .copied()
            .find(|&t| in_any_interval(intervals, t))
            .unwrap_or(anchor);
        let mode = in_any_interval(intervals, survivor);
        if survivor > 0 && survivor < t_len {
            interior.push(BimanualKeypose::at(traj, survivor, mode)?);
        }
        i = j + 1;
    }
    interior.sort_by_key(|k| k.t);
    interior.dedup_by_key(|k| k.t);
    KeyposeAnnotation::with_sentinels(traj, interior)
}

// ---------------------------------------------------------------------------
// Recorded contact files (the same schema the contact-detection endpoint
// produces, plus frame-rate metadata so frames can be mapped to steps).
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactChange {
    pub edge: [String; 2],
    pub op: EventOp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeChangeRecord {
    pub frame_idx: u64,
    pub contact_change: ContactChange,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitialGraphRecord {
    pub nodes: Vec<String>,
    pub edges: Vec<[String; 2]>,
}

/// On-disk contact record for one trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactRecord {
    pub initial_graph: InitialGraphRecord,
    #[serde(rename = "ModeChangeDetection")]
    pub mode_change_detection: Vec<ModeChangeRecord>,
    /// Contact frames per second; equals the control rate when events are
    /// recorded at native trajectory resolution.
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
    #[serde(default = "default_frame_rate")]
    pub control_rate_hz: f64,
}

fn default_frame_rate() -> f64 {
    50.0
}

impl ContactRecord {
    pub fn initial(&self) -> Result<ContactGraph> {
        ContactGraph::new(
            self.initial_graph.nodes.iter().cloned(),
            self.initial_graph
                .edges
                .iter()
                .map(|[a, b]| Edge::new(a.clone(), b.clone())),
        )
    }

    pub fn events(&self) -> Vec<ContactEvent> {
        self.mode_change_detection
            .iter()
            .map(|m| ContactEvent {
                frame_idx: m.frame_idx,
                edge: Edge::new(m.contact_change.edge[0].clone(), m.contact_change.edge[1].clone()),
                op: m.contact_change.op,
            })
            .collect()
    }

    pub fn frame_to_step(&self) -> FrameToStep {
        FrameToStep::from_rates(self.frame_rate_hz, self.control_rate_hz)
    }

    pub fn from_parts(
        initial: &ContactGraph,
        events: &[ContactEvent],
        frame_rate_hz: f64,
        control_rate_hz: f64,
    ) -> Self {
        ContactRecord {
            initial_graph: InitialGraphRecord {
                nodes: initial.nodes.iter().cloned().collect(),
                edges: initial
                    .edges
                    .iter()
                    .map(|e| [e.0.clone(), e.1.clone()])
                    .collect(),
            },
            mode_change_detection: events
                .iter()
                .map(|ev| ModeChangeRecord {
                    frame_idx: ev.frame_idx,
                    contact_change: ContactChange {
                        edge: [ev.edge.0.clone(), ev.edge.1.clone()],
                        op: ev.op,
                    },
                    description: String::new(),
                })
                .collect(),
            frame_rate_hz,
            control_rate_hz,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Interval files map trajectory id to its coordination intervals.
pub type IntervalFile = BTreeMap<String, Vec<CoordinationInterval>>;

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_graph(edges: &[(&str, &str)]) -> ContactGraph {
        ContactGraph::new(
            [ROBOT_LEFT.to_string(), ROBOT_RIGHT.to_string(), "table".to_string()],
            edges.iter().map(|(a, b)| Edge::new(*a, *b)),
        )
        .unwrap()
    }

    #[test]
    fn apply_events_appends_graph_per_frame() {
        let initial = simple_graph(&[("cube", "table")]);
        let events = vec![ContactEvent {
            frame_idx: 15,
            edge: Edge::new(ROBOT_RIGHT, "cube"),
            op: EventOp::Add,
        }];
        let graphs = apply_events(&initial, &events).unwrap();
        assert_eq!(graphs.len(), 2);
        assert!(graphs[1].has_edge("cube", "table"));
        assert!(graphs[1].has_edge(ROBOT_RIGHT, "cube"));
        assert!(!graphs[0].has_edge(ROBOT_RIGHT, "cube"));
    }

    #[test]
    fn apply_events_empty_returns_initial() {
        let initial = simple_graph(&[("cube", "table")]);
        let graphs = apply_events(&initial, &[]).unwrap();
        assert_eq!(graphs, vec![initial]);
    }

    #[test]
    fn remove_absent_edge_is_error_with_frame() {
        let initial = simple_graph(&[]);
        let events = vec![ContactEvent {
            frame_idx: 7,
            edge: Edge::new(ROBOT_LEFT, "cube"),
            op: EventOp::Remove,
        }];
        match apply_events(&initial, &events) {
            Err(Error::EventConsistency { frame, .. }) => assert_eq!(frame, 7),
            other => panic!("expected event-consistency error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_add_is_error() {
        let initial = simple_graph(&[("cube", "table")]);
        let events = vec![ContactEvent {
            frame_idx: 3,
            edge: Edge::new("table", "cube"),
            op: EventOp::Add,
        }];
        assert!(matches!(
            apply_events(&initial, &events),
            Err(Error::EventConsistency { frame: 3, .. })
        ));
    }

    #[test]
    fn event_roundtrip_restores_initial() {
        let initial = simple_graph(&[("cube", "table")]);
        let fwd = vec![
            ContactEvent { frame_idx: 2, edge: Edge::new(ROBOT_RIGHT, "cube"), op: EventOp::Add },
            ContactEvent { frame_idx: 5, edge: Edge::new("cube", "table"), op: EventOp::Remove },
        ];
        let graphs = apply_events(&initial, &fwd).unwrap();
        let last = graphs.last().unwrap().clone();
        let rev: Vec<ContactEvent> = fwd
            .iter()
            .rev()
            .enumerate()
            .map(|(i, ev)| ContactEvent {
                frame_idx: 10 + i as u64,
                edge: ev.edge.clone(),
                op: match ev.op {
                    EventOp::Add => EventOp::Remove,
                    EventOp::Remove => EventOp::Add,
                },
            })
            .collect();
        let back = apply_events(&last, &rev).unwrap();
        assert_eq!(back.last().unwrap().edges, initial.edges);
    }

    fn timeline_from(
        initial: ContactGraph,
        events: Vec<ContactEvent>,
    ) -> Vec<(u64, ContactGraph)> {
        graph_timeline(&initial, &events).unwrap()
    }

    #[test]
    fn p1_interval_covers_shared_hold_run() {
        // both arms touch "box" over frames 4..=9
        let initial = simple_graph(&[("box", "table")]);
        let events = vec![
            ContactEvent { frame_idx: 2, edge: Edge::new(ROBOT_LEFT, "box"), op: EventOp::Add },
            ContactEvent { frame_idx: 4, edge: Edge::new(ROBOT_RIGHT, "box"), op: EventOp::Add },
            ContactEvent { frame_idx: 10, edge: Edge::new(ROBOT_LEFT, "box"), op: EventOp::Remove },
        ];
        let tl = timeline_from(initial, events);
        let cfg = CoordinationConfig { dilation_steps: 0, ..Default::default() };
        let ivs = identify_coordination(&tl, FrameToStep::identity(), 100, &cfg);
        assert_eq!(ivs.len(), 1);
        assert_eq!((ivs[0].t_start, ivs[0].t_end), (4, 9));
        assert_eq!(ivs[0].principle, Principle::P1);
    }

    #[test]
    fn p2_fires_on_contact_swap() {
        // cube swaps from right arm to left arm in one transition
        let initial = simple_graph(&[(ROBOT_RIGHT, "cube")]);
        let events = vec![
            ContactEvent { frame_idx: 6, edge: Edge::new(ROBOT_RIGHT, "cube"), op: EventOp::Remove },
            ContactEvent { frame_idx: 6, edge: Edge::new(ROBOT_LEFT, "cube"), op: EventOp::Add },
        ];
        let tl = timeline_from(initial, events);
        let cfg = CoordinationConfig { dilation_steps: 0, ..Default::default() };
        let ivs = identify_coordination(&tl, FrameToStep::identity(), 100, &cfg);
        assert_eq!(ivs.len(), 1);
        assert_eq!(ivs[0].principle, Principle::P2);
        assert_eq!((ivs[0].t_start, ivs[0].t_end), (5, 6));
    }

    #[test]
    fn p3_fires_on_object_object_contact() {
        let initial = simple_graph(&[(ROBOT_LEFT, "peg"), (ROBOT_RIGHT, "socket")]);
        let events = vec![ContactEvent {
            frame_idx: 9,
            edge: Edge::new("peg", "socket"),
            op: EventOp::Add,
        }];
        let tl = timeline_from(initial, events);
        let cfg = CoordinationConfig { dilation_steps: 2, ..Default::default() };
        let ivs = identify_coordination(&tl, FrameToStep::identity(), 100, &cfg);
        assert_eq!(ivs.len(), 1);
        assert_eq!(ivs[0].principle, Principle::P3);
        assert_eq!((ivs[0].t_start, ivs[0].t_end), (6, 11));
    }

    #[test]
    fn no_arm_object_contact_yields_empty() {
        let initial = simple_graph(&[("cube", "table")]);
        let events = vec![
            ContactEvent { frame_idx: 5, edge: Edge::new("cube", "table"), op: EventOp::Remove },
            ContactEvent { frame_idx: 9, edge: Edge::new("cube", "table"), op: EventOp::Add },
        ];
        let tl = timeline_from(initial, events);
        let ivs = identify_coordination(
            &tl,
            FrameToStep::identity(),
            100,
            &CoordinationConfig::default(),
        );
        assert!(ivs.is_empty());
    }

    #[test]
    fn shared_table_contact_is_not_coordination() {
        // both arms always touch the table; that shared "object" must not count
        let initial = simple_graph(&[(ROBOT_LEFT, "table"), (ROBOT_RIGHT, "table")]);
        let tl = timeline_from(initial, vec![]);
        let ivs = identify_coordination(
            &tl,
            FrameToStep::identity(),
            100,
            &CoordinationConfig::default(),
        );
        assert!(ivs.is_empty());
    }

    #[test]
    fn p1_invariant_to_object_renaming() {
        let mk = |name: &str| {
            let initial = simple_graph(&[(ROBOT_LEFT, name), (ROBOT_RIGHT, name)]);
            let events = vec![ContactEvent {
                frame_idx: 8,
                edge: Edge::new(ROBOT_LEFT, name),
                op: EventOp::Remove,
            }];
            let tl = timeline_from(initial, events);
            identify_coordination(
                &tl,
                FrameToStep::identity(),
                50,
                &CoordinationConfig::default(),
            )
        };
        let a = mk("box");
        let b = mk("zzz_widget");
        assert_eq!(
            a.iter().map(|iv| (iv.t_start, iv.t_end)).collect::<Vec<_>>(),
            b.iter().map(|iv| (iv.t_start, iv.t_end)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn transfer_style_stream_gives_one_merged_interval() {
        // the classic handover stream: right grasps, lift, left grasps,
        // right releases, place
        let initial = simple_graph(&[
            ("cube", "table"),
            (ROBOT_LEFT, "table"),
            (ROBOT_RIGHT, "table"),
        ]);
        let events = vec![
            ContactEvent { frame_idx: 15, edge: Edge::new(ROBOT_RIGHT, "cube"), op: EventOp::Add },
            ContactEvent { frame_idx: 40, edge: Edge::new("table", "cube"), op: EventOp::Remove },
            ContactEvent { frame_idx: 60, edge: Edge::new(ROBOT_LEFT, "cube"), op: EventOp::Add },
            ContactEvent { frame_idx: 70, edge: Edge::new(ROBOT_RIGHT, "cube"), op: EventOp::Remove },
            ContactEvent { frame_idx: 80, edge: Edge::new("table", "cube"), op: EventOp::Add },
        ];
        let tl = timeline_from(initial, events);
        let f2s = FrameToStep::from_rates(10.0, 50.0);
        let ivs =
            identify_coordination(&tl, f2s, 400, &CoordinationConfig::default());
        assert_eq!(ivs.len(), 1);
        // both-hold spans frames 60..=69 -> steps 300..=345, dilated by 10
        assert_eq!((ivs[0].t_start, ivs[0].t_end), (290, 355));
    }

    proptest::proptest! {
        #[test]
        fn intervals_disjoint_and_sorted(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let objects = ["cube", "peg", "socket"];
            let mut current = simple_graph(&[]);
            let mut events = Vec::new();
            let mut frame = 0u64;
            for _ in 0..rng.gen_range(0..20) {
                frame += rng.gen_range(1..6);
                let arm = if rng.gen_bool(0.5) { ROBOT_LEFT } else { ROBOT_RIGHT };
                let a = if rng.gen_bool(0.7) { arm } else { objects[rng.gen_range(0..3)] };
                let b = objects[rng.gen_range(0..3)];
                if a == b { continue; }
                let edge = Edge::new(a, b);
                let op = if current.edges.contains(&edge) { EventOp::Remove } else { EventOp::Add };
                match op {
                    EventOp::Add => {
                        current.nodes.insert(edge.0.clone());
                        current.nodes.insert(edge.1.clone());
                        current.edges.insert(edge.clone());
                    }
                    EventOp::Remove => { current.edges.remove(&edge); }
                }
                events.push(ContactEvent { frame_idx: frame, edge, op });
            }
            let tl = timeline_from(simple_graph(&[]), events);
            let ivs = identify_coordination(
                &tl,
                FrameToStep::from_rates(10.0, 50.0),
                500,
                &CoordinationConfig::default(),
            );
            for w in ivs.windows(2) {
                proptest::prop_assert!(w[0].t_end < w[1].t_start);
            }
        }
    }

    // -----------------------------------------------------------------
    // Brute-force oracle over short graph sequences (definition-level).
    // -----------------------------------------------------------------
    #[test]
    fn principles_match_bruteforce_on_short_sequences() {
        use rand::{Rng, SeedableRng};
        let cfg = CoordinationConfig { dilation_steps: 0, ..Default::default() };
        for seed in 0..200u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // random consistent event stream over <= 20 distinct frames
            let objects = ["cube", "peg"];
            let mut current = simple_graph(&[]);
            let mut events: Vec<ContactEvent> = Vec::new();
            let mut frame = 0u64;
            for _ in 0..rng.gen_range(0..20) {
                frame += 1;
                let candidates: Vec<Edge> = {
                    let mut v = Vec::new();
                    for arm in [ROBOT_LEFT, ROBOT_RIGHT] {
                        for o in objects {
                            v.push(Edge::new(arm, o));
                        }
                    }
                    v.push(Edge::new("cube", "peg"));
                    v
                };
                let edge = candidates[rng.gen_range(0..candidates.len())].clone();
                let op = if current.edges.contains(&edge) { EventOp::Remove } else { EventOp::Add };
                match op {
                    EventOp::Add => { current.edges.insert(edge.clone()); }
                    EventOp::Remove => { current.edges.remove(&edge); }
                }
                events.push(ContactEvent { frame_idx: frame, edge, op });
            }
            let tl = timeline_from(simple_graph(&[]), events);
            let got = identify_coordination(&tl, FrameToStep::identity(), 1000, &cfg);

            // oracle: step-by-step truth per definition
            let mut expect_cover: Vec<bool> = vec![false; 1000];
            for i in 0..tl.len() {
                let (f0, f1) = frame_span(&tl, i);
                if f0 > f1 { continue; }
                if p1_holds(&tl[i].1, &cfg) {
                    for f in f0..=f1.min(999) {
                        expect_cover[f as usize] = true;
                    }
                }
            }
            for i in 0..tl.len().saturating_sub(1) {
                if p2_holds(&tl[i].1, &tl[i + 1].1, &cfg) || p3_holds(&tl[i].1, &tl[i + 1].1, &cfg) {
                    let f = tl[i + 1].0 as usize;
                    expect_cover[f] = true;
                    expect_cover[f.saturating_sub(1).max(tl[i].0 as usize)] = true;
                }
            }
            let mut got_cover = vec![false; 1000];
            for iv in &got {
                for t in iv.t_start..=iv.t_end.min(999) {
                    got_cover[t] = true;
                }
            }
            assert_eq!(got_cover, expect_cover, "seed {seed}");
        }
    }

    // -----------------------------------------------------------------
    // merge_to_bimanual
    // -----------------------------------------------------------------

    use crate::demo::{Action, Observation};
    use crate::heuristics::HeuristicRule;

    fn mk_traj(t_len: usize) -> Trajectory {
        let steps = (0..t_len)
            .map(|t| {
                let q: Vec<f64> = (0..8).map(|i| t as f64 + 0.1 * i as f64).collect();
                (
                    Observation { proprio: q.clone(), aux: vec![] },
                    Action { target_proprio: q },
                )
            })
            .collect();
        Trajectory { id: "m".into(), dt: 0.02, per_arm_dim: 4, steps }
    }

    fn uni(arm: ArmSide, t: usize) -> MergedUnimanualKeypose {
        MergedUnimanualKeypose { arm, t, rules: vec![HeuristicRule::MotionStall] }
    }

    #[test]
    fn keypose_inside_interval_becomes_mode1_with_full_q() {
        let traj = mk_traj(100);
        let ivs = vec![CoordinationInterval { t_start: 30, t_end: 60, principle: Principle::P1 }];
        let ann =
            merge_to_bimanual(&[uni(ArmSide::Left, 40)], &[], &ivs, &traj, 5).unwrap();
        assert_eq!(ann.keyposes.len(), 3);
        let kp = &ann.keyposes[1];
        assert_eq!(kp.t, 40);
        assert!(kp.mode);
        assert_eq!(kp.q, traj.q_at(40));
    }

    #[test]
    fn keypose_outside_intervals_stays_mode0() {
        let traj = mk_traj(100);
        let ivs = vec![CoordinationInterval { t_start: 30, t_end: 60, principle: Principle::P1 }];
        let ann = merge_to_bimanual(&[], &[uni(ArmSide::Right, 20)], &ivs, &traj, 5).unwrap();
        let kp = &ann.keyposes[1];
        assert_eq!(kp.t, 20);
        assert!(!kp.mode);
    }

    #[test]
    fn no_keyposes_gives_only_sentinels() {
        let traj = mk_traj(50);
        let ann = merge_to_bimanual(&[], &[], &[], &traj, 5).unwrap();
        assert_eq!(ann.keyposes.len(), 2);
        assert_eq!(ann.keyposes[0].t, 0);
        assert_eq!(ann.keyposes[1].t, 50);
    }

    #[test]
    fn cross_arm_collapse_prefers_mode1_member() {
        let traj = mk_traj(100);
        let ivs = vec![CoordinationInterval { t_start: 42, t_end: 60, principle: Principle::P1 }];
        // left at 40 (outside), right at 42 (inside), window 5 -> one entry at 42, mode 1
        let ann = merge_to_bimanual(
            &[uni(ArmSide::Left, 40)],
            &[uni(ArmSide::Right, 42)],
            &ivs,
            &traj,
            5,
        )
        .unwrap();
        assert_eq!(ann.keyposes.len(), 3);
        assert_eq!(ann.keyposes[1].t, 42);
        assert!(ann.keyposes[1].mode);
    }

    #[test]
    fn out_of_range_keypose_is_error() {
        let traj = mk_traj(10);
        assert!(merge_to_bimanual(&[uni(ArmSide::Left, 10)], &[], &[], &traj, 5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn merge_output_monotone_and_mode_consistent(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let traj = mk_traj(120);
            fn mk_list(
                rng: &mut rand_chacha::ChaCha8Rng,
                n: usize,
                arm: ArmSide,
            ) -> Vec<MergedUnimanualKeypose> {
                let mut ts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..119)).collect();
                ts.sort_unstable();
                ts.dedup();
                ts.into_iter().map(|t| uni(arm, t)).collect()
            }
            let n_left = rng.gen_range(0..8);
            let left = mk_list(&mut rng, n_left, ArmSide::Left);
            let n_right = rng.gen_range(0..8);
            let right = mk_list(&mut rng, n_right, ArmSide::Right);
            let mut ivs = Vec::new();
            for _ in 0..rng.gen_range(0..3) {
                let a = rng.gen_range(0..110usize);
                let b = rng.gen_range(a..=119usize.min(a + 30));
                ivs.push(CoordinationInterval { t_start: a, t_end: b, principle: Principle::P1 });
            }
            ivs.sort_by_key(|iv| iv.t_start);
            // keep them disjoint
            let mut merged_ivs: Vec<CoordinationInterval> = Vec::new();
            for iv in ivs {
                match merged_ivs.last_mut() {
                    Some(last) if iv.t_start <= last.t_end => last.t_end = last.t_end.max(iv.t_end),
                    _ => merged_ivs.push(iv),
                }
            }
            let ann = merge_to_bimanual(&left, &right, &merged_ivs, &traj, 5).unwrap();
            // strictly increasing, starts at 0, ends at T
            proptest::prop_assert_eq!(ann.keyposes[0].t, 0);
            proptest::prop_assert_eq!(ann.keyposes.last().unwrap().t, 120);
            for w in ann.keyposes.windows(2) {
                proptest::prop_assert!(w[1].t > w[0].t);
            }
            // interior mode flags agree with interval membership
            for kp in &ann.keyposes[1..ann.keyposes.len() - 1] {
                proptest::prop_assert_eq!(kp.mode, in_any_interval(&merged_ivs, kp.t));
            }
        }
    }
}
