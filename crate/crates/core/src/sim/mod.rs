//! Planar two-arm simulator: world kinematics, inverse kinematics, task
//! definitions, and scripted demonstration experts.

pub mod expert;
pub mod ik;
pub mod task;
pub mod world;

pub use expert::{generate_demos, scripted_expert, ExpertConfig, ExpertDemo};
pub use task::{check_stages, stagewise_rates, PlanarEnv, StageOutcome, TaskKind, TaskSpec};
pub use world::{fk, Holder, Rect, SimObject, WorldConfig, WorldState};
