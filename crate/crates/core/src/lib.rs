//! Hierarchical bimanual imitation learning on a planar two-arm simulator.
//!
//! The crate covers the full stack: demonstration data model and files
//! ([`demo`]), unimanual keypose heuristics ([`heuristics`]), contact-graph
//! coordination identification and merging ([`contact`], [`vlm`],
//! [`pipeline`]), supervised dataset construction ([`dataset`]), a minimal
//! neural substrate ([`nn`]) under consistency-model training ([`cm`]), the
//! keypose predictor and trajectory generator ([`policy`]), a kinematic
//! two-arm world with scripted experts ([`sim`]), and the closed-loop
//! deployment engine ([`deploy`]).

pub mod cm;
pub mod contact;
pub mod dataset;
pub mod demo;
pub mod deploy;
pub mod error;
pub mod heuristics;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod sim;
pub mod vlm;

pub use error::{Error, Result};
