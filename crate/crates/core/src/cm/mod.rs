//! Consistency models: schedules, training objective, one-step sampling.

pub mod model;
pub mod schedule;

pub use model::{c_out, c_skip, pseudo_huber, ConsistencyModel, CtLossOutput};
pub use schedule::{curriculum_n, karras_sigmas, sample_noise_index, CmConfig};
