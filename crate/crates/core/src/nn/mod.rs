//! Neural substrate: tensors, MLPs with manual backprop, AdamW with cosine
//! annealing, noise-level embeddings, and checkpoint I/O.

pub mod checkpoint;
pub mod embed;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use embed::{NoiseEmbedding, NOISE_EMB_DIM};
pub use mlp::{Activation, Mlp, MlpGrads, MlpSpec};
pub use optim::{cosine_lr, ema_update, AdamW, OptimizerConfig};
pub use tensor::{Real, Tensor};
