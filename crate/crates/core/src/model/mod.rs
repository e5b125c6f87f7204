//! Toy decoder-only transformer with per-head pluggable KV caches.

mod config;
mod decode;
mod weights;

pub use config::{ModelConfig, PositionalScheme};
pub use decode::{decode_batch, decode_step, HeadAttention, StepOutput, RMS_EPS, ROPE_BASE};
pub use weights::{init_model, LayerWeights, ModelWeights};
