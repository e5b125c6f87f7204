//! Autoregressive image-token decoding with per-head KV cache compression.
//!
//! A small seeded decoder-only transformer generates a raster-ordered grid
//! of visual tokens under classifier-free guidance. Each attention head of
//! each CFG branch owns a cache governed by one of five policies (full,
//! streaming, H2O, SSD, SSD with a row buffer). The profiler measures how
//! far back each head looks and splits heads into spatial (local) and
//! semantic (global) groups; the bench module compares throughput and
//! retained-KV memory across policies.

pub mod bench;
pub mod cli;
pub mod error;
pub mod generator;
pub mod kvcache;
pub mod model;
pub mod numerics;
pub mod profiler;
pub mod replay;

pub use error::{Error, Result};
