//! Head profiling: the sparsity metric over recorded attention, threshold
//! classification into spatial and semantic heads, CFG-vs-native KV
//! divergence, and the sparsity histogram.

mod divergence;
mod histogram;
mod partition;
mod sparsity;
mod synthetic;
mod trace;

pub use divergence::{kv_divergence, DivergenceReport};
pub use histogram::{sparsity_histogram, HistogramRow, SparsityHistogram, BUCKETS};
pub use partition::{classify, random_partition, HeadLabel, HeadPartition};
pub use sparsity::{sparsity, SparsityMeta, SparsityProfile};
pub use synthetic::{planted_trace, PlantedTraceSpec};
pub use trace::{AttentionTrace, TraceRecord};
