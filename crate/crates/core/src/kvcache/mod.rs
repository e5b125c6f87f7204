//! Per-head KV cache policies: full, streaming (sink + window), H2O
//! (heavy hitters + recent window), SSD (window for spatial heads, heavy
//! hitters for semantic heads) and SSD with a row buffer.

mod buffer;
mod handle;
mod head;
mod memory;
mod policy;

pub use buffer::{append_buffered, flush, RowBuffer};
pub use handle::{CacheHandle, HeadSlot};
pub use head::HeadCache;
pub use memory::{memory_report, HeadEntryCount, MemoryReport, ELEMENT_WIDTH};
pub use policy::{budget_entries, CachePolicyConfig, HeadKind, PolicyKind};
