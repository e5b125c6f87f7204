//! Row-buffered retention: new entries are staged and eviction runs only
//! when the buffer fills, amortising compaction over `capacity` steps.

use super::head::HeadCache;
use super::policy::{CachePolicyConfig, HeadKind};
use crate::error::{Error, Result};

/// Staged entries awaiting the next compaction of their head.
#[derive(Debug, Clone)]
pub struct RowBuffer {
    capacity: usize,
    d_head: usize,
    positions: Vec<usize>,
    keys: Vec<f64>,
    values: Vec<f64>,
    scores: Vec<f64>,
    full: bool,
}

impl RowBuffer {
    pub fn new(capacity: usize, d_head: usize) -> Self {
        Self {
            capacity,
            d_head,
            positions: Vec::with_capacity(capacity),
            keys: Vec::with_capacity(capacity * d_head),
            values: Vec::with_capacity(capacity * d_head),
            scores: Vec::with_capacity(capacity),
            full: false,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn push(&mut self, key: &[f64], value: &[f64], position: usize) {
        self.positions.push(position);
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.scores.push(0.0);
        if self.positions.len() == self.capacity {
            self.full = true;
        }
    }

    fn reset(&mut self) {
        self.positions.clear();
        self.keys.clear();
        self.values.clear();
        self.scores.clear();
        self.full = false;
    }
}

/// One decode step with staging.
///
/// The new entry goes into `buffer`. Attention for this step covers the
/// committed cache followed by the staged entries (in that order), and is
/// folded into the scores of both for heavy-hitter heads. When the buffer
/// reaches capacity it is flushed through [`flush`].
pub fn append_buffered(
    cache: &mut HeadCache,
    cfg: &CachePolicyConfig,
    buffer: &mut RowBuffer,
    key: &[f64],
    value: &[f64],
    position: usize,
    last_attention: Option<&[f64]>,
) -> Result<()> {
    if buffer.fill() >= buffer.capacity {
        return Err(Error::RowBufferOverflow {
            fill: buffer.fill(),
            capacity: buffer.capacity,
        });
    }
    cache.check_entry(key, value, position)?;
    if let Some(&last) = buffer.positions.last() {
        if position <= last {
            return Err(Error::Sequencing(format!(
                "position {position} does not follow staged position {last}"
            )));
        }
    }
    if key.len() != buffer.d_head {
        return Err(Error::Shape("row buffer width differs from the head".into()));
    }
    let committed = cache.len();
    cache.check_attention(last_attention, committed + buffer.fill())?;
    if let Some(a) = last_attention {
        let (head_part, staged_part) = a.split_at(committed);
        cache.fold_scores(head_part);
        for (s, x) in buffer.scores.iter_mut().zip(staged_part) {
            *s += x;
        }
    }
    buffer.push(key, value, position);
    if buffer.is_full() {
        flush(cache, cfg, buffer);
    }
    Ok(())
}

/// Moves staged entries into the cache and runs one compaction over the
/// combined set, treating the newest staged entry as the step's new entry.
/// Leaves the buffer empty.
pub fn flush(cache: &mut HeadCache, cfg: &CachePolicyConfig, buffer: &mut RowBuffer) {
    let n = buffer.fill();
    if n == 0 {
        return;
    }
    let d = buffer.d_head;
    let entry = |i: usize| {
        (
            &buffer.keys[i * d..(i + 1) * d],
            &buffer.values[i * d..(i + 1) * d],
            buffer.positions[i],
            buffer.scores[i],
        )
    };
    for i in 0..n - 1 {
        let (k, v, p, s) = entry(i);
        cache.push(k, v, p, s);
    }
    let (k, v, p, s) = entry(n - 1);
    match cache.kind() {
        HeadKind::Full => cache.push(k, v, p, s),
        HeadKind::Streaming | HeadKind::Spatial => {
            cache.push(k, v, p, s);
            cache.evict_window(cfg);
        }
        HeadKind::H2o | HeadKind::Semantic => {
            cache.evict_heavy(cfg);
            cache.push(k, v, p, s);
        }
    }
    buffer.reset();
}
