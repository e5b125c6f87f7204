use super::buffer::{append_buffered, flush, RowBuffer};
use super::head::HeadCache;
use super::policy::CachePolicyConfig;
use crate::error::{Error, Result};

/// One head's committed cache plus, for `ssd-buffer`, its row buffer.
#[derive(Debug, Clone)]
pub struct HeadSlot {
    cache: HeadCache,
    buffer: Option<RowBuffer>,
}

impl HeadSlot {
    pub fn cache(&self) -> &HeadCache {
        &self.cache
    }

    pub fn buffer(&self) -> Option<&RowBuffer> {
        self.buffer.as_ref()
    }

    /// Resident entries: committed plus staged.
    pub fn len(&self) -> usize {
        self.cache.len() + self.buffer.as_ref().map_or(0, RowBuffer::fill)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Resident positions in attention order (committed, then staged).
    pub fn positions(&self) -> Vec<usize> {
        let mut out = self.cache.positions().to_vec();
        if let Some(b) = &self.buffer {
            out.extend_from_slice(b.positions());
        }
        out
    }
}

/// The full per-layer, per-head cache state of one generation stream.
///
/// Entries are appended at absolute positions `0, 1, 2, ...`; positions
/// below `prefix_len` form the prefill (prompt) region.
#[derive(Debug, Clone)]
pub struct CacheHandle {
    policy: CachePolicyConfig,
    n_layers: usize,
    n_heads: usize,
    d_head: usize,
    prefix_len: usize,
    fed: usize,
    slots: Vec<HeadSlot>,
}

impl CacheHandle {
    pub fn new(
        policy: CachePolicyConfig,
        n_layers: usize,
        n_heads: usize,
        d_head: usize,
        prefix_len: usize,
    ) -> Result<Self> {
        policy.validate()?;
        if let Some(p) = &policy.partition {
            if p.n_layers() != n_layers || p.n_heads() != n_heads {
                return Err(Error::Config(format!(
                    "partition covers {}x{} heads, model has {n_layers}x{n_heads}",
                    p.n_layers(),
                    p.n_heads()
                )));
            }
        }
        let pinned = if policy.pin_prompt { prefix_len } else { 0 };
        let mut slots = Vec::with_capacity(n_layers * n_heads);
        for layer in 0..n_layers {
            for head in 0..n_heads {
                let kind = policy.head_kind(layer, head);
                slots.push(HeadSlot {
                    cache: HeadCache::new(layer, head, kind, d_head, pinned),
                    buffer: policy
                        .is_buffered()
                        .then(|| RowBuffer::new(policy.buffer_rows, d_head)),
                });
            }
        }
        Ok(Self {
            policy,
            n_layers,
            n_heads,
            d_head,
            prefix_len,
            fed: 0,
            slots,
        })
    }

    pub fn policy(&self) -> &CachePolicyConfig {
        &self.policy
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    /// Number of tokens fed so far; also the next absolute position.
    pub fn fed(&self) -> usize {
        self.fed
    }

    pub fn slots(&self) -> &[HeadSlot] {
        &self.slots
    }

    pub fn slot(&self, layer: usize, head: usize) -> &HeadSlot {
        &self.slots[layer * self.n_heads + head]
    }

    /// Resident key plus value scalars over every head.
    pub fn retained_scalars(&self) -> usize {
        self.slots.iter().map(HeadSlot::len).sum::<usize>() * self.d_head * 2
    }

    /// Appends the current token's key/value for one head at position
    /// [`fed`](Self::fed) and applies the policy.
    ///
    /// `attention` holds this step's probabilities over the slot's resident
    /// entries (committed, then staged), excluding the current token. It is
    /// forwarded only to heads that accumulate scores.
    pub fn update_head(
        &mut self,
        layer: usize,
        head: usize,
        key: &[f64],
        value: &[f64],
        attention: &[f64],
    ) -> Result<()> {
        let position = self.fed;
        let in_prefill = position < self.prefix_len;
        let policy = &self.policy;
        let slot = &mut self.slots[layer * self.n_heads + head];
        let resident = slot.len();
        let attn = (slot.cache.kind().tracks_scores() && resident > 0).then_some(attention);
        match &mut slot.buffer {
            Some(buffer) if !in_prefill => {
                append_buffered(&mut slot.cache, policy, buffer, key, value, position, attn)
            }
            _ => slot.cache.append_and_evict(policy, key, value, position, attn),
        }
    }

    /// Marks the current position as fed to every head.
    pub fn advance(&mut self) {
        self.fed += 1;
        if self.fed == self.prefix_len {
            self.flush_buffers();
        }
    }

    /// Forces a compaction of every non-empty row buffer.
    pub fn flush_buffers(&mut self) {
        let policy = &self.policy;
        for slot in &mut self.slots {
            if let Some(b) = &mut slot.buffer {
                flush(&mut slot.cache, policy, b);
            }
        }
    }
}
