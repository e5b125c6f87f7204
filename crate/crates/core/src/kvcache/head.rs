use super::policy::{CachePolicyConfig, HeadKind};
use crate::error::{Error, Result};

/// Retained K/V entries of one attention head, in strictly increasing
/// absolute position order.
///
/// Keys and values are stored flat (`len * d_head` each). Every entry
/// carries an accumulated attention score; only heavy-hitter kinds ever
/// fold attention into it.
#[derive(Debug, Clone)]
pub struct HeadCache {
    layer: usize,
    head: usize,
    kind: HeadKind,
    d_head: usize,
    pinned_prefix_len: usize,
    positions: Vec<usize>,
    keys: Vec<f64>,
    values: Vec<f64>,
    scores: Vec<f64>,
    scratch: Vec<usize>,
}

impl HeadCache {
    /// Positions below `pinned_prefix_len` are never evicted.
    pub fn new(layer: usize, head: usize, kind: HeadKind, d_head: usize, pinned_prefix_len: usize) -> Self {
        Self {
            layer,
            head,
            kind,
            d_head,
            pinned_prefix_len,
            positions: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
            scores: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn pinned_prefix_len(&self) -> usize {
        self.pinned_prefix_len
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
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

    pub fn key(&self, i: usize) -> &[f64] {
        &self.keys[i * self.d_head..(i + 1) * self.d_head]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_head..(i + 1) * self.d_head]
    }

    pub fn last_position(&self) -> Option<usize> {
        self.positions.last().copied()
    }

    /// Resident entries whose position is pinned.
    pub fn pinned_count(&self) -> usize {
        self.positions.partition_point(|&p| p < self.pinned_prefix_len)
    }

    /// Overwrites accumulated scores; used to seed caches in tests and
    /// offline tools.
    pub fn set_scores(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::Consistency(format!(
                "{} scores for {} entries",
                scores.len(),
                self.len()
            )));
        }
        self.scores.copy_from_slice(scores);
        Ok(())
    }

    /// One decode step of the head's retention rule.
    ///
    /// * Full: append.
    /// * Streaming/Spatial: append, then keep the sinks (and pinned prefix)
    ///   plus the newest `window` entries.
    /// * H2O/Semantic: add `last_attention` to the running score sums, keep
    ///   the pinned prefix, the newest `recent` entries and the `budget`
    ///   best-scored remaining entries (ties go to the lower position),
    ///   then append the new entry with a zero score.
    ///
    /// `last_attention` must be given exactly when the head tracks scores
    /// and already holds entries; its length must equal `len()`.
    pub fn append_and_evict(
        &mut self,
        cfg: &CachePolicyConfig,
        key: &[f64],
        value: &[f64],
        position: usize,
        last_attention: Option<&[f64]>,
    ) -> Result<()> {
        self.check_entry(key, value, position)?;
        self.check_attention(last_attention, self.len())?;
        match self.kind {
            HeadKind::Full => self.push(key, value, position, 0.0),
            HeadKind::Streaming | HeadKind::Spatial => {
                self.push(key, value, position, 0.0);
                self.evict_window(cfg);
            }
            HeadKind::H2o | HeadKind::Semantic => {
                if let Some(a) = last_attention {
                    self.fold_scores(a);
                }
                self.evict_heavy(cfg);
                self.push(key, value, position, 0.0);
            }
        }
        Ok(())
    }

    pub(crate) fn check_entry(&self, key: &[f64], value: &[f64], position: usize) -> Result<()> {
        if key.len() != self.d_head || value.len() != self.d_head {
            return Err(Error::Shape(format!(
                "key/value of length {}/{} for d_head {}",
                key.len(),
                value.len(),
                self.d_head
            )));
        }
        if let Some(last) = self.last_position() {
            if position <= last {
                return Err(Error::Sequencing(format!(
                    "position {position} does not follow retained position {last} (layer {} head {})",
                    self.layer, self.head
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_attention(&self, attention: Option<&[f64]>, expected: usize) -> Result<()> {
        let wants = self.kind.tracks_scores() && expected > 0;
        match attention {
            Some(a) if !wants => Err(Error::Consistency(format!(
                "attention supplied to a {:?} head that does not take it (layer {} head {}, {} entries)",
                self.kind,
                self.layer,
                self.head,
                a.len()
            ))),
            None if wants => Err(Error::Consistency(format!(
                "heavy-hitter head (layer {} head {}) needs attention over {expected} entries",
                self.layer, self.head
            ))),
            Some(a) if a.len() != expected => Err(Error::Consistency(format!(
                "attention over {} entries, but {expected} are retained (layer {} head {})",
                a.len(),
                self.layer,
                self.head
            ))),
            _ => Ok(()),
        }
    }

    pub(crate) fn push(&mut self, key: &[f64], value: &[f64], position: usize, score: f64) {
        self.positions.push(position);
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.scores.push(score);
    }

    pub(crate) fn fold_scores(&mut self, attention: &[f64]) {
        for (s, a) in self.scores.iter_mut().zip(attention) {
            *s += a;
        }
    }

    /// Keeps protected leading entries (pinned prefix or sinks, whichever
    /// is longer) plus the newest `window` entries.
    pub(crate) fn evict_window(&mut self, cfg: &CachePolicyConfig) {
        let n = self.len();
        let protected = self.pinned_count().max(cfg.sink.min(n));
        if n - protected > cfg.window {
            self.remove_range(protected, n - cfg.window);
        }
    }

    /// Heavy-hitter selection over the unpinned, non-recent pool.
    pub(crate) fn evict_heavy(&mut self, cfg: &CachePolicyConfig) {
        let n = self.len();
        let pinned = self.pinned_count();
        let recent = cfg.recent.min(n - pinned);
        let pool_end = n - recent;
        if pool_end - pinned <= cfg.budget {
            return;
        }
        let mut idx = std::mem::take(&mut self.scratch);
        idx.clear();
        idx.extend(pinned..pool_end);
        let scores = &self.scores;
        let positions = &self.positions;
        idx.select_nth_unstable_by(cfg.budget, |&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(positions[a].cmp(&positions[b]))
        });
        idx.truncate(cfg.budget);
        idx.sort_unstable();
        // Append the always-kept tail so the compaction walks one sorted list.
        idx.extend(pool_end..n);
        self.compact((0..pinned).chain(idx.iter().copied()));
        self.scratch = idx;
    }

    /// Drops entries `[start, end)`, shifting the tail down.
    fn remove_range(&mut self, start: usize, end: usize) {
        let d = self.d_head;
        let n = self.len();
        self.positions.copy_within(end..n, start);
        self.scores.copy_within(end..n, start);
        self.keys.copy_within(end * d..n * d, start * d);
        self.values.copy_within(end * d..n * d, start * d);
        let new_len = n - (end - start);
        self.truncate(new_len);
    }

    /// Keeps exactly the entries at `keep` (strictly increasing indices),
    /// preserving order.
    fn compact(&mut self, keep: impl Iterator<Item = usize>) {
        let d = self.d_head;
        let mut w = 0;
        for r in keep {
            if r != w {
                self.positions[w] = self.positions[r];
                self.scores[w] = self.scores[r];
                self.keys.copy_within(r * d..(r + 1) * d, w * d);
                self.values.copy_within(r * d..(r + 1) * d, w * d);
            }
            w += 1;
        }
        self.truncate(w);
    }

    fn truncate(&mut self, len: usize) {
        self.positions.truncate(len);
        self.scores.truncate(len);
        self.keys.truncate(len * self.d_head);
        self.values.truncate(len * self.d_head);
    }
}
