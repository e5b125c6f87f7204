use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::{HeadLabel, HeadPartition};

/// Which eviction family a cache handle runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Full,
    Streaming,
    H2o,
    Ssd,
    #[serde(alias = "ssd_buffer")]
    SsdBuffer,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Full,
        PolicyKind::Streaming,
        PolicyKind::H2o,
        PolicyKind::Ssd,
        PolicyKind::SsdBuffer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Full => "full",
            PolicyKind::Streaming => "streaming",
            PolicyKind::H2o => "h2o",
            PolicyKind::Ssd => "ssd",
            PolicyKind::SsdBuffer => "ssd-buffer",
        }
    }

    pub fn needs_partition(self) -> bool {
        matches!(self, PolicyKind::Ssd | PolicyKind::SsdBuffer)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PolicyKind::Full),
            "streaming" => Ok(PolicyKind::Streaming),
            "h2o" => Ok(PolicyKind::H2o),
            "ssd" => Ok(PolicyKind::Ssd),
            "ssd-buffer" | "ssd_buffer" => Ok(PolicyKind::SsdBuffer),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}

/// Per-head eviction rule, resolved from the policy and (for SSD) the
/// head partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Full,
    /// Sink tokens plus a sliding window (streaming baseline).
    Streaming,
    /// Heavy hitters by accumulated attention plus a recent window (H2O baseline).
    H2o,
    /// SSD head with sliding-window retention.
    Spatial,
    /// SSD head with heavy-hitter retention.
    Semantic,
}

impl HeadKind {
    pub fn is_windowed(self) -> bool {
        matches!(self, HeadKind::Streaming | HeadKind::Spatial)
    }

    pub fn tracks_scores(self) -> bool {
        matches!(self, HeadKind::H2o | HeadKind::Semantic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachePolicyConfig {
    pub policy: PolicyKind,
    /// Sliding window for Spatial/Streaming heads, counting the newest entry.
    pub window: usize,
    /// Heavy-hitter budget `M` for Semantic/H2O heads.
    pub budget: usize,
    /// Recent window `R` exempt from heavy-hitter eviction.
    pub recent: usize,
    /// Leading stream tokens always kept by windowed heads.
    pub sink: usize,
    /// Row-buffer capacity for `ssd-buffer`.
    pub buffer_rows: usize,
    /// Never evict prefix (prompt) positions.
    pub pin_prompt: bool,
    pub partition: Option<HeadPartition>,
}

impl Default for CachePolicyConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Full,
            window: 32,
            budget: 32,
            recent: 32,
            sink: 1,
            buffer_rows: 24,
            pin_prompt: true,
            partition: None,
        }
    }
}

impl CachePolicyConfig {
    pub fn full() -> Self {
        Self::default()
    }

    /// Maps a fractional budget onto per-head limits so every policy keeps
    /// the same number of visual entries per head.
    ///
    /// `per_head = ceil(fraction * n_visual)`. Windowed heads get
    /// `window = per_head - sink`; heavy-hitter heads get
    /// `recent = min(window, per_head)` and `budget = per_head - recent`
    /// (at least 1).
    pub fn with_budget_fraction(
        policy: PolicyKind,
        fraction: f64,
        n_visual: usize,
        window: usize,
        sink: usize,
    ) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "budget fraction must be in (0, 1], got {fraction}"
            )));
        }
        let per_head = budget_entries(fraction, n_visual);
        let recent = window.min(per_head);
        Ok(Self {
            policy,
            window: per_head.saturating_sub(sink).max(1),
            budget: (per_head - recent).max(1),
            recent,
            sink,
            ..Self::default()
        })
    }

    pub fn with_partition(mut self, partition: HeadPartition) -> Self {
        self.partition = Some(partition);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.budget < 1 {
            return Err(Error::Config("budget must be >= 1".into()));
        }
        if self.buffer_rows < 1 {
            return Err(Error::Config("buffer_rows must be >= 1".into()));
        }
        if self.policy.needs_partition() && self.partition.is_none() {
            return Err(Error::Config(format!(
                "policy {} requires a head partition",
                self.policy
            )));
        }
        Ok(())
    }

    /// Resolves the rule one head follows.
    pub fn head_kind(&self, layer: usize, head: usize) -> HeadKind {
        match self.policy {
            PolicyKind::Full => HeadKind::Full,
            PolicyKind::Streaming => HeadKind::Streaming,
            PolicyKind::H2o => HeadKind::H2o,
            PolicyKind::Ssd | PolicyKind::SsdBuffer => {
                match self.partition.as_ref().map(|p| p.label(layer, head)) {
                    Some(HeadLabel::Semantic) => HeadKind::Semantic,
                    _ => HeadKind::Spatial,
                }
            }
        }
    }

    pub fn is_buffered(&self) -> bool {
        self.policy == PolicyKind::SsdBuffer
    }

    /// Upper bound on committed entries for a head of `kind` once
    /// `pinned` prefix entries are resident; `None` means unbounded.
    pub fn retention_bound(&self, kind: HeadKind, pinned: usize) -> Option<usize> {
        match kind {
            HeadKind::Full => None,
            HeadKind::Streaming | HeadKind::Spatial => Some(pinned + self.sink + self.window),
            HeadKind::H2o | HeadKind::Semantic => Some(pinned + self.budget + self.recent + 1),
        }
    }
}

/// `ceil(fraction * n)`, robust to the representation error of decimal
/// fractions such as 0.2.
pub fn budget_entries(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.as_str().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("ssd_buffer".parse::<PolicyKind>().unwrap(), PolicyKind::SsdBuffer);
        assert!("lru".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn twenty_percent_of_576() {
        assert_eq!(budget_entries(0.2, 576), 116);
        assert_eq!(budget_entries(0.2, 2304), 461);
        assert_eq!(budget_entries(0.25, 64), 16);
        let c = CachePolicyConfig::with_budget_fraction(PolicyKind::Ssd, 0.2, 576, 32, 1).unwrap();
        assert_eq!((c.window, c.recent, c.budget), (115, 32, 84));
    }

    #[test]
    fn ssd_without_partition_is_rejected() {
        let c = CachePolicyConfig {
            policy: PolicyKind::Ssd,
            ..CachePolicyConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
