//! Offline evaluation of eviction policies against recorded attention.
//!
//! A trace is replayed through a key/value-free cache (`d_head = 0`): each
//! recorded step first scores how much of its attention mass fell on
//! positions the policy still holds, then feeds that attention into the
//! policy's eviction logic exactly as live decoding would.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kvcache::{CacheHandle, CachePolicyConfig};
use crate::numerics::pairwise_sum;
use crate::profiler::{AttentionTrace, TraceRecord};

/// Per-head share of recorded attention mass that landed on retained
/// positions (or the current token), averaged over visual steps per
/// prompt and then over prompts. Layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionReport {
    n_layers: usize,
    n_heads: usize,
    values: Vec<f64>,
    prompts: usize,
}

impl RetentionReport {
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.n_heads + head]
    }

    pub fn prompts(&self) -> usize {
        self.prompts
    }

    /// Mean over heads.
    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// CSV with columns `layer,head,retained_mass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "head", "retained_mass"])?;
        for layer in 0..self.n_layers {
            for head in 0..self.n_heads {
                w.write_record([layer.to_string(), head.to_string(), self.get(layer, head).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Replays every prompt of `trace` under `policy`.
///
/// Each prompt must cover positions `0, 1, 2, ...` without gaps, with one
/// record per head at every position; prefill positions drive the cache
/// but are not scored.
pub fn trace_replay(trace: &AttentionTrace, policy: &CachePolicyConfig) -> Result<RetentionReport> {
    let (n_layers, n_heads) = (trace.n_layers(), trace.n_heads());
    let cells = n_layers * n_heads;
    if let Some(p) = &policy.partition {
        if p.n_layers() != n_layers || p.n_heads() != n_heads {
            return Err(Error::Input(format!(
                "partition covers {}x{} heads, trace has {n_layers}x{n_heads}",
                p.n_layers(),
                p.n_heads()
            )));
        }
    }

    let mut order: Vec<&TraceRecord> = trace.records().iter().collect();
    order.sort_by_key(|r| (r.prompt, r.position, r.layer, r.head));

    let mut per_prompt: Vec<Vec<f64>> = Vec::new();
    for prompt_records in order.chunk_by(|a, b| a.prompt == b.prompt) {
        let prompt = prompt_records[0].prompt;
        let prefix_len = prompt_records[0].prefix_len;
        let mut cache = CacheHandle::new(policy.clone(), n_layers, n_heads, 0, prefix_len)?;
        let mut sums = vec![0.0; cells];
        let mut steps = 0usize;
        for step in prompt_records.chunk_by(|a, b| a.position == b.position) {
            let position = step[0].position;
            if position != cache.fed() {
                return Err(Error::Input(format!(
                    "prompt {prompt}: expected position {}, found {position}",
                    cache.fed()
                )));
            }
            if step.len() != cells || step.iter().any(|r| r.prefix_len != prefix_len) {
                return Err(Error::Input(format!(
                    "prompt {prompt} position {position}: need one record per head with a common prefix length"
                )));
            }
            let visual = position >= prefix_len;
            for (cell, r) in step.iter().enumerate() {
                if r.layer * n_heads + r.head != cell {
                    return Err(Error::Input(format!(
                        "prompt {prompt} position {position}: duplicate or missing head records"
                    )));
                }
                let resident = cache.slot(r.layer, r.head).positions();
                let attention: Vec<f64> = resident.iter().map(|&p| prob_at(r, p)).collect();
                if visual {
                    sums[cell] += pairwise_sum(&attention) + prob_at(r, position);
                }
                cache.update_head(r.layer, r.head, &[], &[], &attention)?;
            }
            if visual {
                steps += 1;
            }
            cache.advance();
        }
        if steps == 0 {
            return Err(Error::Input(format!("prompt {prompt} has no visual steps")));
        }
        per_prompt.push(sums.into_iter().map(|s| s / steps as f64).collect());
    }
    if per_prompt.is_empty() {
        return Err(Error::Input("trace has no records".into()));
    }

    let prompts = per_prompt.len();
    let values = (0..cells)
        .map(|c| {
            let column: Vec<f64> = per_prompt.iter().map(|v| v[c]).collect();
            pairwise_sum(&column) / prompts as f64
        })
        .collect();
    Ok(RetentionReport {
        n_layers,
        n_heads,
        values,
        prompts,
    })
}

fn prob_at(r: &TraceRecord, position: usize) -> f64 {
    r.positions
        .binary_search(&position)
        .map(|i| r.probs[i])
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvcache::PolicyKind;
    use crate::profiler::{HeadLabel, HeadPartition};

    /// One head, prefix 1, every visual step puts all mass on the previous
    /// token.
    fn previous_token_trace(len: usize) -> AttentionTrace {
        let mut t = AttentionTrace::new(1, 1, "test");
        for q in 0..len {
            let (positions, probs) = if q == 0 {
                (vec![0], vec![1.0])
            } else {
                ((0..=q).collect(), (0..=q).map(|p| if p + 1 == q { 1.0 } else { 0.0 }).collect())
            };
            t.push(TraceRecord {
                prompt: 0,
                position: q,
                prefix_len: 1,
                layer: 0,
                head: 0,
                positions,
                probs,
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn full_policy_keeps_all_mass() {
        let r = trace_replay(&previous_token_trace(12), &CachePolicyConfig::full()).unwrap();
        assert_eq!(r.values(), &[1.0]);
    }

    #[test]
    fn spatial_window_keeps_previous_token() {
        let cfg = CachePolicyConfig {
            policy: PolicyKind::Ssd,
            window: 1,
            sink: 0,
            partition: Some(HeadPartition::uniform(1, 1, HeadLabel::Spatial)),
            ..CachePolicyConfig::default()
        };
        let r = trace_replay(&previous_token_trace(12), &cfg).unwrap();
        assert_eq!(r.values(), &[1.0]);
    }

    #[test]
    fn gap_in_positions_is_rejected() {
        let mut t = AttentionTrace::new(1, 1, "test");
        for q in [0usize, 2] {
            t.push(TraceRecord {
                prompt: 0,
                position: q,
                prefix_len: 1,
                layer: 0,
                head: 0,
                positions: vec![q],
                probs: vec![1.0],
            })
            .unwrap();
        }
        assert!(matches!(
            trace_replay(&t, &CachePolicyConfig::full()),
            Err(Error::Input(_))
        ));
    }
}
