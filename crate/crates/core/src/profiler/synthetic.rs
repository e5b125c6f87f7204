//! Synthetic attention traces with a planted head structure, for testing
//! the profiler and replaying eviction policies offline.
//!
//! Local heads put most of their mass on the few most recent positions.
//! Global heads put most of their mass on anchors: the prefix and the
//! margin columns of the visual grid.

use super::partition::{HeadLabel, HeadPartition};
use super::trace::{AttentionTrace, TraceRecord};
use crate::error::Result;
use crate::numerics::Rng;

#[derive(Debug, Clone)]
pub struct PlantedTraceSpec {
    pub n_layers: usize,
    pub n_heads: usize,
    pub prompts: usize,
    pub prefix_len: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Positions a local head spreads its main mass over.
    pub local_span: usize,
    pub seed: u64,
}

impl Default for PlantedTraceSpec {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            prompts: 2,
            prefix_len: 8,
            grid_h: 24,
            grid_w: 24,
            local_span: 8,
            seed: 0,
        }
    }
}

const CURRENT_MASS: f64 = 0.05;
const BACKGROUND_LOCAL: f64 = 0.05;
const BACKGROUND_GLOBAL: f64 = 0.15;

/// Builds a trace covering every position from 0, for every head, plus
/// the partition that was planted (exactly half the heads are global,
/// shuffled).
pub fn planted_trace(spec: &PlantedTraceSpec) -> Result<(AttentionTrace, HeadPartition)> {
    let mut rng = Rng::new(spec.seed);
    let cells = spec.n_layers * spec.n_heads;
    let mut labels: Vec<HeadLabel> = (0..cells)
        .map(|i| {
            if i < cells / 2 {
                HeadLabel::Semantic
            } else {
                HeadLabel::Spatial
            }
        })
        .collect();
    rng.shuffle(&mut labels);
    let partition = HeadPartition::new(spec.n_layers, spec.n_heads, labels)?;
    // Per-head sharpness: decay length for local heads.
    let decay: Vec<f64> = (0..cells).map(|_| rng.uniform(1.5, 4.0)).collect();

    let total = spec.prefix_len + spec.grid_h * spec.grid_w;
    let mut trace = AttentionTrace::new(spec.n_layers, spec.n_heads, "synthetic");
    let mut weights = Vec::new();
    for prompt in 0..spec.prompts {
        for q in 0..total {
            for layer in 0..spec.n_layers {
                for head in 0..spec.n_heads {
                    let cell = layer * spec.n_heads + head;
                    weights.clear();
                    if q == 0 {
                        weights.push(1.0);
                    } else {
                        match partition.label(layer, head) {
                            HeadLabel::Spatial => {
                                local_weights(&mut weights, q, spec.local_span, decay[cell], &mut rng)
                            }
                            HeadLabel::Semantic => global_weights(&mut weights, q, spec, &mut rng),
                        }
                    }
                    trace.push(TraceRecord {
                        prompt,
                        position: q,
                        prefix_len: spec.prefix_len,
                        layer,
                        head,
                        positions: (0..=q).collect(),
                        probs: weights.clone(),
                    })?;
                }
            }
        }
    }
    Ok((trace, partition))
}

/// Fills `w[0..q]` with past mass and `w[q]` with the current token's.
fn local_weights(w: &mut Vec<f64>, q: usize, span: usize, decay: f64, rng: &mut Rng) {
    let span = span.min(q);
    let mut main: Vec<f64> = (0..span)
        .map(|d| (-(d as f64) / decay).exp() * rng.uniform(0.5, 1.5))
        .collect();
    normalize(&mut main, 1.0 - CURRENT_MASS - BACKGROUND_LOCAL);
    w.extend(std::iter::repeat_n(BACKGROUND_LOCAL / q as f64, q));
    for (d, m) in main.iter().enumerate() {
        w[q - 1 - d] += m;
    }
    w.push(CURRENT_MASS);
}

fn global_weights(w: &mut Vec<f64>, q: usize, spec: &PlantedTraceSpec, rng: &mut Rng) {
    let is_anchor = |p: usize| {
        p < spec.prefix_len || {
            let col = (p - spec.prefix_len) % spec.grid_w;
            col == 0 || col + 1 == spec.grid_w
        }
    };
    let mut anchor: Vec<f64> = (0..q)
        .map(|p| if is_anchor(p) { rng.uniform(0.5, 1.5) } else { 0.0 })
        .collect();
    normalize(&mut anchor, 1.0 - CURRENT_MASS - BACKGROUND_GLOBAL);
    w.extend(anchor.iter().map(|a| a + BACKGROUND_GLOBAL / q as f64));
    w.push(CURRENT_MASS);
}

fn normalize(v: &mut [f64], mass: f64) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x *= mass / s;
        }
    }
}
