use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::partition::parse_field;
use super::trace::AttentionTrace;
use crate::error::{Error, Result};
use crate::numerics::pairwise_sum;

/// What was averaged to produce a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMeta {
    /// Number of prompts averaged over.
    pub prompts: usize,
    /// Visual steps per prompt (the per-prompt `T`), in prompt order.
    pub steps_per_prompt: Vec<usize>,
    /// Recency window `w`.
    pub window: usize,
    /// Steps whose query had no position older than the window; they enter
    /// the average with ratio 0.
    pub short_steps: usize,
    /// CFG branch the trace was captured from.
    pub branch: String,
}

/// Per-head sparsity, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityProfile {
    n_layers: usize,
    n_heads: usize,
    values: Vec<f64>,
    meta: Option<SparsityMeta>,
}

impl SparsityProfile {
    pub fn from_values(n_layers: usize, n_heads: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_layers * n_heads {
            return Err(Error::Shape(format!(
                "{} sparsity values for {n_layers}x{n_heads} heads",
                values.len()
            )));
        }
        if values.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Input("sparsity values must lie in [0, 1]".into()));
        }
        Ok(Self {
            n_layers,
            n_heads,
            values,
            meta: None,
        })
    }

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

    pub fn meta(&self) -> Option<&SparsityMeta> {
        self.meta.as_ref()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "head", "sparsity"])?;
        for layer in 0..self.n_layers {
            for head in 0..self.n_heads {
                w.write_record([
                    layer.to_string(),
                    head.to_string(),
                    self.get(layer, head).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(li), Some(hi), Some(si)) = (col("layer"), col("head"), col("sparsity")) else {
            return Err(Error::Input("profile csv needs layer, head and sparsity columns".into()));
        };
        let mut cells = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let key: (usize, usize) = (parse_field(f(li), "layer")?, parse_field(f(hi), "head")?);
            let s: f64 = parse_field(f(si), "sparsity")?;
            if cells.insert(key, s).is_some() {
                return Err(Error::Input(format!("duplicate row for {key:?}")));
            }
        }
        let n_layers = cells.keys().map(|k| k.0).max().map_or(0, |m| m + 1);
        let n_heads = cells.keys().map(|k| k.1).max().map_or(0, |m| m + 1);
        if cells.is_empty() || cells.len() != n_layers * n_heads {
            return Err(Error::Input("profile csv does not cover a full layer x head grid".into()));
        }
        Self::from_values(n_layers, n_heads, cells.into_values().collect())
    }
}

/// Per-step ratio of attention mass older than the recency window to all
/// mass on past positions, for a query at `query` (the query's own mass
/// is excluded from both sums). Returns `(ratio, short)` where `short`
/// flags a step with no position older than the window.
pub(crate) fn step_ratio(positions: &[usize], probs: &[f64], query: usize, window: usize) -> (f64, bool) {
    let cutoff = query.checked_sub(1 + window);
    let mut past = 0.0;
    let mut old = 0.0;
    for (&p, &a) in positions.iter().zip(probs) {
        if p < query {
            past += a;
            if cutoff.is_some_and(|c| p <= c) {
                old += a;
            }
        }
    }
    let ratio = if past > 0.0 { old / past } else { 0.0 };
    (ratio.clamp(0.0, 1.0), cutoff.is_none())
}

/// Sparsity per head: for every prompt, the mean over its visual steps of
/// [`step_ratio`]; then the mean over prompts. Prompt sums are merged with
/// a fixed pairwise reduction.
pub fn sparsity(trace: &AttentionTrace, window: usize) -> Result<SparsityProfile> {
    let visual: Vec<_> = trace.records().iter().filter(|r| r.is_visual()).collect();
    if visual.is_empty() {
        return Err(Error::Input("trace holds no visual-token steps".into()));
    }
    let n_heads = trace.n_heads();
    let n_cells = trace.n_layers() * n_heads;

    // prompt -> per-head (ratio sum, step count)
    let mut per_prompt: BTreeMap<usize, Vec<(Vec<f64>, usize)>> = BTreeMap::new();
    let mut short_steps = 0;
    let mut steps: BTreeMap<usize, std::collections::BTreeSet<usize>> = BTreeMap::new();
    for r in &visual {
        let cells = per_prompt
            .entry(r.prompt)
            .or_insert_with(|| vec![(Vec::new(), 0); n_cells]);
        let (ratio, short) = step_ratio(&r.positions, &r.probs, r.position, window);
        let cell = &mut cells[r.layer * n_heads + r.head];
        cell.0.push(ratio);
        cell.1 += 1;
        if short {
            short_steps += 1;
        }
        steps.entry(r.prompt).or_default().insert(r.position);
    }

    let mut values = Vec::with_capacity(n_cells);
    for cell in 0..n_cells {
        let means: Vec<f64> = per_prompt
            .values()
            .filter(|cells| cells[cell].1 > 0)
            .map(|cells| pairwise_sum(&cells[cell].0) / cells[cell].1 as f64)
            .collect();
        if means.is_empty() {
            return Err(Error::Input(format!(
                "no visual steps recorded for layer {} head {}",
                cell / n_heads,
                cell % n_heads
            )));
        }
        values.push((pairwise_sum(&means) / means.len() as f64).clamp(0.0, 1.0));
    }

    let mut profile = SparsityProfile::from_values(trace.n_layers(), n_heads, values)?;
    profile.meta = Some(SparsityMeta {
        prompts: per_prompt.len(),
        steps_per_prompt: steps.values().map(|s| s.len()).collect(),
        window,
        short_steps: short_steps / n_cells.max(1),
        branch: trace.branch().to_string(),
    });
    Ok(profile)
}
