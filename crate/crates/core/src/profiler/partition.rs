use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sparsity::SparsityProfile;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadLabel {
    Spatial,
    Semantic,
}

impl fmt::Display for HeadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadLabel::Spatial => "spatial",
            HeadLabel::Semantic => "semantic",
        })
    }
}

impl FromStr for HeadLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spatial" => Ok(HeadLabel::Spatial),
            "semantic" => Ok(HeadLabel::Semantic),
            other => Err(Error::Input(format!("unknown head label {other:?}"))),
        }
    }
}

/// Spatial/Semantic assignment for every (layer, head), stored layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPartition {
    n_layers: usize,
    n_heads: usize,
    labels: Vec<HeadLabel>,
    sparsity: Option<Vec<f64>>,
    /// Threshold that produced the labels; `None` for partitions not derived
    /// from a threshold (random ablation, hand-written files).
    tau: Option<f64>,
}

impl HeadPartition {
    pub fn new(n_layers: usize, n_heads: usize, labels: Vec<HeadLabel>) -> Result<Self> {
        if labels.len() != n_layers * n_heads {
            return Err(Error::Shape(format!(
                "{} labels for {n_layers} layers x {n_heads} heads",
                labels.len()
            )));
        }
        Ok(Self {
            n_layers,
            n_heads,
            labels,
            sparsity: None,
            tau: None,
        })
    }

    /// Every head gets the same label.
    pub fn uniform(n_layers: usize, n_heads: usize, label: HeadLabel) -> Self {
        Self {
            n_layers,
            n_heads,
            labels: vec![label; n_layers * n_heads],
            sparsity: None,
            tau: None,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn labels(&self) -> &[HeadLabel] {
        &self.labels
    }

    pub fn label(&self, layer: usize, head: usize) -> HeadLabel {
        self.labels[layer * self.n_heads + head]
    }

    pub fn count(&self, label: HeadLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// Fraction of heads on which two partitions agree.
    pub fn agreement(&self, other: &HeadPartition) -> f64 {
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.labels.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "head", "sparsity", "label", "tau"])?;
        for layer in 0..self.n_layers {
            for head in 0..self.n_heads {
                let i = layer * self.n_heads + head;
                let s = self
                    .sparsity
                    .as_ref()
                    .map(|s| s[i].to_string())
                    .unwrap_or_default();
                let tau = self.tau.map(|t| t.to_string()).unwrap_or_default();
                w.write_record([
                    layer.to_string(),
                    head.to_string(),
                    s,
                    self.labels[i].to_string(),
                    tau,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a partition CSV. `#` lines are comments. Required columns are
    /// `layer`, `head` and `label`; `sparsity` and `tau` are optional. Every
    /// (layer, head) pair in the rectangle spanned by the file must appear
    /// exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (li, hi, lab) = match (col("layer"), col("head"), col("label")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Input(
                    "partition csv needs layer, head and label columns".into(),
                ))
            }
        };
        let si = col("sparsity");
        let ti = col("tau");

        let mut rows = Vec::new();
        let mut tau = None;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let layer: usize = parse_field(field(li), "layer")?;
            let head: usize = parse_field(field(hi), "head")?;
            let label: HeadLabel = field(lab).parse()?;
            let s = match si.map(field) {
                Some(v) if !v.is_empty() => Some(parse_field::<f64>(v, "sparsity")?),
                _ => None,
            };
            if let Some(v) = ti.map(field).filter(|v| !v.is_empty()) {
                tau = Some(parse_field::<f64>(v, "tau")?);
            }
            rows.push((layer, head, label, s));
        }
        if rows.is_empty() {
            return Err(Error::Input("partition csv has no rows".into()));
        }
        let n_layers = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let n_heads = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        let mut labels = vec![None; n_layers * n_heads];
        let mut sparsity = vec![None; n_layers * n_heads];
        for (layer, head, label, s) in rows {
            let i = layer * n_heads + head;
            if labels[i].replace(label).is_some() {
                return Err(Error::Input(format!("duplicate row for layer {layer} head {head}")));
            }
            sparsity[i] = s;
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| {
                    Error::Input(format!(
                        "missing row for layer {} head {}",
                        i / n_heads,
                        i % n_heads
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sparsity = sparsity.into_iter().collect::<Option<Vec<f64>>>();
        Ok(Self {
            n_layers,
            n_heads,
            labels,
            sparsity,
            tau,
        })
    }
}

pub(crate) fn parse_field<T: FromStr>(v: &str, what: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Input(format!("bad {what} value {v:?}")))
}

/// Threshold classification: strictly above `tau` is Semantic.
pub fn classify(profile: &SparsityProfile, tau: f64) -> HeadPartition {
    let labels = profile
        .values()
        .iter()
        .map(|&s| {
            if s > tau {
                HeadLabel::Semantic
            } else {
                HeadLabel::Spatial
            }
        })
        .collect();
    HeadPartition {
        n_layers: profile.n_layers(),
        n_heads: profile.n_heads(),
        labels,
        sparsity: Some(profile.values().to_vec()),
        tau: Some(tau),
    }
}

/// Ablation partition: same number of Semantic heads as `reference`, with
/// the assignment shuffled by a seeded Fisher-Yates pass.
pub fn random_partition(reference: &HeadPartition, seed: u64) -> HeadPartition {
    let mut labels = reference.labels.clone();
    Rng::new(seed).shuffle(&mut labels);
    HeadPartition {
        labels,
        tau: None,
        ..reference.clone()
    }
}
