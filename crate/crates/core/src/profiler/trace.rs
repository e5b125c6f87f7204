//! Recorded attention distributions and their text file format.
//!
//! ```text
//! ssd-trace v1 n_layers=4 n_heads=4 branch=cond
//! prompt position prefix_len layer head entries
//! 0 0 9 0 0 0:1
//! 0 1 9 0 0 0:0.25,1:0.75
//! ```
//!
//! Lines starting with `#` are comments. The first non-comment line fixes
//! the model shape; the second names the columns. Each record is one
//! (prompt, query position, layer, head) with `position:probability`
//! pairs over the attended positions, strictly increasing, the query
//! position itself last. Probabilities are written in shortest round-trip
//! form, so reading a written trace reproduces it exactly.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::HeadAttention;

const MAGIC: &str = "ssd-trace";
const VERSION: &str = "v1";
const COLUMNS: &str = "prompt position prefix_len layer head entries";
const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub prompt: usize,
    /// Absolute position of the query token.
    pub position: usize,
    /// Length of the stream's prefill region; positions at or beyond it are
    /// visual tokens.
    pub prefix_len: usize,
    pub layer: usize,
    pub head: usize,
    pub positions: Vec<usize>,
    pub probs: Vec<f64>,
}

impl TraceRecord {
    pub fn is_visual(&self) -> bool {
        self.position >= self.prefix_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    n_layers: usize,
    n_heads: usize,
    branch: String,
    records: Vec<TraceRecord>,
}

impl AttentionTrace {
    pub fn new(n_layers: usize, n_heads: usize, branch: impl Into<String>) -> Self {
        Self {
            n_layers,
            n_heads,
            branch: branch.into(),
            records: Vec::new(),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    /// Which CFG branch the attention was captured from.
    pub fn branch(&self) -> &str {
        &self.branch
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        self.check(&record)?;
        self.records.push(record);
        Ok(())
    }

    /// Appends one decode step's captured attention.
    pub fn push_step(
        &mut self,
        prompt: usize,
        position: usize,
        prefix_len: usize,
        attention: &[HeadAttention],
    ) -> Result<()> {
        for a in attention {
            self.push(TraceRecord {
                prompt,
                position,
                prefix_len,
                layer: a.layer,
                head: a.head,
                positions: a.positions.clone(),
                probs: a.probs.clone(),
            })?;
        }
        Ok(())
    }

    fn check(&self, r: &TraceRecord) -> Result<()> {
        let fail = |m: String| {
            Err(Error::Input(format!(
                "trace record (prompt {}, position {}, layer {}, head {}): {m}",
                r.prompt, r.position, r.layer, r.head
            )))
        };
        if r.layer >= self.n_layers || r.head >= self.n_heads {
            return fail(format!("outside the {}x{} header", self.n_layers, self.n_heads));
        }
        if r.positions.len() != r.probs.len() || r.positions.is_empty() {
            return fail("positions and probabilities must pair up".into());
        }
        if r.positions.windows(2).any(|w| w[0] >= w[1]) {
            return fail("positions are not strictly increasing".into());
        }
        if r.positions.last() != Some(&r.position) {
            return fail("the query position must be the last attended position".into());
        }
        if r.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return fail("probabilities must be finite and nonnegative".into());
        }
        let mass: f64 = r.probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return fail(format!("probabilities sum to {mass}"));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{MAGIC} {VERSION} n_layers={} n_heads={} branch={}",
            self.n_layers, self.n_heads, self.branch
        )?;
        writeln!(out, "{COLUMNS}")?;
        let mut line = String::new();
        for r in &self.records {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(
                line,
                "{} {} {} {} {} ",
                r.prompt, r.position, r.prefix_len, r.layer, r.head
            );
            for (i, (p, a)) in r.positions.iter().zip(&r.probs).enumerate() {
                if i > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{p}:{a}");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#')));
        let bad = |n: usize, m: &str| Error::Input(format!("trace line {}: {m}", n + 1));

        let (n, header) = lines.next().ok_or_else(|| Error::Input("empty trace file".into()))?;
        let header = header?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) || parts.next() != Some(VERSION) {
            return Err(bad(n, "expected an `ssd-trace v1` header"));
        }
        let (mut n_layers, mut n_heads, mut branch) = (None, None, String::from("cond"));
        for kv in parts {
            match kv.split_once('=') {
                Some(("n_layers", v)) => n_layers = v.parse().ok(),
                Some(("n_heads", v)) => n_heads = v.parse().ok(),
                Some(("branch", v)) => branch = v.to_string(),
                _ => return Err(bad(n, &format!("unknown header field {kv:?}"))),
            }
        }
        let (Some(n_layers), Some(n_heads)) = (n_layers, n_heads) else {
            return Err(bad(n, "header needs n_layers and n_heads"));
        };
        let mut trace = Self::new(n_layers, n_heads, branch);

        match lines.next() {
            Some((_, Ok(cols))) if cols.split_whitespace().eq(COLUMNS.split_whitespace()) => {}
            Some((n, _)) => return Err(bad(n, "expected the column line")),
            None => return Err(Error::Input("trace has no column line".into())),
        }

        for (n, line) in lines {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(bad(n, "expected 6 fields"));
            }
            let num = |i: usize| -> Result<usize> {
                fields[i].parse().map_err(|_| bad(n, &format!("bad integer {:?}", fields[i])))
            };
            let mut positions = Vec::new();
            let mut probs = Vec::new();
            for pair in fields[5].split(',') {
                let (p, a) = pair.split_once(':').ok_or_else(|| bad(n, "entry without ':'"))?;
                positions.push(p.parse().map_err(|_| bad(n, "bad position"))?);
                probs.push(a.parse().map_err(|_| bad(n, "bad probability"))?);
            }
            let record = TraceRecord {
                prompt: num(0)?,
                position: num(1)?,
                prefix_len: num(2)?,
                layer: num(3)?,
                head: num(4)?,
                positions,
                probs,
            };
            trace
                .push(record)
                .map_err(|e| bad(n, &e.to_string()))?;
        }
        Ok(trace)
    }
}
