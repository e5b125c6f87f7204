//! Incremental decoding over per-head KV caches.
//!
//! Architecture (fixed): token embedding, then per layer a pre-norm
//! attention block and a pre-norm SiLU feed-forward block, each added to
//! the residual stream, then a final norm and the output head. Norms are
//! parameter-free RMS norms with epsilon [`RMS_EPS`]. Rotary embeddings
//! rotate dimension pairs `(i, i + d_head/2)` by `pos * ROPE_BASE^(-2i/d_head)`.
//! Keys are cached after rotation at their original absolute position;
//! eviction never re-indexes positions.

use super::config::{ModelConfig, PositionalScheme};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::kvcache::CacheHandle;
use crate::numerics::{matmul, softmax_in_place, Matrix};

pub const RMS_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10_000.0;

/// Attention of one head at one step, over the resident cache entries and
/// the current token (last), tagged with absolute positions.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAttention {
    pub layer: usize,
    pub head: usize,
    pub positions: Vec<usize>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    /// Layer-major, one entry per head, when capture was requested.
    pub attention: Option<Vec<HeadAttention>>,
}

/// Feeds `token` at `position` through the model, updating `cache`.
pub fn decode_step(
    weights: &ModelWeights,
    config: &ModelConfig,
    token: usize,
    position: usize,
    cache: &mut CacheHandle,
    capture_attention: bool,
) -> Result<StepOutput> {
    if position != cache.fed() {
        return Err(Error::Sequencing(format!(
            "position {position} given, but {} tokens were fed to this cache",
            cache.fed()
        )));
    }
    let mut out = decode_batch(
        weights,
        config,
        std::slice::from_mut(cache),
        &[token],
        capture_attention,
    )?;
    Ok(out.pop().expect("one stream in, one output out"))
}

/// Advances several independent streams by one token each. Every stream
/// is fed at its own next position; the projections run as one batched
/// product, but each stream's arithmetic is identical to decoding it alone.
pub fn decode_batch(
    weights: &ModelWeights,
    config: &ModelConfig,
    streams: &mut [CacheHandle],
    tokens: &[usize],
    capture_attention: bool,
) -> Result<Vec<StepOutput>> {
    if streams.len() != tokens.len() {
        return Err(Error::Shape(format!(
            "{} streams but {} tokens",
            streams.len(),
            tokens.len()
        )));
    }
    let d = config.d_model;
    let n_heads = config.n_heads;
    let dh = config.d_head();
    if weights.layers.len() != config.n_layers || weights.embedding.cols() != d {
        return Err(Error::Consistency("weights do not match the model config".into()));
    }
    for (s, &t) in streams.iter().zip(tokens) {
        if t >= config.vocab_size {
            return Err(Error::Input(format!(
                "token {t} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        if s.n_layers() != config.n_layers || s.n_heads() != n_heads || s.d_head() != dh {
            return Err(Error::Consistency(format!(
                "cache shape {}x{}x{} does not match model {}x{}x{dh}",
                s.n_layers(),
                s.n_heads(),
                s.d_head(),
                config.n_layers,
                n_heads
            )));
        }
    }

    let b = streams.len();
    let rotary: Vec<Option<Rotary>> = streams
        .iter()
        .map(|s| {
            (config.positional_scheme == PositionalScheme::Rotary).then(|| Rotary::new(s.fed(), dh))
        })
        .collect();
    let mut hidden = Matrix::zeros(b, d);
    for (i, &t) in tokens.iter().enumerate() {
        hidden.row_mut(i).copy_from_slice(weights.embedding.row(t));
    }
    let mut captured: Vec<Vec<HeadAttention>> = vec![Vec::new(); b];
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores: Vec<f64> = Vec::new();

    for (layer, lw) in weights.layers.iter().enumerate() {
        let x = rms_norm_rows(&hidden);
        let mut q = matmul(&x, &lw.wq)?;
        let mut k = matmul(&x, &lw.wk)?;
        let v = matmul(&x, &lw.wv)?;
        for (i, rot) in rotary.iter().enumerate() {
            if let Some(rot) = rot {
                for head in 0..n_heads {
                    rot.apply(&mut q.row_mut(i)[head * dh..(head + 1) * dh]);
                    rot.apply(&mut k.row_mut(i)[head * dh..(head + 1) * dh]);
                }
            }
        }

        let mut mixed = Matrix::zeros(b, d);
        for (i, stream) in streams.iter_mut().enumerate() {
            let position = stream.fed();
            for head in 0..n_heads {
                let span = head * dh..(head + 1) * dh;
                let qh = &q.row(i)[span.clone()];
                let kh = &k.row(i)[span.clone()];
                let vh = &v.row(i)[span.clone()];
                let slot = stream.slot(layer, head);
                let committed = slot.cache();
                let staged = slot.buffer();

                scores.clear();
                scores.extend(committed.keys().chunks_exact(dh).map(|kj| dot(qh, kj) * scale));
                if let Some(buf) = staged {
                    scores.extend(buf.keys().chunks_exact(dh).map(|kj| dot(qh, kj) * scale));
                }
                scores.push(dot(qh, kh) * scale);
                softmax_in_place(&mut scores);

                let out = &mut mixed.row_mut(i)[span];
                let staged_values = staged.map(|b| b.values()).unwrap_or(&[]);
                let mut p = scores.iter();
                let resident_values = committed.values().chunks_exact(dh);
                for vj in resident_values.chain(staged_values.chunks_exact(dh)) {
                    axpy(*p.next().expect("one score per entry"), vj, out);
                }
                axpy(*p.next().expect("score for the current token"), vh, out);

                let resident = scores.len() - 1;
                if capture_attention {
                    let mut positions = slot.positions();
                    positions.push(position);
                    captured[i].push(HeadAttention {
                        layer,
                        head,
                        positions,
                        probs: scores.clone(),
                    });
                }
                stream.update_head(layer, head, kh, vh, &scores[..resident])?;
            }
        }
        add_assign(&mut hidden, &matmul(&mixed, &lw.wo)?);

        let x = rms_norm_rows(&hidden);
        let mut up = matmul(&x, &lw.w_up)?;
        for u in up.data_mut() {
            *u = silu(*u);
        }
        add_assign(&mut hidden, &matmul(&up, &lw.w_down)?);
    }

    let logits = matmul(&rms_norm_rows(&hidden), &weights.output)?;
    for s in streams.iter_mut() {
        s.advance();
    }
    Ok(captured
        .into_iter()
        .enumerate()
        .map(|(i, att)| StepOutput {
            logits: logits.row(i).to_vec(),
            attention: capture_attention.then_some(att),
        })
        .collect())
}

struct Rotary {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Rotary {
    fn new(position: usize, d_head: usize) -> Self {
        let half = d_head / 2;
        let (cos, sin) = (0..half)
            .map(|i| {
                let freq = ROPE_BASE.powf(-2.0 * i as f64 / d_head as f64);
                let angle = position as f64 * freq;
                (angle.cos(), angle.sin())
            })
            .unzip();
        Self { cos, sin }
    }

    fn apply(&self, x: &mut [f64]) {
        let half = x.len() / 2;
        for i in 0..half {
            let (a, b) = (x[i], x[i + half]);
            x[i] = a * self.cos[i] - b * self.sin[i];
            x[i + half] = a * self.sin[i] + b * self.cos[i];
        }
    }
}

fn rms_norm_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
    out
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn add_assign(acc: &mut Matrix, other: &Matrix) {
    for r in 0..acc.rows() {
        for (a, b) in acc.row_mut(r).iter_mut().zip(other.row(r)) {
            *a += b;
        }
    }
}

/// Four interleaved partial sums, combined as `(s0 + s1) + (s2 + s3)`.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += alpha * xi;
    }
}
