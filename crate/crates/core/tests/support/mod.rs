//! Test-only oracles, written independently of the incremental decoder and
//! the eviction code they check.
#![allow(dead_code)]

use ssd_cache::model::{ModelConfig, ModelWeights, PositionalScheme, RMS_EPS, ROPE_BASE};
use ssd_cache::numerics::Matrix;

fn project(x: &[Vec<f64>], w: &Matrix) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| (0..w.rows()).map(|k| row[k] * w.get(k, j)).sum())
                .collect()
        })
        .collect()
}

fn rms_norm(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            row.iter().map(|v| v / (ms + RMS_EPS).sqrt()).collect()
        })
        .collect()
}

fn rotate(v: &mut [f64], pos: usize) {
    let dh = v.len();
    let half = dh / 2;
    for i in 0..half {
        let theta = pos as f64 / ROPE_BASE.powf((2 * i) as f64 / dh as f64);
        let (a, b) = (v[i], v[i + half]);
        v[i] = a * theta.cos() - b * theta.sin();
        v[i + half] = a * theta.sin() + b * theta.cos();
    }
}

/// Logits after every position of `tokens`, computed by one causal,
/// full-attention pass over the whole sequence (no cache).
pub fn full_forward_logits(weights: &ModelWeights, config: &ModelConfig, tokens: &[usize]) -> Vec<Vec<f64>> {
    let t_len = tokens.len();
    let dh = config.d_model / config.n_heads;
    let mut h: Vec<Vec<f64>> = tokens.iter().map(|&t| weights.embedding.row(t).to_vec()).collect();
    for lw in &weights.layers {
        let x = rms_norm(&h);
        let mut q = project(&x, &lw.wq);
        let mut k = project(&x, &lw.wk);
        let v = project(&x, &lw.wv);
        if config.positional_scheme == PositionalScheme::Rotary {
            for t in 0..t_len {
                for head in 0..config.n_heads {
                    rotate(&mut q[t][head * dh..(head + 1) * dh], t);
                    rotate(&mut k[t][head * dh..(head + 1) * dh], t);
                }
            }
        }
        let mut mixed = vec![vec![0.0; config.d_model]; t_len];
        for head in 0..config.n_heads {
            let r = head * dh..(head + 1) * dh;
            for t in 0..t_len {
                let logits: Vec<f64> = (0..=t)
                    .map(|s| {
                        q[t][r.clone()].iter().zip(&k[s][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for s in 0..=t {
                    for (o, vv) in mixed[t][r.clone()].iter_mut().zip(&v[s][r.clone()]) {
                        *o += e[s] / z * vv;
                    }
                }
            }
        }
        let o = project(&mixed, &lw.wo);
        for (hr, or) in h.iter_mut().zip(&o) {
            for (a, b) in hr.iter_mut().zip(or) {
                *a += b;
            }
        }
        let x = rms_norm(&h);
        let up: Vec<Vec<f64>> = project(&x, &lw.w_up)
            .into_iter()
            .map(|r| r.into_iter().map(|u| u / (1.0 + (-u).exp())).collect())
            .collect();
        let down = project(&up, &lw.w_down);
        for (hr, dr) in h.iter_mut().zip(&down) {
            for (a, b) in hr.iter_mut().zip(dr) {
                *a += b;
            }
        }
    }
    project(&rms_norm(&h), &weights.output)
}

/// Argmax with ties toward the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy CFG generation where every step's logits for both branches come
/// from a fresh full forward pass over that branch's whole sequence.
pub fn greedy_cfg_oracle(
    weights: &ModelWeights,
    config: &ModelConfig,
    prompt: &[usize],
    gamma: f64,
    n_visual: usize,
) -> Vec<usize> {
    let boi = config.vocab_size - 1;
    let mut cond: Vec<usize> = prompt.to_vec();
    cond.push(boi);
    let mut uncond = vec![boi];
    let mut out = Vec::new();
    for _ in 0..n_visual {
        let lc = full_forward_logits(weights, config, &cond).pop().unwrap();
        let lu = full_forward_logits(weights, config, &uncond).pop().unwrap();
        let mixed: Vec<f64> = lc.iter().zip(&lu).map(|(c, u)| c + gamma * (c - u)).collect();
        let z = argmax(&mixed);
        out.push(z);
        cond.push(z);
        uncond.push(z);
    }
    out
}

/// Reference heavy-hitter step: sort the whole eligible pool by
/// (score descending, position ascending) and keep the first `budget`.
/// `entries` are (position, accumulated score) in position order, already
/// including this step's attention. Returns retained positions after
/// appending `new_position`.
pub fn heavy_hitter_oracle(
    entries: &[(usize, f64)],
    pinned_prefix_len: usize,
    budget: usize,
    recent: usize,
    new_position: usize,
) -> Vec<usize> {
    let pinned: Vec<usize> = entries.iter().map(|e| e.0).filter(|&p| p < pinned_prefix_len).collect();
    let rest: Vec<(usize, f64)> = entries.iter().copied().filter(|e| e.0 >= pinned_prefix_len).collect();
    let r = recent.min(rest.len());
    let (pool, recent_part) = rest.split_at(rest.len() - r);
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = pinned;
    keep.extend(sorted.iter().take(budget).map(|e| e.0));
    keep.extend(recent_part.iter().map(|e| e.0));
    keep.sort_unstable();
    keep.push(new_position);
    keep
}

/// Reference window step: sinks (or pinned prefix, whichever is longer)
/// plus the newest `window` positions, after appending `new_position`.
pub fn window_oracle(positions: &[usize], pinned_prefix_len: usize, sink: usize, window: usize, new_position: usize) -> Vec<usize> {
    let mut all = positions.to_vec();
    all.push(new_position);
    let pinned = all.iter().filter(|&&p| p < pinned_prefix_len).count();
    let protected = pinned.max(sink.min(all.len()));
    let tail_start = all.len().saturating_sub(window).max(protected);
    all[..protected].iter().chain(&all[tail_start..]).copied().collect()
}
