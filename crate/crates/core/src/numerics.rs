//! Dense f64 substrate: row-major matrices, a fixed-order matmul, a stable
//! row softmax and a seeded generator.
//!
//! The generator is ChaCha8 (RFC 7539 block function reduced to 8 rounds),
//! seeded through `seed_from_u64` and consumed only through `next_u64`. All
//! derived draws (`next_f64`, `uniform`, `below`) are computed here from the
//! raw 64-bit words so the stream never depends on a distribution
//! implementation that might change between crate releases.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("matrix contains a non-finite value".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Fills a matrix with draws from `U(-scale, scale)` in row-major order.
    pub fn random_uniform(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }
}

const TILE_R: usize = 4;
const TILE_C: usize = 16;

/// Standard product `a × b`.
///
/// Each output element is accumulated over the shared dimension in
/// ascending index order, starting from zero, so results are bitwise
/// reproducible and independent of how many rows `a` has.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let (m, kk, n) = (a.rows, a.cols, b.cols);
    // Register-blocked: a TILE_R x TILE_C block of `out` is accumulated
    // over k in ascending order, then stored. Leftover rows and columns
    // use the same order, so every element sees the same additions.
    let full_r = m / TILE_R * TILE_R;
    let full_c = n / TILE_C * TILE_C;
    let mut panel = vec![0.0f64; kk * TILE_C];
    for j0 in (0..full_c).step_by(TILE_C) {
        if full_r == 0 {
            break;
        }
        for k in 0..kk {
            panel[k * TILE_C..(k + 1) * TILE_C].copy_from_slice(&b.data[k * n + j0..k * n + j0 + TILE_C]);
        }
        for i0 in (0..full_r).step_by(TILE_R) {
            let mut acc = [[0.0f64; TILE_C]; TILE_R];
            for (k, bk) in panel.chunks_exact(TILE_C).enumerate() {
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let aik = a.data[(i0 + r) * kk + k];
                    for c in 0..TILE_C {
                        acc_r[c] += aik * bk[c];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                out.data[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_C].copy_from_slice(acc_r);
            }
        }
    }
    for i in 0..m {
        let cols = if i < full_r { full_c..n } else { 0..n };
        if cols.is_empty() {
            continue;
        }
        for k in 0..kk {
            let aik = a.data[i * kk + k];
            let brow = &b.data[k * n..(k + 1) * n];
            for j in cols.clone() {
                out.data[i * n + j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// Numerically stable softmax of a single row.
pub fn softmax_row(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place variant of [`softmax_row`] for hot loops. Input must be
/// nonempty and finite.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// Pairwise (tree) summation with a fixed split rule: the result depends
/// only on the order of `values`, never on scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (l, r) = values.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Seeded ChaCha8 stream. See the module docs for the frozen derivation rules.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection sampling; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Fisher-Yates shuffle driven by [`Rng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
