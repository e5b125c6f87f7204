use std::io::Write;

use crate::error::{Error, Result};
use crate::kvcache::{CacheHandle, HeadKind};

/// Per-visual-token squared L2 distance between two branches' caches,
/// summed over keys and values of every layer and head.
///
/// The quantity is reported unnormalised (a sum of squares, not a mean).
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub values: Vec<f64>,
    pub grid_w: usize,
}

impl DivergenceReport {
    /// Visual index `j` sits in the first or last grid column.
    pub fn is_margin(&self, j: usize) -> bool {
        let col = j % self.grid_w;
        col == 0 || col + 1 == self.grid_w
    }

    /// Mean divergence over margin and interior columns.
    pub fn margin_interior_means(&self) -> (f64, f64) {
        let (mut m, mut mi, mut i, mut ii) = (0.0, 0usize, 0.0, 0usize);
        for (j, v) in self.values.iter().enumerate() {
            if self.is_margin(j) {
                m += v;
                mi += 1;
            } else {
                i += v;
                ii += 1;
            }
        }
        (m / mi.max(1) as f64, i / ii.max(1) as f64)
    }

    /// CSV with columns `position,row,col,divergence,margin`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["position", "row", "col", "divergence", "margin"])?;
        for (j, v) in self.values.iter().enumerate() {
            w.write_record([
                j.to_string(),
                (j / self.grid_w).to_string(),
                (j % self.grid_w).to_string(),
                v.to_string(),
                u8::from(self.is_margin(j)).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares the visual-token entries of two uncompressed caches, aligned by
/// visual index (absolute position minus each cache's prefix length).
pub fn kv_divergence(cfg_branch: &CacheHandle, native_branch: &CacheHandle, grid_w: usize) -> Result<DivergenceReport> {
    for c in [cfg_branch, native_branch] {
        if c.slots().iter().any(|s| s.cache().kind() != HeadKind::Full) {
            return Err(Error::Input("divergence needs full-cache branches".into()));
        }
    }
    if cfg_branch.n_layers() != native_branch.n_layers()
        || cfg_branch.n_heads() != native_branch.n_heads()
        || cfg_branch.d_head() != native_branch.d_head()
    {
        return Err(Error::Input("branch caches have different shapes".into()));
    }
    let visual = |c: &CacheHandle| c.fed().saturating_sub(c.prefix_len());
    let n = visual(cfg_branch);
    if n != visual(native_branch) {
        return Err(Error::Input(format!(
            "branches hold {n} and {} visual tokens",
            visual(native_branch)
        )));
    }
    if grid_w == 0 {
        return Err(Error::Input("grid width must be positive".into()));
    }

    let mut values = vec![0.0; n];
    for (a, b) in cfg_branch.slots().iter().zip(native_branch.slots()) {
        let (ca, cb) = (a.cache(), b.cache());
        let (oa, ob) = (cfg_branch.prefix_len(), native_branch.prefix_len());
        if ca.len() != oa + n || cb.len() != ob + n {
            return Err(Error::Input("branch caches are not complete".into()));
        }
        for (j, v) in values.iter_mut().enumerate() {
            *v += squared_distance(ca.key(oa + j), cb.key(ob + j))
                + squared_distance(ca.value(oa + j), cb.value(ob + j));
        }
    }
    Ok(DivergenceReport { values, grid_w })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
