use super::sparsity::SparsityProfile;

pub const BUCKETS: usize = 10;

/// Head counts per 0.1-wide sparsity bucket. A value of exactly 1.0 falls
/// in the last bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityHistogram {
    pub counts: [usize; BUCKETS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub range: String,
    pub percent: f64,
    pub count: usize,
    pub cumulative_percent: f64,
    pub cumulative_count: usize,
}

pub fn sparsity_histogram(profile: &SparsityProfile) -> SparsityHistogram {
    let mut counts = [0; BUCKETS];
    for &s in profile.values() {
        counts[bucket_of(s)] += 1;
    }
    SparsityHistogram { counts }
}

fn bucket_of(s: f64) -> usize {
    ((s * BUCKETS as f64).floor() as usize).min(BUCKETS - 1)
}

impl SparsityHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<HistogramRow> {
        let total = self.total().max(1) as f64;
        let mut cumulative = 0;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &count)| {
                cumulative += count;
                HistogramRow {
                    range: format!("{:.1}–{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0),
                    percent: 100.0 * count as f64 / total,
                    count,
                    cumulative_percent: 100.0 * cumulative as f64 / total,
                    cumulative_count: cumulative,
                }
            })
            .collect()
    }

    /// Markdown table with the columns Sparsity Range, Percentage (%),
    /// Count, Cumulative %, Cumulative Count; percentages to one decimal.
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "| Sparsity Range | Percentage (%) | Count | Cumulative % | Cumulative Count |\n\
             |:---|---:|---:|---:|---:|\n",
        );
        for r in self.rows() {
            out.push_str(&format!(
                "| {} | {:.1} | {} | {:.1} | {} |\n",
                r.range, r.percent, r.count, r.cumulative_percent, r.cumulative_count
            ));
        }
        out
    }
}
