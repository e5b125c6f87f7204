//! Throughput and retained-KV memory across cache policies.
//!
//! Every case decodes a batch of CFG requests in lockstep on one thread.
//! Throughput is visual tokens generated per second of decode time
//! (prefill excluded, both CFG branches included), the median over timed
//! repetitions. Memory is the exact peak of retained key/value scalars
//! over both branches of every request.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GenerationRequest, GenerationSession, Sampling};
use crate::kvcache::{CachePolicyConfig, HeadKind, PolicyKind};
use crate::model::{ModelConfig, ModelWeights};
use crate::numerics::Rng;
use crate::profiler::{HeadLabel, HeadPartition};

/// Worker threads used for timed regions.
pub const THREADS: usize = 1;

#[derive(Debug, Clone)]
pub struct BenchCase {
    pub policy: CachePolicyConfig,
    pub batch: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub cases: Vec<BenchCase>,
    /// Prompt seeds; each seed yields one batch of prompts, shared by every
    /// case with the same batch size.
    pub seeds: Vec<u64>,
    pub repetitions: usize,
    pub warmup: usize,
    pub prompt_len: usize,
    pub gamma: f64,
    /// Cases whose worst-case retained scalars exceed this are not run and
    /// are reported as OOM.
    pub memory_limit_scalars: Option<usize>,
}

/// The `[bench]` section of a plan file.
///
/// ```toml
/// [bench]
/// policies = ["full", "ssd", "ssd-buffer"]
/// batches = [8]
/// grids = ["48x48"]
/// seeds = [0]
/// repetitions = 3
/// warmup = 0
/// budget_frac = 0.2
/// window = 32
/// sink = 1
/// buffer_rows = 48
/// prompt_len = 8
/// gamma = 5.0
/// memory_limit_scalars = 0      # 0 disables the limit
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub policies: Vec<String>,
    pub batches: Vec<usize>,
    pub grids: Vec<String>,
    pub seeds: Vec<u64>,
    pub repetitions: usize,
    pub warmup: usize,
    pub budget_frac: f64,
    pub window: usize,
    pub sink: usize,
    pub buffer_rows: usize,
    pub prompt_len: usize,
    pub gamma: f64,
    pub memory_limit_scalars: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            policies: vec!["full".into(), "ssd".into(), "ssd-buffer".into()],
            batches: vec![1],
            grids: vec!["8x8".into()],
            seeds: vec![0],
            repetitions: 3,
            warmup: 0,
            budget_frac: 0.2,
            window: 32,
            sink: 1,
            buffer_rows: 24,
            prompt_len: 8,
            gamma: 5.0,
            memory_limit_scalars: 0,
        }
    }
}

#[derive(Deserialize)]
struct BenchSection {
    #[serde(default)]
    bench: BenchSettings,
}

impl BenchSettings {
    /// Reads the `[bench]` section; other sections are ignored.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Input(format!("plan file: {}", e.message())))?;
        let mut only = toml::Table::new();
        if let Some(b) = table.get("bench") {
            only.insert("bench".into(), b.clone());
        }
        let section: BenchSection = only
            .try_into()
            .map_err(|e: toml::de::Error| Error::Input(format!("plan file: {}", e.message())))?;
        Ok(section.bench)
    }

    /// Expands the cross product policies × batches × grids. Partitioned
    /// policies use `partition`, or alternate semantic/spatial heads when
    /// none is given.
    pub fn to_plan(&self, config: &ModelConfig, partition: Option<&HeadPartition>) -> Result<BenchPlan> {
        if self.repetitions < 3 {
            return Err(Error::Config("repetitions must be at least 3".into()));
        }
        if self.seeds.is_empty() || self.batches.is_empty() || self.grids.is_empty() {
            return Err(Error::Config("seeds, batches and grids must be non-empty".into()));
        }
        let policies: Vec<PolicyKind> = self
            .policies
            .iter()
            .map(|p| p.parse())
            .collect::<Result<_>>()?;
        if !policies.contains(&PolicyKind::Full) {
            return Err(Error::Config("a bench plan needs the full policy as its reference".into()));
        }
        let partition = partition
            .cloned()
            .unwrap_or_else(|| alternating_partition(config.n_layers, config.n_heads));
        let mut cases = Vec::new();
        for grid in &self.grids {
            let (grid_h, grid_w) = parse_grid(grid)?;
            for &batch in &self.batches {
                if batch == 0 {
                    return Err(Error::Config("batch sizes must be positive".into()));
                }
                for &kind in &policies {
                    let policy = match kind {
                        PolicyKind::Full => CachePolicyConfig::full(),
                        _ => {
                            let mut p = CachePolicyConfig::with_budget_fraction(
                                kind,
                                self.budget_frac,
                                grid_h * grid_w,
                                self.window,
                                self.sink,
                            )?;
                            p.buffer_rows = self.buffer_rows;
                            if kind.needs_partition() {
                                p = p.with_partition(partition.clone());
                            }
                            p
                        }
                    };
                    cases.push(BenchCase {
                        policy,
                        batch,
                        grid_h,
                        grid_w,
                    });
                }
            }
        }
        Ok(BenchPlan {
            cases,
            seeds: self.seeds.clone(),
            repetitions: self.repetitions,
            warmup: self.warmup,
            prompt_len: self.prompt_len,
            gamma: self.gamma,
            memory_limit_scalars: (self.memory_limit_scalars > 0).then_some(self.memory_limit_scalars),
        })
    }
}

/// `"HxW"` to `(H, W)`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
    match parsed {
        Some((h, w)) if h >= 2 && w >= 2 => Ok((h, w)),
        _ => Err(Error::Config(format!("grid must look like 48x48 (each side >= 2), got {s:?}"))),
    }
}

/// Even (layer-major) heads semantic, odd heads spatial.
pub fn alternating_partition(n_layers: usize, n_heads: usize) -> HeadPartition {
    let labels = (0..n_layers * n_heads)
        .map(|i| if i % 2 == 0 { HeadLabel::Semantic } else { HeadLabel::Spatial })
        .collect();
    HeadPartition::new(n_layers, n_heads, labels).expect("label count matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Oom,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Oom => "OOM",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub policy: PolicyKind,
    pub batch: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Median over repetitions; NaN for OOM rows.
    pub tokens_per_second: f64,
    /// Peak retained key/value scalars; 0 for OOM rows.
    pub peak_kv_scalars: usize,
    pub speedup_vs_full: f64,
    pub memory_ratio_vs_full: f64,
    pub repetitions: usize,
    pub threads: usize,
    pub status: RowStatus,
    /// Generated tokens per seed, then per request. Identical across
    /// repetitions by construction; kept for cross-policy comparisons.
    pub tokens: Vec<Vec<usize>>,
}

impl BenchRow {
    pub fn grid(&self) -> String {
        format!("{}x{}", self.grid_h, self.grid_w)
    }
}

/// Prompts for one seed: `batch` prompts of `prompt_len` tokens, never the
/// begin-of-image token.
pub fn bench_prompts(seed: u64, batch: usize, prompt_len: usize, config: &ModelConfig) -> Vec<Vec<usize>> {
    let mut rng = Rng::new(seed);
    let boi = config.boi_token() as u64;
    (0..batch)
        .map(|_| (0..prompt_len).map(|_| rng.below(boi) as usize).collect())
        .collect()
}

/// Largest number of key/value scalars a case can ever hold.
pub fn worst_case_scalars(case: &BenchCase, prompt_len: usize, config: &ModelConfig) -> usize {
    let n = case.grid_h * case.grid_w;
    let branch = |prefix: usize| -> usize {
        let pinned = if case.policy.pin_prompt { prefix } else { 0 };
        let staged = if case.policy.is_buffered() { case.policy.buffer_rows - 1 } else { 0 };
        (0..config.n_layers)
            .flat_map(|l| (0..config.n_heads).map(move |h| (l, h)))
            .map(|(l, h)| {
                let kind: HeadKind = case.policy.head_kind(l, h);
                let bound = case.policy.retention_bound(kind, pinned).unwrap_or(usize::MAX);
                (bound + staged).min(prefix + n)
            })
            .sum()
    };
    (branch(prompt_len + 1) + branch(1)) * config.d_head() * 2 * case.batch
}

#[derive(Default)]
struct Measured {
    timed: Vec<f64>,
    peak: usize,
    tokens: Vec<Vec<usize>>,
}

/// One repetition of a case over every seed: decode throughput, and the
/// peak scalars and tokens folded into `m`.
fn run_once(plan: &BenchPlan, case: &BenchCase, weights: &ModelWeights, config: &ModelConfig, m: &mut Measured) -> Result<f64> {
    let mut decode = Duration::ZERO;
    let mut generated = 0usize;
    m.tokens.clear();
    for &seed in &plan.seeds {
        let requests: Vec<GenerationRequest> = bench_prompts(seed, case.batch, plan.prompt_len, config)
            .into_iter()
            .enumerate()
            .map(|(i, prompt)| GenerationRequest {
                prompt,
                gamma: plan.gamma,
                grid_h: case.grid_h,
                grid_w: case.grid_w,
                sampling: Sampling::greedy(),
                sample_seed: seed.wrapping_add(i as u64),
                policy: case.policy.clone(),
                capture_attention: false,
            })
            .collect();
        let mut session = GenerationSession::new(weights, config, requests)?;
        session.run_to_end()?;
        let results = session.finish();
        decode += results[0].step_durations.iter().sum::<Duration>();
        let steps = results[0].retained_scalars.len();
        let seed_peak = (0..steps)
            .map(|s| results.iter().map(|r| r.retained_scalars[s]).sum::<usize>())
            .max()
            .unwrap_or(0);
        m.peak = m.peak.max(seed_peak);
        generated += results.iter().map(|r| r.tokens.len()).sum::<usize>();
        m.tokens.extend(results.into_iter().map(|r| r.tokens));
    }
    Ok(generated as f64 / decode.as_secs_f64().max(f64::MIN_POSITIVE))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs every case, one round of all cases per repetition, and fills the ratios against the full
/// row of the same (batch, grid).
pub fn run_bench(plan: &BenchPlan, weights: &ModelWeights, config: &ModelConfig) -> Result<Vec<BenchRow>> {
    if plan.repetitions < 3 {
        return Err(Error::Config("repetitions must be at least 3".into()));
    }
    for case in &plan.cases {
        let has_full = plan.cases.iter().any(|c| {
            c.policy.policy == PolicyKind::Full
                && (c.batch, c.grid_h, c.grid_w) == (case.batch, case.grid_h, case.grid_w)
        });
        if !has_full {
            return Err(Error::Config(format!(
                "no full-cache case for batch {} grid {}x{}",
                case.batch, case.grid_h, case.grid_w
            )));
        }
    }
    let runnable: Vec<bool> = plan
        .cases
        .iter()
        .map(|case| {
            !plan
                .memory_limit_scalars
                .is_some_and(|limit| worst_case_scalars(case, plan.prompt_len, config) > limit)
        })
        .collect();
    // Repetitions go round-robin over the cases so slow drift in machine
    // speed lands on every policy alike.
    let mut measured: Vec<Measured> = plan.cases.iter().map(|_| Measured::default()).collect();
    for rep in 0..plan.warmup + plan.repetitions {
        for ((case, m), &run) in plan.cases.iter().zip(&mut measured).zip(&runnable) {
            if run {
                let tps = run_once(plan, case, weights, config, m)?;
                if rep >= plan.warmup {
                    m.timed.push(tps);
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(plan.cases.len());
    for ((case, mut m), run) in plan.cases.iter().zip(measured).zip(runnable) {
        let (tps, peak, tokens, status) = if run {
            (median(&mut m.timed), m.peak, m.tokens, RowStatus::Ok)
        } else {
            (f64::NAN, 0, Vec::new(), RowStatus::Oom)
        };
        rows.push(BenchRow {
            policy: case.policy.policy,
            batch: case.batch,
            grid_h: case.grid_h,
            grid_w: case.grid_w,
            tokens_per_second: tps,
            peak_kv_scalars: peak,
            speedup_vs_full: f64::NAN,
            memory_ratio_vs_full: f64::NAN,
            repetitions: plan.repetitions,
            threads: THREADS,
            status,
            tokens,
        });
    }
    fill_ratios(&mut rows);
    Ok(rows)
}

/// Sets speedup and memory ratio of each row against its group's full row.
pub fn fill_ratios(rows: &mut [BenchRow]) {
    let refs: Vec<(usize, usize, usize, f64, usize, RowStatus)> = rows
        .iter()
        .filter(|r| r.policy == PolicyKind::Full)
        .map(|r| (r.batch, r.grid_h, r.grid_w, r.tokens_per_second, r.peak_kv_scalars, r.status))
        .collect();
    for r in rows.iter_mut() {
        let reference = refs
            .iter()
            .find(|f| (f.0, f.1, f.2) == (r.batch, r.grid_h, r.grid_w));
        (r.speedup_vs_full, r.memory_ratio_vs_full) = match reference {
            Some(&(.., tps, peak, RowStatus::Ok)) if r.status == RowStatus::Ok => {
                if r.policy == PolicyKind::Full {
                    (1.0, 1.0)
                } else {
                    (r.tokens_per_second / tps, r.peak_kv_scalars as f64 / peak as f64)
                }
            }
            _ => (f64::NAN, f64::NAN),
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

pub const BENCH_COLUMNS: [&str; 10] = [
    "policy",
    "batch",
    "grid",
    "tokens_per_second",
    "peak_kv_scalars",
    "speedup_vs_full",
    "memory_ratio_vs_full",
    "repetitions",
    "threads",
    "status",
];

/// Columns whose values depend on wall-clock time.
pub const VOLATILE_COLUMNS: [&str; 2] = ["tokens_per_second", "speedup_vs_full"];

fn fixed(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        "NA".into()
    }
}

fn row_cells(r: &BenchRow) -> Vec<String> {
    let oom = r.status == RowStatus::Oom;
    vec![
        r.policy.as_str().into(),
        r.batch.to_string(),
        r.grid(),
        if oom { "OOM".into() } else { fixed(r.tokens_per_second) },
        if oom { "OOM".into() } else { r.peak_kv_scalars.to_string() },
        fixed(r.speedup_vs_full),
        fixed(r.memory_ratio_vs_full),
        r.repetitions.to_string(),
        r.threads.to_string(),
        r.status.as_str().into(),
    ]
}

/// One line per row, columns as in [`BENCH_COLUMNS`]; ratios and
/// throughput to two decimals. No rows gives the header alone.
pub fn emit_table(rows: &[BenchRow], format: TableFormat) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(row_cells).collect();
    let header: Vec<String> = BENCH_COLUMNS.iter().map(|c| c.to_string()).collect();
    render(&header, &body, format)
}

/// Batch-scaling comparison of the full cache against `policy`: one line
/// per (batch, grid) with columns batch, throughput full, throughput
/// `policy`, speedup, memory full, memory `policy`.
pub fn comparison_table(rows: &[BenchRow], policy: PolicyKind, format: TableFormat) -> String {
    let name = policy.as_str();
    let header = vec![
        "batch".to_string(),
        "throughput full".to_string(),
        format!("throughput {name}"),
        "speedup".to_string(),
        "memory full".to_string(),
        format!("memory {name}"),
    ];
    let mut body = Vec::new();
    for full in rows.iter().filter(|r| r.policy == PolicyKind::Full) {
        let Some(other) = rows
            .iter()
            .find(|r| r.policy == policy && (r.batch, r.grid_h, r.grid_w) == (full.batch, full.grid_h, full.grid_w))
        else {
            continue;
        };
        let mem = |r: &BenchRow| {
            if r.status == RowStatus::Oom {
                "OOM".to_string()
            } else {
                r.peak_kv_scalars.to_string()
            }
        };
        let tps = |r: &BenchRow| {
            if r.status == RowStatus::Oom {
                "OOM".to_string()
            } else {
                fixed(r.tokens_per_second)
            }
        };
        body.push(vec![
            full.batch.to_string(),
            tps(full),
            tps(other),
            fixed(other.speedup_vs_full),
            mem(full),
            mem(other),
        ]);
    }
    render(&header, &body, format)
}

fn render(header: &[String], body: &[Vec<String>], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("writing to memory");
            for row in body {
                w.write_record(row).expect("writing to memory");
            }
            out = String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii cells");
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for row in body {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: PolicyKind, tps: f64, peak: usize) -> BenchRow {
        BenchRow {
            policy,
            batch: 2,
            grid_h: 4,
            grid_w: 4,
            tokens_per_second: tps,
            peak_kv_scalars: peak,
            speedup_vs_full: f64::NAN,
            memory_ratio_vs_full: f64::NAN,
            repetitions: 3,
            threads: 1,
            status: RowStatus::Ok,
            tokens: Vec::new(),
        }
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(emit_table(&[], TableFormat::Csv), format!("{}\n", BENCH_COLUMNS.join(",")));
        assert_eq!(emit_table(&[], TableFormat::Markdown).lines().count(), 2);
    }

    #[test]
    fn ratios_against_full() {
        let mut rows = vec![row(PolicyKind::Full, 100.0, 1000), row(PolicyKind::Ssd, 250.0, 200)];
        fill_ratios(&mut rows);
        assert_eq!((rows[0].speedup_vs_full, rows[0].memory_ratio_vs_full), (1.0, 1.0));
        assert_eq!((rows[1].speedup_vs_full, rows[1].memory_ratio_vs_full), (2.5, 0.2));
        let csv = emit_table(&rows, TableFormat::Csv);
        assert_eq!(csv.lines().nth(2).unwrap(), "ssd,2,4x4,250.00,200,2.50,0.20,3,1,ok");
    }

    #[test]
    fn comparison_columns() {
        let mut rows = vec![row(PolicyKind::Full, 100.0, 1000), row(PolicyKind::Ssd, 250.0, 200)];
        fill_ratios(&mut rows);
        let t = comparison_table(&rows, PolicyKind::Ssd, TableFormat::Markdown);
        let mut lines = t.lines();
        assert_eq!(
            lines.next().unwrap(),
            "| batch | throughput full | throughput ssd | speedup | memory full | memory ssd |"
        );
        assert_eq!(lines.nth(1).unwrap(), "| 2 | 100.00 | 250.00 | 2.50 | 1000 | 200 |");
    }

    #[test]
    fn grids_and_settings() {
        assert_eq!(parse_grid("48x48").unwrap(), (48, 48));
        assert!(parse_grid("1x5").is_err());
        assert!(parse_grid("big").is_err());
        let s = BenchSettings::from_toml_str("[bench]\nbatches = [1, 2]\ngrids = [\"4x4\"]\n").unwrap();
        let plan = s.to_plan(&ModelConfig::toy(), None).unwrap();
        assert_eq!(plan.cases.len(), 6);
        assert!(BenchSettings::from_toml_str("[bench]\nbogus = 1\n").is_err());
        let few = BenchSettings {
            repetitions: 2,
            ..BenchSettings::default()
        };
        assert!(few.to_plan(&ModelConfig::toy(), None).is_err());
    }

    #[test]
    fn small_run_is_deterministic_and_full_memory_is_closed_form() {
        let config = ModelConfig {
            grid_h: 4,
            grid_w: 4,
            ..ModelConfig::toy()
        };
        let weights = crate::model::init_model(&config).unwrap();
        let settings = BenchSettings {
            batches: vec![2],
            grids: vec!["4x4".into()],
            budget_frac: 1.0,
            window: 16,
            buffer_rows: 1,
            ..BenchSettings::default()
        };
        let plan = settings.to_plan(&config, None).unwrap();
        let rows = run_bench(&plan, &weights, &config).unwrap();
        let full = &rows[0];
        let expected = config.n_layers * config.n_heads * ((8 + 1 + 16) + (1 + 16)) * config.d_head() * 2 * 2;
        assert_eq!(full.peak_kv_scalars, expected);
        for r in &rows[1..] {
            assert_eq!(r.tokens, full.tokens);
        }
    }

    #[test]
    fn oom_rows() {
        let config = ModelConfig::toy();
        let weights = crate::model::init_model(&config).unwrap();
        let settings = BenchSettings {
            grids: vec!["4x4".into()],
            memory_limit_scalars: 1,
            ..BenchSettings::default()
        };
        let plan = settings.to_plan(&config, None).unwrap();
        let rows = run_bench(&plan, &weights, &config).unwrap();
        assert!(rows.iter().all(|r| r.status == RowStatus::Oom));
        assert!(emit_table(&rows, TableFormat::Csv).contains("full,1,4x4,OOM,OOM,NA,NA,3,1,OOM"));
    }
}
