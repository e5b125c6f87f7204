//! The `ssd-cache` command line.
//!
//! Every file written starts with `# `-prefixed lines holding a TOML record
//! of the tool version, the subcommand, its effective settings, the model
//! config and, when one was used, the head partition. `reproduce` reads
//! that record back and re-runs the command. Exit codes: 0 success, 1
//! usage error, 2 input or consistency error; failures print one
//! `error[<class>]: <message>` line to stderr.

mod commands;
mod header;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use commands::{
    run_bench_cmd, run_classify, run_divergence, run_generate, run_profile, run_reproduce, run_trace_replay,
};
pub use header::{mask_volatile, read_header, RunRecord, VOLATILE};

pub const TOOL: &str = "ssd-cache";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ssd-cache", version, about = "Per-head KV cache compression for a toy image-token decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-head sparsity from an attention trace.
    Profile(ProfileArgs),
    /// Split heads into spatial and semantic by a sparsity threshold.
    Classify(ClassifyArgs),
    /// Generate a visual token grid with classifier-free guidance.
    Generate(GenerateArgs),
    /// Per-position key/value divergence between the two CFG branches.
    Divergence(DivergenceArgs),
    /// Throughput and memory across cache policies.
    Bench(BenchArgs),
    /// Replay a trace through a cache policy and score retained attention.
    TraceReplay(ReplayArgs),
    /// Re-run the command recorded in an output file's header.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProfileArgs {
    /// Attention trace file.
    #[arg(long)]
    pub trace: PathBuf,
    /// Recency window w.
    #[arg(long = "w", default_value_t = 32)]
    pub window: usize,
    /// Output sparsity CSV.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also print the sparsity histogram to stdout.
    #[arg(long)]
    #[serde(skip)]
    pub histogram: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    /// Sparsity profile CSV.
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub tau: f64,
    /// Shuffle the threshold labels instead (same semantic count).
    #[arg(long)]
    pub random: bool,
    /// Shuffle seed for --random.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Cache policy flags shared by generate, divergence and trace-replay.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PolicyArgs {
    /// full, streaming, h2o, ssd or ssd-buffer.
    #[arg(long, default_value = "full")]
    pub policy: String,
    /// Sliding window W (windowed heads) and recent window R (heavy-hitter
    /// heads) unless --budget-frac is given.
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    /// Heavy-hitter budget M.
    #[arg(long, default_value_t = 32)]
    pub budget: usize,
    /// Recent window R; defaults to --window.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recent: Option<usize>,
    /// Per-head budget as a fraction of the visual tokens; overrides
    /// --budget and resizes the windows.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_frac: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub sink: usize,
    #[arg(long, default_value_t = 24)]
    pub buffer_rows: usize,
    /// Allow eviction of prompt positions.
    #[arg(long)]
    pub no_pin_prompt: bool,
    /// Head partition CSV (required by ssd and ssd-buffer).
    #[arg(long)]
    #[serde(skip)]
    pub partition_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Model config file (`[model]` section); the built-in toy model otherwise.
    #[arg(long)]
    #[serde(skip)]
    pub model_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Comma-separated prompt token ids.
    #[arg(long)]
    pub prompt_tokens: String,
    #[arg(long, default_value_t = 5.0)]
    pub gamma: f64,
    /// Grid as HxW; the model's grid otherwise.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    /// Output CSV: step,row,col,token,micros,retained_kv_scalars.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also write the conditional branch's attention trace here.
    #[arg(long)]
    #[serde(skip)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DivergenceArgs {
    #[arg(long)]
    pub prompt_tokens: String,
    #[arg(long, default_value_t = 5.0)]
    pub gamma: f64,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    /// Output CSV: position,row,col,divergence,margin.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Plan file with a `[bench]` section and optionally a `[model]` section.
    #[arg(long)]
    #[serde(skip)]
    pub plan: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    /// Head partition CSV for ssd policies; alternating heads otherwise.
    #[arg(long)]
    #[serde(skip)]
    pub partition_file: Option<PathBuf>,
    /// Output CSV, one row per case.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also print the full-vs-ssd comparison table to stdout.
    #[arg(long)]
    #[serde(skip)]
    pub markdown: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Output CSV: layer,head,retained_mass.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ReproduceArgs {
    /// A file written by this tool.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for an error: configuration mistakes in flags are usage
/// errors, everything else (bad files, inconsistent inputs) is 2.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Profile(a) => run_profile(a),
        Command::Classify(a) => run_classify(a),
        Command::Generate(a) => run_generate(a),
        Command::Divergence(a) => run_divergence(a),
        Command::Bench(a) => run_bench_cmd(a),
        Command::TraceReplay(a) => run_trace_replay(a),
        Command::Reproduce(a) => run_reproduce(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.detail().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            exit_code(&e)
        }
    }
}
