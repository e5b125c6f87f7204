use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::header::{read_header, RunRecord};
use super::{
    BenchArgs, ClassifyArgs, DivergenceArgs, GenerateArgs, PolicyArgs, ProfileArgs, ReplayArgs, ReproduceArgs,
};
use crate::bench::{comparison_table, emit_table, parse_grid, run_bench, BenchSettings, TableFormat};
use crate::error::{Error, Result};
use crate::generator::{GenerationRequest, GenerationSession, Sampling};
use crate::kvcache::{CachePolicyConfig, PolicyKind};
use crate::model::{init_model, ModelConfig};
use crate::profiler::{
    classify, kv_divergence, random_partition, sparsity, sparsity_histogram, AttentionTrace, HeadPartition,
    SparsityProfile,
};
use crate::replay::trace_replay;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Settings read from a file are input, not usage, when they are wrong.
fn as_input(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Input(m),
        other => other,
    }
}

fn load_model(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p).map_err(as_input),
        None => Ok(ModelConfig::toy()),
    }
}

fn load_partition(path: &Path) -> Result<HeadPartition> {
    HeadPartition::read_csv(open(path)?).map_err(as_input)
}

fn read_trace(path: &Path) -> Result<AttentionTrace> {
    AttentionTrace::read(open(path)?).map_err(as_input)
}

fn parse_prompt(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Config(format!("prompt token {t:?} is not a non-negative integer")))
        })
        .collect()
}

fn grid_of(grid: Option<&str>, config: &ModelConfig) -> Result<(usize, usize)> {
    match grid {
        Some(g) => parse_grid(g),
        None => Ok((config.grid_h, config.grid_w)),
    }
}

/// Resolves policy flags for a grid of `n_visual` tokens.
fn policy_from(a: &PolicyArgs, n_visual: usize, partition: Option<HeadPartition>) -> Result<CachePolicyConfig> {
    let kind: PolicyKind = a.policy.parse()?;
    let recent = a.recent.unwrap_or(a.window);
    let mut cfg = match a.budget_frac {
        Some(f) => CachePolicyConfig::with_budget_fraction(kind, f, n_visual, recent, a.sink)?,
        None => CachePolicyConfig {
            policy: kind,
            window: a.window,
            budget: a.budget,
            recent,
            sink: a.sink,
            ..CachePolicyConfig::default()
        },
    };
    cfg.buffer_rows = a.buffer_rows;
    cfg.pin_prompt = !a.no_pin_prompt;
    if kind.needs_partition() {
        match partition {
            Some(p) => cfg = cfg.with_partition(p),
            None => {
                return Err(Error::Config(format!(
                    "policy {kind} needs --partition-file"
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The partition a policy will actually use, read from its file.
fn policy_partition(a: &PolicyArgs) -> Result<Option<HeadPartition>> {
    let kind: PolicyKind = a.policy.parse()?;
    match (&a.partition_file, kind.needs_partition()) {
        (Some(path), true) => load_partition(path).map(Some),
        _ => Ok(None),
    }
}

fn check_partition_shape(partition: Option<&HeadPartition>, model: &ModelConfig) -> Result<()> {
    match partition {
        Some(p) if (p.n_layers(), p.n_heads()) != (model.n_layers, model.n_heads) => Err(Error::Input(format!(
            "partition covers {}x{} heads, model has {}x{}",
            p.n_layers(),
            p.n_heads(),
            model.n_layers,
            model.n_heads
        ))),
        _ => Ok(()),
    }
}

fn write_with_header(
    out: &Path,
    record: &RunRecord,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut w = create(out)?;
    record.write(&mut w)?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn run_profile(a: &ProfileArgs) -> Result<()> {
    let trace = read_trace(&a.trace)?;
    let profile = sparsity(&trace, a.window).map_err(as_input)?;
    let record = RunRecord::new("profile", a, None, None)?;
    write_with_header(&a.out, &record, |w| profile.write_csv(w))?;
    if a.histogram {
        print!("{}", sparsity_histogram(&profile).to_table());
    }
    Ok(())
}

pub fn run_classify(a: &ClassifyArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(Error::Config(format!("tau must be in [0, 1], got {}", a.tau)));
    }
    let profile = SparsityProfile::read_csv(open(&a.profile)?).map_err(as_input)?;
    let mut partition = classify(&profile, a.tau);
    if a.random {
        partition = random_partition(&partition, a.seed);
    }
    let record = RunRecord::new("classify", a, None, None)?;
    write_with_header(&a.out, &record, |w| partition.write_csv(w))
}

pub fn run_generate(a: &GenerateArgs) -> Result<()> {
    let model = load_model(a.model.model_config.as_deref())?;
    let partition = policy_partition(&a.policy)?;
    generate_with(a, &model, partition, &a.out, a.trace_out.as_deref())
}

fn generate_with(
    a: &GenerateArgs,
    model: &ModelConfig,
    partition: Option<HeadPartition>,
    out: &Path,
    trace_out: Option<&Path>,
) -> Result<()> {
    check_partition_shape(partition.as_ref(), model)?;
    let (grid_h, grid_w) = grid_of(a.grid.as_deref(), model)?;
    let policy = policy_from(&a.policy, grid_h * grid_w, partition.clone())?;
    let request = GenerationRequest {
        prompt: parse_prompt(&a.prompt_tokens)?,
        gamma: a.gamma,
        grid_h,
        grid_w,
        sampling: Sampling {
            temperature: a.temperature,
            top_k: a.top_k,
        },
        sample_seed: a.seed,
        policy,
        capture_attention: trace_out.is_some(),
    };
    request.validate(model)?;
    let weights = init_model(model)?;
    let mut session = GenerationSession::new(&weights, model, vec![request])?;
    session.run_to_end()?;
    let result = session.finish().pop().expect("one request");

    let record = RunRecord::new("generate", a, Some(model), partition.as_ref())?;
    write_with_header(out, &record, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["step", "row", "col", "token", "micros", "retained_kv_scalars"])?;
        for (step, tok) in result.tokens.iter().enumerate() {
            c.write_record([
                step.to_string(),
                (step / grid_w).to_string(),
                (step % grid_w).to_string(),
                tok.to_string(),
                result.step_durations[step].as_micros().to_string(),
                result.retained_scalars[step].to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    if let (Some(path), Some(trace)) = (trace_out, &result.trace) {
        write_with_header(path, &record, |w| trace.write(w))?;
    }
    Ok(())
}

pub fn run_divergence(a: &DivergenceArgs) -> Result<()> {
    let model = load_model(a.model.model_config.as_deref())?;
    divergence_with(a, &model, &a.out)
}

fn divergence_with(a: &DivergenceArgs, model: &ModelConfig, out: &Path) -> Result<()> {
    let (grid_h, grid_w) = grid_of(a.grid.as_deref(), model)?;
    let request = GenerationRequest {
        gamma: a.gamma,
        grid_h,
        grid_w,
        ..GenerationRequest::new(model, parse_prompt(&a.prompt_tokens)?)
    };
    request.validate(model)?;
    let weights = init_model(model)?;
    let mut session = GenerationSession::new(&weights, model, vec![request])?;
    session.run_to_end()?;
    let (cond, uncond) = session.branches(0);
    let report = kv_divergence(cond, uncond, grid_w)?;
    let record = RunRecord::new("divergence", a, Some(model), None)?;
    write_with_header(out, &record, |w| report.write_csv(w))
}

pub fn run_bench_cmd(a: &BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.plan).map_err(|e| Error::Input(format!("{}: {e}", a.plan.display())))?;
    let settings = BenchSettings::from_toml_str(&text)?;
    let model = match &a.model.model_config {
        Some(p) => load_model(Some(p))?,
        None if text.parse::<toml::Table>().is_ok_and(|t| t.contains_key("model")) => {
            ModelConfig::from_toml_str(&text).map_err(as_input)?
        }
        None => ModelConfig::toy(),
    };
    let partition = a.partition_file.as_deref().map(load_partition).transpose()?;
    bench_with(&settings, &model, partition, &a.out, a.markdown)
}

fn bench_with(
    settings: &BenchSettings,
    model: &ModelConfig,
    partition: Option<HeadPartition>,
    out: &Path,
    markdown: bool,
) -> Result<()> {
    check_partition_shape(partition.as_ref(), model)?;
    let plan = settings.to_plan(model, partition.as_ref()).map_err(as_input)?;
    let weights = init_model(model)?;
    let rows = run_bench(&plan, &weights, model)?;
    let record = RunRecord::new("bench", settings, Some(model), partition.as_ref())?;
    write_with_header(out, &record, |w| {
        w.write_all(emit_table(&rows, TableFormat::Csv).as_bytes())?;
        Ok(())
    })?;
    if markdown {
        print!("{}", comparison_table(&rows, PolicyKind::Ssd, TableFormat::Markdown));
    }
    Ok(())
}

pub fn run_trace_replay(a: &ReplayArgs) -> Result<()> {
    let partition = policy_partition(&a.policy)?;
    replay_with(a, partition, &a.out)
}

fn replay_with(a: &ReplayArgs, partition: Option<HeadPartition>, out: &Path) -> Result<()> {
    let trace = read_trace(&a.trace)?;
    let first = trace
        .records()
        .first()
        .ok_or_else(|| Error::Input("trace has no records".into()))?;
    let (prompt, prefix_len) = (first.prompt, first.prefix_len);
    let last = trace
        .records()
        .iter()
        .filter(|r| r.prompt == prompt)
        .map(|r| r.position)
        .max()
        .unwrap_or(0);
    let n_visual = (last + 1).saturating_sub(prefix_len).max(1);
    let policy = policy_from(&a.policy, n_visual, partition.clone())?;
    let report = trace_replay(&trace, &policy)?;
    let record = RunRecord::new("trace-replay", a, None, partition.as_ref())?;
    write_with_header(out, &record, |w| report.write_csv(w))?;
    println!("mean retained mass {:.6}", report.mean());
    Ok(())
}

pub fn run_reproduce(a: &ReproduceArgs) -> Result<()> {
    let record = read_header(open(&a.from)?)?;
    let partition = record.partition.as_ref().map(|p| p.to_partition()).transpose()?;
    let model = || {
        record
            .model
            .clone()
            .ok_or_else(|| Error::Input("header has no model config".into()))
    };
    match record.command.as_str() {
        "profile" => {
            let args: ProfileArgs = record.args_as()?;
            run_profile(&ProfileArgs {
                out: a.out.clone(),
                ..args
            })
        }
        "classify" => {
            let args: ClassifyArgs = record.args_as()?;
            run_classify(&ClassifyArgs {
                out: a.out.clone(),
                ..args
            })
        }
        "generate" => {
            let args: GenerateArgs = record.args_as()?;
            generate_with(&args, &model()?, partition, &a.out, None)
        }
        "divergence" => {
            let args: DivergenceArgs = record.args_as()?;
            divergence_with(&args, &model()?, &a.out)
        }
        "bench" => {
            let settings: BenchSettings = record.args_as()?;
            bench_with(&settings, &model()?, partition, &a.out, false)
        }
        "trace-replay" => {
            let args: ReplayArgs = record.args_as()?;
            replay_with(&args, partition, &a.out)
        }
        other => Err(Error::Input(format!("header names unknown command {other:?}"))),
    }
}
