//! Throughput and peak cache size of every policy on the toy model, then
//! the full-vs-ssd table in markdown.

use ssd_cache::bench::{comparison_table, emit_table, run_bench, BenchSettings, TableFormat};
use ssd_cache::kvcache::PolicyKind;
use ssd_cache::model::{init_model, ModelConfig};

fn main() -> ssd_cache::Result<()> {
    let config = ModelConfig {
        grid_h: 16,
        grid_w: 16,
        ..ModelConfig::toy()
    };
    let settings = BenchSettings {
        policies: PolicyKind::ALL.iter().map(|p| p.to_string()).collect(),
        batches: vec![1, 4],
        grids: vec!["16x16".into()],
        budget_frac: 0.2,
        ..BenchSettings::default()
    };
    let plan = settings.to_plan(&config, None)?;
    let weights = init_model(&config)?;
    let rows = run_bench(&plan, &weights, &config)?;

    print!("{}", emit_table(&rows, TableFormat::Csv));
    println!();
    print!("{}", comparison_table(&rows, PolicyKind::Ssd, TableFormat::Markdown));
    Ok(())
}
