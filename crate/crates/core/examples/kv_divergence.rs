//! How far the conditional and unconditional branches' caches drift
//! apart per visual token, split into margin columns and interior.

use ssd_cache::generator::{GenerationRequest, GenerationSession};
use ssd_cache::model::{init_model, ModelConfig};
use ssd_cache::profiler::kv_divergence;

fn main() -> ssd_cache::Result<()> {
    let config = ModelConfig::toy();
    let weights = init_model(&config)?;
    let request = GenerationRequest::new(&config, vec![42, 7, 7, 100]);
    let mut session = GenerationSession::new(&weights, &config, vec![request])?;
    session.run_to_end()?;

    let (cond, uncond) = session.branches(0);
    let report = kv_divergence(cond, uncond, config.grid_w)?;
    for row in report.values.chunks(config.grid_w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>8.2}")).collect();
        println!("{}", cells.join(""));
    }
    let (margin, interior) = report.margin_interior_means();
    println!("\nmean divergence: margin columns {margin:.3}, interior {interior:.3}");
    Ok(())
}
