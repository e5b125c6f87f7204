//! Generate one 8x8 token grid with the full cache and with SSD at a 25%
//! budget, and compare the grids and the retained cache size.

use ssd_cache::generator::{generate, GenerationRequest};
use ssd_cache::kvcache::{CachePolicyConfig, PolicyKind};
use ssd_cache::model::{init_model, ModelConfig};
use ssd_cache::profiler::{HeadLabel, HeadPartition};

fn print_grid(tokens: &[usize], width: usize) {
    for row in tokens.chunks(width) {
        let cells: Vec<String> = row.iter().map(|t| format!("{t:>4}")).collect();
        println!("{}", cells.join(""));
    }
}

fn main() -> ssd_cache::Result<()> {
    let config = ModelConfig::toy();
    let weights = init_model(&config)?;
    let prompt = vec![17, 4, 250, 9];

    let full = generate(&GenerationRequest::new(&config, prompt.clone()), &weights, &config)?;

    // Even layers look locally, odd layers globally.
    let labels = (0..config.n_layers * config.n_heads)
        .map(|i| if (i / config.n_heads).is_multiple_of(2) { HeadLabel::Spatial } else { HeadLabel::Semantic })
        .collect();
    let partition = HeadPartition::new(config.n_layers, config.n_heads, labels)?;
    let policy = CachePolicyConfig::with_budget_fraction(PolicyKind::Ssd, 0.25, config.n_visual(), 8, 1)?
        .with_partition(partition);
    let ssd = generate(
        &GenerationRequest {
            policy,
            ..GenerationRequest::new(&config, prompt)
        },
        &weights,
        &config,
    )?;

    println!("full cache:");
    print_grid(&full.tokens, config.grid_w);
    println!("\nssd, 25% budget:");
    print_grid(&ssd.tokens, config.grid_w);

    let same = full.tokens.iter().zip(&ssd.tokens).filter(|(a, b)| a == b).count();
    println!("\n{same}/{} tokens agree", full.tokens.len());
    println!(
        "retained kv scalars at the last step: full {}, ssd {}",
        full.retained_scalars.last().unwrap(),
        ssd.retained_scalars.last().unwrap()
    );
    Ok(())
}
