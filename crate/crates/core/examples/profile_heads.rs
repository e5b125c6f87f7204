//! Capture attention while generating, measure per-head sparsity, print
//! the histogram and split the heads at tau = 0.7.

use ssd_cache::generator::{generate, GenerationRequest};
use ssd_cache::model::{init_model, ModelConfig};
use ssd_cache::profiler::{classify, sparsity, sparsity_histogram, HeadLabel};

fn main() -> ssd_cache::Result<()> {
    let config = ModelConfig {
        grid_h: 12,
        grid_w: 12,
        ..ModelConfig::toy()
    };
    let weights = init_model(&config)?;
    let request = GenerationRequest {
        capture_attention: true,
        ..GenerationRequest::new(&config, vec![3, 141, 59, 26])
    };
    let result = generate(&request, &weights, &config)?;
    let trace = result.trace.expect("attention was captured");

    let profile = sparsity(&trace, 16)?;
    print!("{}", sparsity_histogram(&profile).to_table());

    let partition = classify(&profile, 0.7);
    println!();
    for layer in 0..config.n_layers {
        let row: Vec<String> = (0..config.n_heads)
            .map(|h| {
                let tag = match partition.label(layer, h) {
                    HeadLabel::Spatial => "spatial",
                    HeadLabel::Semantic => "semantic",
                };
                format!("{:.3} {tag:<8}", profile.get(layer, h))
            })
            .collect();
        println!("layer {layer}: {}", row.join("  "));
    }
    Ok(())
}
