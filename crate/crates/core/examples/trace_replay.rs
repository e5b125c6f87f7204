//! Replay a synthetic trace with planted local and global heads through
//! each policy at a 20% budget and compare the attention mass kept.

use ssd_cache::kvcache::{CachePolicyConfig, PolicyKind};
use ssd_cache::profiler::{classify, planted_trace, random_partition, sparsity, PlantedTraceSpec};
use ssd_cache::replay::trace_replay;

fn main() -> ssd_cache::Result<()> {
    let spec = PlantedTraceSpec::default();
    let (trace, planted) = planted_trace(&spec)?;
    let found = classify(&sparsity(&trace, 32)?, 0.8);
    println!("classification agrees with the planted split on {:.0}% of heads", 100.0 * found.agreement(&planted));

    let n_visual = spec.grid_h * spec.grid_w;
    let policy = |kind| CachePolicyConfig::with_budget_fraction(kind, 0.2, n_visual, 32, 1);
    let runs = [
        ("full", policy(PolicyKind::Full)?),
        ("streaming", policy(PolicyKind::Streaming)?),
        ("h2o", policy(PolicyKind::H2o)?),
        ("ssd, random split", policy(PolicyKind::Ssd)?.with_partition(random_partition(&found, 1))),
        ("ssd", policy(PolicyKind::Ssd)?.with_partition(found.clone())),
    ];
    for (name, cfg) in runs {
        println!("{name:<18} retained mass {:.4}", trace_replay(&trace, &cfg)?.mean());
    }
    Ok(())
}
