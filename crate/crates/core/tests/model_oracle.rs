mod support;

use ssd_cache::generator::{generate, GenerationRequest};
use ssd_cache::kvcache::{CacheHandle, CachePolicyConfig};
use ssd_cache::model::{decode_step, init_model, ModelConfig, PositionalScheme};
use ssd_cache::numerics::Rng;
use ssd_cache::Error;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn incremental_logits(config: &ModelConfig, tokens: &[usize]) -> Vec<Vec<f64>> {
    let weights = init_model(config).unwrap();
    let mut cache = CacheHandle::new(
        CachePolicyConfig::full(),
        config.n_layers,
        config.n_heads,
        config.d_head(),
        tokens.len(),
    )
    .unwrap();
    tokens
        .iter()
        .enumerate()
        .map(|(pos, &t)| decode_step(&weights, config, t, pos, &mut cache, false).unwrap().logits)
        .collect()
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let config = ModelConfig::toy();
    let weights = init_model(&config).unwrap();
    let mut rng = Rng::new(17);
    for _ in 0..5 {
        let tokens: Vec<usize> = (0..16).map(|_| rng.below(config.vocab_size as u64) as usize).collect();
        let got = incremental_logits(&config, &tokens);
        let want = support::full_forward_logits(&weights, &config, &tokens);
        for (g, w) in got.iter().zip(&want) {
            assert!(max_abs_diff(g, w) <= 1e-10, "diff {}", max_abs_diff(g, w));
        }
    }
}

#[test]
fn no_positional_scheme_also_matches() {
    let config = ModelConfig {
        positional_scheme: PositionalScheme::None,
        ..ModelConfig::toy()
    };
    let weights = init_model(&config).unwrap();
    let tokens = [3, 1, 4, 1, 5, 9, 2, 6];
    let got = incremental_logits(&config, &tokens);
    let want = support::full_forward_logits(&weights, &config, &tokens);
    for (g, w) in got.iter().zip(&want) {
        assert!(max_abs_diff(g, w) <= 1e-10);
    }
}

#[test]
fn greedy_full_generation_matches_recompute_oracle() {
    let config = ModelConfig {
        grid_h: 3,
        grid_w: 3,
        ..ModelConfig::toy()
    };
    let weights = init_model(&config).unwrap();
    let prompt = vec![10, 20, 30];
    let req = GenerationRequest::new(&config, prompt.clone());
    let got = generate(&req, &weights, &config).unwrap();
    let want = support::greedy_cfg_oracle(&weights, &config, &prompt, 5.0, 9);
    assert_eq!(got.tokens, want);
}

#[test]
fn out_of_order_position_is_rejected() {
    let config = ModelConfig::toy();
    let weights = init_model(&config).unwrap();
    let mut cache = CacheHandle::new(CachePolicyConfig::full(), 4, 4, config.d_head(), 1).unwrap();
    let err = decode_step(&weights, &config, 0, 3, &mut cache, false).unwrap_err();
    assert!(matches!(err, Error::Sequencing(_)));
}

#[test]
fn weights_are_deterministic_per_seed() {
    let config = ModelConfig::toy();
    let a = init_model(&config).unwrap();
    let b = init_model(&config).unwrap();
    assert_eq!(a.output.data(), b.output.data());
    let c = init_model(&ModelConfig {
        weight_seed: 2,
        ..config
    })
    .unwrap();
    assert_ne!(a.output.data(), c.output.data());
}
