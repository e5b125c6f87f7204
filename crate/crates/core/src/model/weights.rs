use super::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    /// `d_model x d_ff`
    pub w_up: Matrix,
    /// `d_ff x d_model`
    pub w_down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    /// `vocab_size x d_model`
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    /// `d_model x vocab_size`
    pub output: Matrix,
}

/// Draws all parameters from `Rng::new(config.weight_seed)`.
///
/// Every matrix is `U(-a, a)` with `a = sqrt(3 / fan_in)` (unit variance
/// for the embedding, whose fan-in is taken as 1), filled row-major in this
/// order: embedding; then per layer `wq, wk, wv, wo, w_up, w_down`; then
/// the output head.
pub fn init_model(config: &ModelConfig) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = Rng::new(config.weight_seed);
    let d = config.d_model;
    let ff = config.ff_dim();
    let scale = |fan_in: usize| (3.0 / fan_in as f64).sqrt();

    let embedding = Matrix::random_uniform(config.vocab_size, d, scale(1), &mut rng);
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            wq: Matrix::random_uniform(d, d, scale(d), &mut rng),
            wk: Matrix::random_uniform(d, d, scale(d), &mut rng),
            wv: Matrix::random_uniform(d, d, scale(d), &mut rng),
            wo: Matrix::random_uniform(d, d, scale(d), &mut rng),
            w_up: Matrix::random_uniform(d, ff, scale(d), &mut rng),
            w_down: Matrix::random_uniform(ff, d, scale(ff), &mut rng),
        })
        .collect();
    let output = Matrix::random_uniform(d, config.vocab_size, scale(d), &mut rng);
    Ok(ModelWeights {
        embedding,
        layers,
        output,
    })
}
