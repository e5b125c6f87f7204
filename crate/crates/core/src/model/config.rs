use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalScheme {
    Rotary,
    None,
}

/// Shape and seed of the toy decoder.
///
/// Read from the `[model]` section of a config file:
///
/// ```text
/// [model]
/// n_layers = 4
/// n_heads = 4
/// d_model = 64
/// d_ff = 128            # optional, defaults to 4 * d_model
/// vocab_size = 256
/// grid_h = 8
/// grid_w = 8
/// max_prompt_len = 16
/// weight_seed = 1
/// positional_scheme = "rotary"   # or "none"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
    pub vocab_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub max_prompt_len: usize,
    pub weight_seed: u64,
    #[serde(default = "default_scheme")]
    pub positional_scheme: PositionalScheme,
}

fn default_scheme() -> PositionalScheme {
    PositionalScheme::Rotary
}

#[derive(Deserialize)]
struct ModelSection {
    model: ModelConfig,
}

impl ModelConfig {
    /// The 4-layer, 4-head, 64-wide model over an 8x8 grid used throughout
    /// the tests.
    pub fn toy() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: None,
            vocab_size: 256,
            grid_h: 8,
            grid_w: 8,
            max_prompt_len: 16,
            weight_seed: 1,
            positional_scheme: PositionalScheme::Rotary,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn ff_dim(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d_model)
    }

    /// Visual tokens per image, `grid_h * grid_w`.
    pub fn n_visual(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Fixed begin-of-image token: the last vocabulary entry.
    pub fn boi_token(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 {
            return bad("n_layers and n_heads must be positive".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.positional_scheme == PositionalScheme::Rotary && !self.d_head().is_multiple_of(2) {
            return bad(format!("rotary needs an even d_head, got {}", self.d_head()));
        }
        if self.ff_dim() == 0 {
            return bad("d_ff must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2".into());
        }
        if self.grid_h < 2 || self.grid_w < 2 {
            return bad(format!("grid {}x{} must be at least 2x2", self.grid_h, self.grid_w));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let section: ModelSection =
            toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        section.model.validate()?;
        Ok(section.model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_model_section() {
        let text = "[model]\nn_layers = 2\nn_heads = 2\nd_model = 16\nvocab_size = 32\n\
                    grid_h = 4\ngrid_w = 4\nmax_prompt_len = 4\nweight_seed = 9\n";
        let c = ModelConfig::from_toml_str(text).unwrap();
        assert_eq!(c.d_head(), 8);
        assert_eq!(c.ff_dim(), 64);
        assert_eq!(c.positional_scheme, PositionalScheme::Rotary);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::toy();
        c.d_model = 62;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::toy();
        c.grid_w = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.vocab_size = 1;
        assert!(c.validate().is_err());
        assert!(ModelConfig::from_toml_str("[model]\nn_layers = 2\n").is_err());
    }
}
