//! Model architecture hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Point-wise nonlinearity used inside the FFN sublayers.
///
/// GPT-2 checkpoints use the tanh approximation of GELU. `Relu` and
/// `Identity` exist for hand-computable test fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            // tanh approximation, matching GPT-2 reference checkpoints
            Activation::Gelu => {
                let x = x as f64;
                let inner = 0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x);
                (0.5 * x * (1.0 + inner.tanh())) as f32
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Architecture hyperparameters of a GPT-2-family decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    /// GPT-2 small: 12 layers, d=768.
    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            d_model: 768,
            d_ff: 3072,
            n_heads: 12,
            vocab_size: 50257,
            max_positions: 1024,
            activation: Activation::Gelu,
        }
    }

    /// GPT-2 medium: 24 layers, d=1024.
    pub fn gpt2_medium() -> Self {
        Self {
            n_layers: 24,
            d_model: 1024,
            d_ff: 4096,
            n_heads: 16,
            vocab_size: 50257,
            max_positions: 1024,
            activation: Activation::Gelu,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(EngineError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(EngineError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_validate() {
        ModelConfig::gpt2_small().validate().unwrap();
        ModelConfig::gpt2_medium().validate().unwrap();
    }

    #[test]
    fn medium_matches_published_dims() {
        let c = ModelConfig::gpt2_medium();
        assert_eq!(c.n_layers, 24);
        assert_eq!(c.d_model, 1024);
        assert_eq!(c.d_ff, 4096);
        assert_eq!(c.vocab_size, 50257);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::gpt2_small();
        c.n_heads = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn gelu_tanh_reference_values() {
        // reference values from the tanh approximation formula
        assert!((Activation::Gelu.apply(0.0)).abs() < 1e-12);
        assert!((Activation::Gelu.apply(1.0) - 0.841_192).abs() < 1e-5);
        assert!((Activation::Gelu.apply(-1.0) + 0.158_808).abs() < 1e-5);
        // far tails saturate
        assert!((Activation::Gelu.apply(10.0) - 10.0).abs() < 1e-5);
        assert!(Activation::Gelu.apply(-10.0).abs() < 1e-5);
    }
}
