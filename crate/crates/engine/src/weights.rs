//! Model weight loading and validation.
//!
//! Tensor names and layouts follow the GPT-2 checkpoint convention: linear
//! weights are stored input-major (`[in, out]`), attention QKV is one fused
//! `[d, 3d]` projection, and the output head is the tied token embedding.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::safetensors::{TensorFile, TensorFileWriter};
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln_1_gain: Vec<f32>,
    pub ln_1_bias: Vec<f32>,
    /// Fused Q,K,V projection, `[d_model, 3*d_model]`.
    pub attn_qkv_w: Matrix,
    pub attn_qkv_b: Vec<f32>,
    pub attn_proj_w: Matrix,
    pub attn_proj_b: Vec<f32>,
    pub ln_2_gain: Vec<f32>,
    pub ln_2_bias: Vec<f32>,
    /// FFN input projection, `[d_model, d_ff]`; column j is key k_j.
    pub ffn_in_w: Matrix,
    pub ffn_in_b: Vec<f32>,
    /// FFN output projection, `[d_ff, d_model]`; row j is value v_j.
    pub ffn_out_w: Matrix,
    pub ffn_out_b: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct WeightSet {
    /// Token embeddings `[vocab_size, d_model]`, also the output head.
    pub wte: Matrix,
    /// Learned position embeddings `[max_positions, d_model]`.
    pub wpe: Matrix,
    pub layers: Vec<LayerWeights>,
    pub ln_f_gain: Vec<f32>,
    pub ln_f_bias: Vec<f32>,
    /// `value_norms[layer][j]` is the L2 norm of FFN value row v_j,
    /// precomputed once per model for dominance scoring.
    pub value_norms: Vec<Vec<f32>>,
}

impl WeightSet {
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let mut file = TensorFile::read(path)?;
        let d = config.d_model;
        let wte = file.take_matrix("wte.weight", config.vocab_size, d)?;
        let wpe = file.take_matrix("wpe.weight", config.max_positions, d)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let name = |suffix: &str| format!("h.{i}.{suffix}");
            layers.push(LayerWeights {
                ln_1_gain: file.take_vector(&name("ln_1.weight"), d)?,
                ln_1_bias: file.take_vector(&name("ln_1.bias"), d)?,
                attn_qkv_w: file.take_matrix(&name("attn.c_attn.weight"), d, 3 * d)?,
                attn_qkv_b: file.take_vector(&name("attn.c_attn.bias"), 3 * d)?,
                attn_proj_w: file.take_matrix(&name("attn.c_proj.weight"), d, d)?,
                attn_proj_b: file.take_vector(&name("attn.c_proj.bias"), d)?,
                ln_2_gain: file.take_vector(&name("ln_2.weight"), d)?,
                ln_2_bias: file.take_vector(&name("ln_2.bias"), d)?,
                ffn_in_w: file.take_matrix(&name("mlp.c_fc.weight"), d, config.d_ff)?,
                ffn_in_b: file.take_vector(&name("mlp.c_fc.bias"), config.d_ff)?,
                ffn_out_w: file.take_matrix(&name("mlp.c_proj.weight"), config.d_ff, d)?,
                ffn_out_b: file.take_vector(&name("mlp.c_proj.bias"), d)?,
            });
        }
        let ln_f_gain = file.take_vector("ln_f.weight", d)?;
        let ln_f_bias = file.take_vector("ln_f.bias", d)?;
        let value_norms = layers
            .iter()
            .map(|l| l.ffn_out_w.row_norms())
            .collect();
        Ok(Self {
            wte,
            wpe,
            layers,
            ln_f_gain,
            ln_f_bias,
            value_norms,
        })
    }

    /// Writes the weight set back out under the same tensor names.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = TensorFileWriter::new();
        w.add_matrix("wte.weight", &self.wte);
        w.add_matrix("wpe.weight", &self.wpe);
        for (i, layer) in self.layers.iter().enumerate() {
            let name = |suffix: &str| format!("h.{i}.{suffix}");
            let d = layer.ln_1_gain.len();
            w.add(&name("ln_1.weight"), vec![d], &layer.ln_1_gain);
            w.add(&name("ln_1.bias"), vec![d], &layer.ln_1_bias);
            w.add_matrix(&name("attn.c_attn.weight"), &layer.attn_qkv_w);
            w.add(&name("attn.c_attn.bias"), vec![3 * d], &layer.attn_qkv_b);
            w.add_matrix(&name("attn.c_proj.weight"), &layer.attn_proj_w);
            w.add(&name("attn.c_proj.bias"), vec![d], &layer.attn_proj_b);
            w.add(&name("ln_2.weight"), vec![d], &layer.ln_2_gain);
            w.add(&name("ln_2.bias"), vec![d], &layer.ln_2_bias);
            w.add_matrix(&name("mlp.c_fc.weight"), &layer.ffn_in_w);
            w.add(&name("mlp.c_fc.bias"), vec![layer.ffn_in_b.len()], &layer.ffn_in_b);
            w.add_matrix(&name("mlp.c_proj.weight"), &layer.ffn_out_w);
            w.add(&name("mlp.c_proj.bias"), vec![d], &layer.ffn_out_b);
        }
        let d = self.ln_f_gain.len();
        w.add("ln_f.weight", vec![d], &self.ln_f_gain);
        w.add("ln_f.bias", vec![d], &self.ln_f_bias);
        w.write(path)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::error::EngineError;

    struct Lcg {
        state: u64,
        scale: f32,
    }

    impl Lcg {
        fn next(&mut self) -> f32 {
            self.state = self
                .state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.state >> 33) as f32 / (1u64 << 31) as f32 - 0.5) * self.scale
        }

        fn mat(&mut self, r: usize, c: usize) -> Matrix {
            Matrix::from_vec(r, c, (0..r * c).map(|_| self.next()).collect())
        }

        fn vec(&mut self, n: usize) -> Vec<f32> {
            (0..n).map(|_| self.next()).collect()
        }
    }

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 4,
            d_ff: 8,
            n_heads: 2,
            vocab_size: 11,
            max_positions: 6,
            activation: crate::config::Activation::Gelu,
        }
    }

    /// Deterministic pseudo-weights, varied enough to catch layout bugs.
    pub(crate) fn arbitrary_weights(config: &ModelConfig, scale: f32) -> WeightSet {
        let mut rng = Lcg { state: 7, scale };
        let d = config.d_model;
        let layers: Vec<LayerWeights> = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln_1_gain: vec![1.0; d],
                ln_1_bias: rng.vec(d),
                attn_qkv_w: rng.mat(d, 3 * d),
                attn_qkv_b: rng.vec(3 * d),
                attn_proj_w: rng.mat(d, d),
                attn_proj_b: rng.vec(d),
                ln_2_gain: vec![1.0; d],
                ln_2_bias: rng.vec(d),
                ffn_in_w: rng.mat(d, config.d_ff),
                ffn_in_b: rng.vec(config.d_ff),
                ffn_out_w: rng.mat(config.d_ff, d),
                ffn_out_b: rng.vec(d),
            })
            .collect();
        let value_norms = layers.iter().map(|l| l.ffn_out_w.row_norms()).collect();
        WeightSet {
            wte: rng.mat(config.vocab_size, d),
            wpe: rng.mat(config.max_positions, d),
            layers,
            ln_f_gain: vec![1.0; d],
            ln_f_bias: vec![0.0; d],
            value_norms,
        }
    }

    #[test]
    fn write_load_round_trip() {
        let config = tiny_config();
        let weights = arbitrary_weights(&config, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        weights.write(&path).unwrap();
        let reloaded = WeightSet::load(&path, &config).unwrap();
        assert_eq!(reloaded.wte.data, weights.wte.data);
        assert_eq!(reloaded.layers[1].ffn_out_w.data, weights.layers[1].ffn_out_w.data);
        assert_eq!(reloaded.value_norms, weights.value_norms);
    }

    #[test]
    fn missing_layer_tensor_is_reported_by_name() {
        let config = tiny_config();
        let weights = arbitrary_weights(&config, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        weights.write(&path).unwrap();
        let mut bigger = config.clone();
        bigger.n_layers = 3;
        match WeightSet::load(&path, &bigger) {
            Err(EngineError::MissingTensor(name)) => assert!(name.starts_with("h.2.")),
            other => panic!("expected missing tensor, got {other:?}"),
        }
    }

    #[test]
    fn wrong_width_is_a_shape_mismatch() {
        let config = tiny_config();
        let weights = arbitrary_weights(&config, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.safetensors");
        weights.write(&path).unwrap();
        let mut wider = config.clone();
        wider.d_ff = 16;
        match WeightSet::load(&path, &wider) {
            Err(EngineError::ShapeMismatch { name, .. }) => {
                assert!(name.contains("mlp") || name.contains("attn"), "{name}");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
