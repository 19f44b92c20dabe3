//! Deterministic GPT-2-small-shaped checkpoint for engine fidelity checks.
//!
//! Every weight is a closed-form function of the seed and the tensor name,
//! so the checkpoint can be regenerated anywhere and compared against a
//! reference run bit for bit. The token embedding is scaled up so final
//! logits are well separated; everything else follows GPT-2 init scale.

use std::path::Path;

use memlens_engine::safetensors::TensorFileWriter;
use memlens_engine::{ModelConfig, Result};

use crate::rng::{symmetric_f32, tensor_seed};

pub const GPT2_SMALL_SEED: u64 = 0x6d656d6c656e7331; // "memlens1"

fn fill(seed: u64, name: &str, len: usize, scale: f32, offset: f32) -> Vec<f32> {
    let s = tensor_seed(seed, name);
    (0..len)
        .map(|i| offset + symmetric_f32(s, i as u64, scale))
        .collect()
}

/// Writes config.json and model.safetensors for a synthetic checkpoint into
/// `dir`. Tokenizer files are not written here; callers pair the weights
/// with whatever vocab matches `config.vocab_size`.
pub fn write_random_checkpoint(dir: &Path, config: &ModelConfig, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| memlens_engine::EngineError::io(&dir.display().to_string(), e))?;
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| memlens_engine::EngineError::Config(e.to_string()))?;
    std::fs::write(dir.join("config.json"), config_json)
        .map_err(|e| memlens_engine::EngineError::io("config.json", e))?;

    let d = config.d_model;
    let ff = config.d_ff;
    let mut w = TensorFileWriter::new();
    let add = |w: &mut TensorFileWriter, name: &str, shape: Vec<usize>, scale: f32, offset: f32| {
        let len = shape.iter().product();
        w.add(name, shape, &fill(seed, name, len, scale, offset));
    };

    add(&mut w, "wte.weight", vec![config.vocab_size, d], 0.4, 0.0);
    add(&mut w, "wpe.weight", vec![config.max_positions, d], 0.02, 0.0);
    for i in 0..config.n_layers {
        let t = |suffix: &str| format!("h.{i}.{suffix}");
        add(&mut w, &t("ln_1.weight"), vec![d], 0.05, 1.0);
        add(&mut w, &t("ln_1.bias"), vec![d], 0.005, 0.0);
        add(&mut w, &t("attn.c_attn.weight"), vec![d, 3 * d], 0.02, 0.0);
        add(&mut w, &t("attn.c_attn.bias"), vec![3 * d], 0.005, 0.0);
        add(&mut w, &t("attn.c_proj.weight"), vec![d, d], 0.02, 0.0);
        add(&mut w, &t("attn.c_proj.bias"), vec![d], 0.005, 0.0);
        add(&mut w, &t("ln_2.weight"), vec![d], 0.05, 1.0);
        add(&mut w, &t("ln_2.bias"), vec![d], 0.005, 0.0);
        add(&mut w, &t("mlp.c_fc.weight"), vec![d, ff], 0.02, 0.0);
        add(&mut w, &t("mlp.c_fc.bias"), vec![ff], 0.005, 0.0);
        add(&mut w, &t("mlp.c_proj.weight"), vec![ff, d], 0.02, 0.0);
        add(&mut w, &t("mlp.c_proj.bias"), vec![d], 0.005, 0.0);
    }
    add(&mut w, "ln_f.weight", vec![d], 0.05, 1.0);
    add(&mut w, "ln_f.bias", vec![d], 0.005, 0.0);
    w.write(&dir.join("model.safetensors"))
}

/// Builds the fidelity checkpoint into `dir` with the GPT-2 tokenizer files
/// copied from `vocab_src`/`merges_src`. Skips work if the completion
/// marker is already present; concurrent callers race benignly because the
/// build lands via an atomic rename.
pub fn ensure_gpt2_small(dir: &Path, vocab_src: &Path, merges_src: &Path) -> Result<()> {
    let marker = dir.join(".complete");
    if marker.exists() {
        return Ok(());
    }
    let staging = dir.with_extension("building");
    let _ = std::fs::remove_dir_all(&staging);
    write_random_checkpoint(&staging, &ModelConfig::gpt2_small(), GPT2_SMALL_SEED)?;
    for (src, name) in [(vocab_src, "vocab.json"), (merges_src, "merges.txt")] {
        std::fs::copy(src, staging.join(name))
            .map_err(|e| memlens_engine::EngineError::io(&src.display().to_string(), e))?;
    }
    std::fs::write(staging.join(".complete"), b"ok")
        .map_err(|e| memlens_engine::EngineError::io(".complete", e))?;
    match std::fs::rename(&staging, dir) {
        Ok(()) => Ok(()),
        Err(_) if marker.exists() => {
            // another builder finished first; keep theirs
            let _ = std::fs::remove_dir_all(&staging);
            Ok(())
        }
        Err(e) => Err(memlens_engine::EngineError::io(&dir.display().to_string(), e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_is_reproducible_and_loadable() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            vocab_size: 11,
            max_positions: 6,
            activation: Default::default(),
        };
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        write_random_checkpoint(&a, &cfg, 7).unwrap();
        write_random_checkpoint(&b, &cfg, 7).unwrap();
        let bytes_a = std::fs::read(a.join("model.safetensors")).unwrap();
        let bytes_b = std::fs::read(b.join("model.safetensors")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        memlens_engine::WeightSet::load(&a.join("model.safetensors"), &cfg).unwrap();

        let c = tmp.path().join("c");
        write_random_checkpoint(&c, &cfg, 8).unwrap();
        assert_ne!(bytes_a, std::fs::read(c.join("model.safetensors")).unwrap());
    }
}
