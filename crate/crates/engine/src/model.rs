//! Decoder forward pass with residual-stream tracing.
//!
//! Two equivalent paths exist. `forward_trace` processes every position
//! jointly and can record the residual stream (and FFN coefficients) at any
//! set of positions. The prefix-cache path (`prefix_cache` + `trace_last`)
//! exploits causal masking: positions before the last are independent of
//! the last token and of last-position-scoped interventions, so one cached
//! prefix serves any number of intervened last-position passes. Both paths
//! run the same per-row arithmetic and produce bit-identical results.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{EngineError, Result};
use crate::intervention::{InterventionSpec, PositionScope};
use crate::tensor::{self, Matrix};
use crate::tokenizer::Tokenizer;
use crate::weights::WeightSet;

pub struct Model {
    pub config: ModelConfig,
    pub weights: WeightSet,
    pub tokenizer: Tokenizer,
}

/// Residual-stream snapshots at the last position of a traced sequence.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `hidden[0]` is the token+position embedding; `hidden[l]` for l >= 1
    /// is the residual after layer l's FFN add. Length is n_layers + 1.
    pub hidden: Vec<Vec<f32>>,
    /// Next-token logits at the last position, final norm applied.
    pub logits: Vec<f32>,
}

/// Per-position residual-stream history captured by `forward_trace`.
#[derive(Debug, Clone)]
pub struct TraceBuffer {
    /// The traced positions, ascending.
    pub positions: Vec<usize>,
    /// `hidden[p][0]` is the embedding at traced position index p;
    /// `hidden[p][l]` the residual after layer l. Each entry has
    /// n_layers + 1 vectors of dimension d_model.
    pub hidden: Vec<Vec<Vec<f32>>>,
    /// `ffn_coeffs[p][l-1]` holds the layer-l FFN coefficient vector
    /// (post-zeroing when intervened) at traced position index p.
    pub ffn_coeffs: Vec<Vec<Vec<f32>>>,
}

/// Per-layer keys and values for the non-final positions of one sequence.
/// Only valid together with the exact token sequence it was built from.
pub struct PrefixCache {
    len: usize,
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
}

impl PrefixCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Model {
    /// Loads a model directory: `config.json`, `model.safetensors`,
    /// `vocab.json`, `merges.txt`.
    pub fn load(dir: &Path) -> Result<Self> {
        let config_path = dir.join("config.json");
        let text = std::fs::read_to_string(&config_path)
            .map_err(|e| EngineError::io(&config_path.display().to_string(), e))?;
        let config: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| EngineError::Config(format!("{}: {e}", config_path.display())))?;
        config.validate()?;
        let tokenizer = Tokenizer::load(&dir.join("vocab.json"), &dir.join("merges.txt"))?;
        if tokenizer.vocab_size() != config.vocab_size {
            return Err(EngineError::Config(format!(
                "vocab.json has {} entries but config.json declares vocab_size {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        let weights = WeightSet::load(&dir.join("model.safetensors"), &config)?;
        Ok(Self {
            config,
            weights,
            tokenizer,
        })
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        self.tokenizer.encode(text)
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn validate_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(EngineError::EmptySequence);
        }
        if tokens.len() > self.config.max_positions {
            return Err(EngineError::SequenceTooLong {
                len: tokens.len(),
                max_positions: self.config.max_positions,
            });
        }
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(EngineError::TokenOutOfRange {
                    id: t,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn embed(&self, token: u32, pos: usize) -> Vec<f32> {
        let mut x = self.weights.wte.row(token as usize).to_vec();
        tensor::add_assign(&mut x, self.weights.wpe.row(pos));
        x
    }

    /// Full trace of the last position with no intervention.
    pub fn trace(&self, tokens: &[u32]) -> Result<Trace> {
        self.trace_with(tokens, None)
    }

    /// Last-position trace, optionally intervened. Last-position-scoped
    /// interventions take the prefix-cache path; all-position scopes run
    /// the joint pass.
    pub fn trace_with(&self, tokens: &[u32], spec: Option<&InterventionSpec>) -> Result<Trace> {
        let all_positions = spec.is_some_and(|s| s.position_scope == PositionScope::AllPositions);
        if all_positions {
            let last = tokens.len().saturating_sub(1);
            let (logits, mut buffer) = self.forward_trace(tokens, &[last], spec)?;
            return Ok(Trace {
                hidden: buffer.hidden.pop().expect("one traced position"),
                logits,
            });
        }
        let cache = self.prefix_cache(tokens)?;
        self.trace_last(&cache, tokens, spec)
    }

    /// Joint forward pass over all positions. Records the residual stream
    /// and FFN coefficients at `trace_positions`; returns the last
    /// position's output logits alongside the buffer.
    pub fn forward_trace(
        &self,
        tokens: &[u32],
        trace_positions: &[usize],
        spec: Option<&InterventionSpec>,
    ) -> Result<(Vec<f32>, TraceBuffer)> {
        self.validate_tokens(tokens)?;
        if let Some(s) = spec {
            s.validate(self.config.n_layers, self.config.d_ff)?;
        }
        let n = tokens.len();
        let d = self.config.d_model;
        let mut positions: Vec<usize> = trace_positions.to_vec();
        positions.sort_unstable();
        positions.dedup();
        if let Some(&p) = positions.iter().find(|&&p| p >= n) {
            return Err(EngineError::Invalid(format!(
                "trace position {p} outside sequence of length {n}"
            )));
        }
        let traced_index = |pos: usize| positions.binary_search(&pos).ok();

        let mut x = Matrix::zeros(n, d);
        for i in 0..n {
            x.row_mut(i)
                .copy_from_slice(self.weights.wte.row(tokens[i] as usize));
            tensor::add_assign(x.row_mut(i), self.weights.wpe.row(i));
        }
        let mut buffer = TraceBuffer {
            positions: positions.clone(),
            hidden: positions.iter().map(|&p| vec![x.row(p).to_vec()]).collect(),
            ffn_coeffs: vec![Vec::new(); positions.len()],
        };

        let mut ln = vec![0.0f32; d];
        let mut qkv_rows = Matrix::zeros(n, 3 * d);
        let mut ctx = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        for l in 0..self.config.n_layers {
            let lw = &self.weights.layers[l];
            for i in 0..n {
                tensor::layer_norm(x.row(i), &lw.ln_1_gain, &lw.ln_1_bias, &mut ln);
                tensor::vec_mat(&ln, &lw.attn_qkv_w, qkv_rows.row_mut(i));
                tensor::add_assign(qkv_rows.row_mut(i), &lw.attn_qkv_b);
            }
            let mut keys = Matrix::zeros(n, d);
            let mut values = Matrix::zeros(n, d);
            for i in 0..n {
                keys.row_mut(i).copy_from_slice(&qkv_rows.row(i)[d..2 * d]);
                values.row_mut(i).copy_from_slice(&qkv_rows.row(i)[2 * d..]);
            }
            for i in 0..n {
                self.attend(&qkv_rows.row(i)[..d], &keys, &values, i + 1, None, &mut ctx);
                tensor::vec_mat(&ctx, &lw.attn_proj_w, &mut proj);
                tensor::add_assign(&mut proj, &lw.attn_proj_b);
                tensor::add_assign(x.row_mut(i), &proj);
                tensor::layer_norm(x.row(i), &lw.ln_2_gain, &lw.ln_2_bias, &mut ln);
                let zero = spec.filter(|s| s.covers(l + 1) && s.applies_at(i, n));
                let (update, m) = self.ffn_update(l, &ln, zero);
                tensor::add_assign(x.row_mut(i), &update);
                if let Some(t) = traced_index(i) {
                    buffer.hidden[t].push(x.row(i).to_vec());
                    buffer.ffn_coeffs[t].push(m);
                }
            }
        }
        let logits = self.unembed(&self.final_norm(x.row(n - 1)));
        Ok((logits, buffer))
    }

    /// Runs positions `0..len-1` through every layer, returning their
    /// per-layer keys and values. The prefix is never intervened: with
    /// last-position scope those positions are out of scope by definition.
    pub fn prefix_cache(&self, tokens: &[u32]) -> Result<PrefixCache> {
        self.validate_tokens(tokens)?;
        let p = tokens.len() - 1;
        let d = self.config.d_model;
        let n_layers = self.config.n_layers;
        let mut cache = PrefixCache {
            len: p,
            keys: Vec::with_capacity(n_layers),
            values: Vec::with_capacity(n_layers),
        };
        if p == 0 {
            for _ in 0..n_layers {
                cache.keys.push(Matrix::zeros(0, d));
                cache.values.push(Matrix::zeros(0, d));
            }
            return Ok(cache);
        }

        let mut x = Matrix::zeros(p, d);
        for i in 0..p {
            x.row_mut(i)
                .copy_from_slice(self.weights.wte.row(tokens[i] as usize));
            tensor::add_assign(x.row_mut(i), self.weights.wpe.row(i));
        }
        let mut ln = vec![0.0f32; d];
        let mut qkv_rows = Matrix::zeros(p, 3 * d);
        let mut ctx = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        for l in 0..n_layers {
            let lw = &self.weights.layers[l];
            for i in 0..p {
                tensor::layer_norm(x.row(i), &lw.ln_1_gain, &lw.ln_1_bias, &mut ln);
                tensor::vec_mat(&ln, &lw.attn_qkv_w, qkv_rows.row_mut(i));
                tensor::add_assign(qkv_rows.row_mut(i), &lw.attn_qkv_b);
            }
            let mut keys = Matrix::zeros(p, d);
            let mut values = Matrix::zeros(p, d);
            for i in 0..p {
                keys.row_mut(i).copy_from_slice(&qkv_rows.row(i)[d..2 * d]);
                values.row_mut(i).copy_from_slice(&qkv_rows.row(i)[2 * d..]);
            }
            for i in 0..p {
                self.attend(&qkv_rows.row(i)[..d], &keys, &values, i + 1, None, &mut ctx);
                tensor::vec_mat(&ctx, &lw.attn_proj_w, &mut proj);
                tensor::add_assign(&mut proj, &lw.attn_proj_b);
                tensor::add_assign(x.row_mut(i), &proj);
                tensor::layer_norm(x.row(i), &lw.ln_2_gain, &lw.ln_2_bias, &mut ln);
                let (update, _) = self.ffn_update(l, &ln, None);
                tensor::add_assign(x.row_mut(i), &update);
            }
            cache.keys.push(keys);
            cache.values.push(values);
        }
        Ok(cache)
    }

    /// Runs the last position through every layer against a prefix cache,
    /// recording the residual stream. `spec`, when present, zeroes FFN
    /// coefficients at this position in the covered layers.
    pub fn trace_last(
        &self,
        cache: &PrefixCache,
        tokens: &[u32],
        spec: Option<&InterventionSpec>,
    ) -> Result<Trace> {
        self.validate_tokens(tokens)?;
        if cache.len + 1 != tokens.len() {
            return Err(EngineError::DimensionMismatch {
                expected: cache.len + 1,
                actual: tokens.len(),
            });
        }
        if let Some(s) = spec {
            s.validate(self.config.n_layers, self.config.d_ff)?;
        }
        let d = self.config.d_model;
        let last = tokens.len() - 1;
        let mut h = self.embed(tokens[last], last);
        let mut hidden = Vec::with_capacity(self.config.n_layers + 1);
        hidden.push(h.clone());
        let mut ln = vec![0.0f32; d];
        let mut qkv = vec![0.0f32; 3 * d];
        let mut ctx = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        for l in 0..self.config.n_layers {
            let lw = &self.weights.layers[l];
            tensor::layer_norm(&h, &lw.ln_1_gain, &lw.ln_1_bias, &mut ln);
            tensor::vec_mat(&ln, &lw.attn_qkv_w, &mut qkv);
            tensor::add_assign(&mut qkv, &lw.attn_qkv_b);
            let (q, rest) = qkv.split_at(d);
            let (k, v) = rest.split_at(d);
            self.attend(q, &cache.keys[l], &cache.values[l], cache.len, Some((k, v)), &mut ctx);
            tensor::vec_mat(&ctx, &lw.attn_proj_w, &mut proj);
            tensor::add_assign(&mut proj, &lw.attn_proj_b);
            tensor::add_assign(&mut h, &proj);
            tensor::layer_norm(&h, &lw.ln_2_gain, &lw.ln_2_bias, &mut ln);
            let zero = spec.filter(|s| s.covers(l + 1));
            let (update, _) = self.ffn_update(l, &ln, zero);
            tensor::add_assign(&mut h, &update);
            hidden.push(h.clone());
        }
        let logits = self.unembed(&self.final_norm(&h));
        Ok(Trace { hidden, logits })
    }

    /// Multi-head causal attention for one query row. Context is the first
    /// `n_prefix` rows of `keys`/`values` plus, when given, the query
    /// position's own key and value.
    fn attend(
        &self,
        q: &[f32],
        keys: &Matrix,
        values: &Matrix,
        n_prefix: usize,
        own_kv: Option<(&[f32], &[f32])>,
        out: &mut [f32],
    ) {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let n_ctx = n_prefix + own_kv.is_some() as usize;
        let mut scores = vec![0.0f32; n_ctx];
        let mut acc = vec![0.0f64; dh];
        for head in 0..self.config.n_heads {
            let hr = head * dh..(head + 1) * dh;
            let qh = &q[hr.clone()];
            for j in 0..n_prefix {
                scores[j] = ((tensor::dot(qh, &keys.row(j)[hr.clone()]) as f64) * scale) as f32;
            }
            if let Some((k, _)) = own_kv {
                scores[n_prefix] = ((tensor::dot(qh, &k[hr.clone()]) as f64) * scale) as f32;
            }
            tensor::softmax_in_place(&mut scores);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for j in 0..n_prefix {
                let a = scores[j] as f64;
                for (s, &v) in acc.iter_mut().zip(&values.row(j)[hr.clone()]) {
                    *s += a * (v as f64);
                }
            }
            if let Some((_, v)) = own_kv {
                let a = scores[n_prefix] as f64;
                for (s, &vv) in acc.iter_mut().zip(&v[hr.clone()]) {
                    *s += a * (vv as f64);
                }
            }
            for (o, a) in out[hr].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
    }

    /// FFN coefficients for one normed input: m_j = f(h·k_j + b_j).
    fn ffn_coeffs(&self, layer: usize, x_ln: &[f32]) -> Vec<f32> {
        let lw = &self.weights.layers[layer];
        let mut m = vec![0.0f32; self.config.d_ff];
        tensor::vec_mat(x_ln, &lw.ffn_in_w, &mut m);
        tensor::add_assign(&mut m, &lw.ffn_in_b);
        for v in m.iter_mut() {
            *v = self.config.activation.apply(*v);
        }
        m
    }

    /// Value mixdown: sum_j m_j v_j + output bias.
    fn ffn_mixdown(&self, layer: usize, m: &[f32]) -> Vec<f32> {
        let lw = &self.weights.layers[layer];
        let mut update = vec![0.0f32; self.config.d_model];
        tensor::vec_mat(m, &lw.ffn_out_w, &mut update);
        tensor::add_assign(&mut update, &lw.ffn_out_b);
        update
    }

    /// FFN sub-layer output with optional coefficient zeroing. Zeroing
    /// removes sub-updates m_j v_j; the output bias always remains.
    /// Returns the residual update and the (post-zeroing) coefficients.
    fn ffn_update(
        &self,
        layer: usize,
        x_ln: &[f32],
        spec: Option<&InterventionSpec>,
    ) -> (Vec<f32>, Vec<f32>) {
        let mut m = self.ffn_coeffs(layer, x_ln);
        if let Some(s) = spec {
            crate::intervention::zero_coefficients(
                &mut m,
                &self.weights.value_norms[layer],
                s.mode,
                s.k,
            );
        }
        let update = self.ffn_mixdown(layer, &m);
        (update, m)
    }

    /// The FFN sub-layer as a standalone operation: the residual update
    /// (sub-update sum plus output bias) and the coefficient vector for a
    /// normed input at a 1-based layer. Same code path as the forward pass.
    pub fn ffn_sublayer(&self, h: &[f32], layer: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        if layer < 1 || layer > self.config.n_layers {
            return Err(EngineError::LayerOutOfRange {
                layer,
                n_layers: self.config.n_layers,
            });
        }
        tensor::expect_len("ffn_sublayer input", h.len(), self.config.d_model)?;
        let (update, m) = self.ffn_update(layer - 1, h, None);
        Ok((update, m))
    }

    /// Dominance scores |m_j|·||v_j|| for a coefficient vector at a
    /// 1-based layer, using the precomputed value norms.
    pub fn dominance_scores(&self, m: &[f32], layer: usize) -> Result<Vec<f64>> {
        if layer < 1 || layer > self.config.n_layers {
            return Err(EngineError::LayerOutOfRange {
                layer,
                n_layers: self.config.n_layers,
            });
        }
        tensor::expect_len("dominance coefficients", m.len(), self.config.d_ff)?;
        Ok(crate::intervention::dominance_scores(
            m,
            &self.weights.value_norms[layer - 1],
        ))
    }

    pub fn final_norm(&self, h: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; h.len()];
        tensor::layer_norm(h, &self.weights.ln_f_gain, &self.weights.ln_f_bias, &mut out);
        out
    }

    /// Tied-head projection: logits over the vocab for one residual vector.
    pub fn unembed(&self, h: &[f32]) -> Vec<f32> {
        let mut logits = vec![0.0f32; self.config.vocab_size];
        tensor::mat_vec(&self.weights.wte, h, &mut logits);
        logits
    }
}
