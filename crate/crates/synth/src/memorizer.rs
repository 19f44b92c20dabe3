//! Builds the memorization model pair: a 24-layer probe whose feed-forward
//! layers recall planted idioms and facts in gradual stages, and a shallow
//! 4-layer scorer that completes only planted bigrams. Both share one
//! vocabulary, merge table, and embedding geometry, and both are written as
//! ordinary model directories loadable by the engine.
//!
//! The residual stream is partitioned into fixed coordinate blocks:
//!   0..80    token identity (a fixed unit direction per vocab entry)
//!   80..128  attention bag of words (uniform-attention mean, recoded)
//!   128..176 relay recoding of the bag, written by the layer-0 FFN
//!   176..248 confidence directions, one per planted item
//!   248      corpus-frequency prior coordinate
//!   249..256 positional tail
//! Embedding rows live only in the identity and frequency blocks, so bag,
//! relay, and confidence activity is invisible to the readout until a staged
//! write puts mass back on identity axes. Planted detectors are saturating
//! neuron pairs: the written amount is exact once the match statistic clears
//! the upper threshold, and partial matches stay bounded.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use memlens_dataset::sample_wiki_prompts;
use memlens_engine::safetensors::TensorFileWriter;
use memlens_engine::tensor::{self, Matrix};
use memlens_engine::{
    intervention_examples, probe_example, run_intervention, Activation, EngineError,
    InterventionSpec, LensRecord, Model, ModelConfig, ProbeItem, SetLabel, Tokenizer, ZeroMode,
};

use crate::bpe::build_tokenizer;
use crate::data::{generate, DataSet, Route, DATA_SEED, SOURCES};

pub const BUILD_SEED: u64 = 0x6d65_6d6f_3031;
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Wiki window count and seed used while calibrating the frequency prior.
/// Probing tools must sample with the same values for their wiki curves to
/// match the ones the builder verified.
pub const N_WIKI_PROBES: usize = 600;
pub const WIKI_SAMPLE_SEED: u64 = 17;

const D: usize = 256;
const FF: usize = 1024;
const PROBE_LAYERS: usize = 24;
const SCORER_LAYERS: usize = 4;
const HEADS: usize = 8;
const MAX_POS: usize = 128;

const ID_END: usize = 80;
const BAG_START: usize = 80;
const BAG_END: usize = 128;
const RELAY_START: usize = 128;
const RELAY_END: usize = 176;
const CONF_START: usize = 176;
const CONF_END: usize = 248;
const FREQ: usize = 248;
const POS_START: usize = 249;

const N_RELAY: usize = 1024;
const BAG_NORM_TARGET: f64 = 4.0;
const ENT_NORM_TARGET: f64 = 4.0;
const RELAY_NORM_TARGET: f64 = 4.0;
const CONF_WRITE: f64 = 3.0;
const CONF_MAX_COS: f64 = 0.40;

// Entity pickup heads: heads 3..6 of probe layer 0 attend to position 4
// (both fact templates place the entity there) and copy its identity block
// into the bag at full strength. Q comes from the bias alone; K reads the
// positional block, whose per-position directions cycle mod 7, so the score
// is position-, not content-, dependent.
const POS_RHO: f64 = 0.05;
const POS_Q0: f32 = 250.0;
const HEAD_DIM: usize = D / HEADS;

const PRIOR_BASE: f64 = 0.55;
const PRIOR_FLOOR: f64 = 0.05;
const PRIOR_KNEE: f64 = 4.0;

const BIGRAM_MARGIN: f64 = 2.0;

// Staged recall schedule: (layer, probability floor). Idioms climb on odd
// layers and finish with a confident final write; facts climb on even
// layers, peak two layers before the end, then hedge onto distractors.
const IDIOM_STAGES: [(usize, f64); 10] = [
    (3, 2e-4),
    (5, 6e-4),
    (7, 1.5e-3),
    (9, 4e-3),
    (11, 8e-3),
    (13, 1.5e-2),
    (15, 3.5e-2),
    (17, 7e-2),
    (19, 1.3e-1),
    (21, 2.2e-1),
];
const FACT_STAGES: [(usize, f64); 8] = [
    (4, 2e-4),
    (6, 6e-4),
    (8, 2e-3),
    (10, 5e-3),
    (12, 1e-2),
    (14, 3e-2),
    (16, 8e-2),
    (18, 2e-1),
];
const FACT_PEAK_LAYER: usize = 20;
const FACT_HEDGE_LAYER: usize = 22;
const IDIOM_FINAL_LAYER: usize = 23;
const N_HEDGE_DISTRACTORS: usize = 10;

pub struct PairPaths {
    pub probe: PathBuf,
    pub scorer: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct BuildStats {
    pub vocab_size: usize,
    pub n_mem_idioms: usize,
    pub n_kept_other: usize,
    pub n_pred_bigrams: usize,
    pub n_sim: usize,
    pub n_mem_facts: usize,
    pub n_other_facts: usize,
    pub prior_gain: f64,
    pub prior_noise: f64,
    pub alpha0: f64,
    pub layer1_rank_mean: f64,
    pub layer1_freq_r: f64,
    pub echo_share: f64,
    pub mem_final_prob_mean: f64,
    pub mem_rank10_layer: usize,
    pub mem_rank10_prob_mean: f64,
    pub wiki_final_prob_mean: f64,
    pub fact_peak_mean: f64,
    pub fact_final_mean: f64,
    pub pct_changed_nd_l1: f64,
    pub rank_after_nd_l1: f64,
    pub pct_changed_dom_l1: f64,
    pub pct_changed_late_max: f64,
    pub build_secs: f64,
}

impl fmt::Display for BuildStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vocab {}", self.vocab_size)?;
        writeln!(
            f,
            "idioms: {} memorized, {} kept-other, {} bigram, {} similarity",
            self.n_mem_idioms, self.n_kept_other, self.n_pred_bigrams, self.n_sim
        )?;
        writeln!(
            f,
            "facts: {} memorized, {} control",
            self.n_mem_facts, self.n_other_facts
        )?;
        writeln!(
            f,
            "prior dial: gain {:.3} noise {:.3} alpha0 {:.4}",
            self.prior_gain, self.prior_noise, self.alpha0
        )?;
        writeln!(
            f,
            "layer-1 readout: rank mean {:.1}, freq r {:.3}, echo {:.3}",
            self.layer1_rank_mean, self.layer1_freq_r, self.echo_share
        )?;
        writeln!(
            f,
            "probe: mem final prob {:.3}, rank<10 at layer {} (prob there {:.3}), wiki {:.3}",
            self.mem_final_prob_mean,
            self.mem_rank10_layer,
            self.mem_rank10_prob_mean,
            self.wiki_final_prob_mean
        )?;
        writeln!(
            f,
            "facts: peak {:.3} final {:.3}",
            self.fact_peak_mean, self.fact_final_mean
        )?;
        writeln!(
            f,
            "zeroing: layer1 spread {:.1}% changed (rank after {:.0}), layer1 top {:.1}%, late max {:.1}%",
            self.pct_changed_nd_l1,
            self.rank_after_nd_l1,
            self.pct_changed_dom_l1,
            self.pct_changed_late_max
        )?;
        write!(f, "built in {:.1}s", self.build_secs)
    }
}

fn drng(stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(BUILD_SEED ^ stage.wrapping_mul(GAMMA))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen_range(0.0..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

fn unit_gauss(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        if normalize(&mut v) > 1e-9 {
            return v;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One planted FFN neuron: sparse key column, bias, sparse value row, all
/// stored with ascending coordinates so the mirrored matmul accumulates in
/// the same order as the dense engine kernel.
#[derive(Clone)]
struct Neuron {
    slot: usize,
    key: Vec<(usize, f32)>,
    bias: f32,
    value: Vec<(usize, f32)>,
}

#[derive(Clone, Default)]
struct LayerPlan {
    neurons: Vec<Neuron>,
}

impl LayerPlan {
    fn next_slot(&self) -> usize {
        self.neurons.last().map_or(0, |n| n.slot + 1)
    }
}

/// Key pre-activation against a normalized state, matching the engine's
/// column accumulation: f64 sum in ascending coordinate order, skipping
/// exact-zero inputs, cast to f32 before the bias is added.
fn preact(x: &[f32], key: &[(usize, f32)]) -> f32 {
    let mut acc = 0.0f64;
    for &(i, w) in key {
        let xi = x[i];
        if xi != 0.0 {
            acc += (xi as f64) * (w as f64);
        }
    }
    acc as f32
}

fn ln_unit(x: &[f32], ones: &[f32], zeros: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    tensor::layer_norm(x, ones, zeros, &mut out);
    out
}

/// Applies one planted FFN to a state in place, reproducing the engine bit
/// for bit: relu(preact + bias), then per-coordinate f64 accumulation over
/// active neurons in slot order, cast to f32, then added to the residual.
fn ffn_apply(h: &mut [f32], plan: &LayerPlan, ones: &[f32], zeros: &[f32]) {
    if plan.neurons.is_empty() {
        return;
    }
    let x = ln_unit(h, ones, zeros);
    let mut acc = vec![0.0f64; h.len()];
    for n in &plan.neurons {
        let m = (preact(&x, &n.key) + n.bias).max(0.0);
        if m != 0.0 {
            let m64 = m as f64;
            for &(c, w) in &n.value {
                acc[c] += m64 * (w as f64);
            }
        }
    }
    for (hc, a) in h.iter_mut().zip(&acc) {
        *hc += *a as f32;
    }
}

fn push_pair(
    plan: &mut LayerPlan,
    key: &[(usize, f32)],
    bias_fold: f64,
    t1: f64,
    t2: f64,
    dir: &[(usize, f64)],
    amount: f64,
) {
    assert!(t2 > t1, "saturating pair needs t2 > t1 ({t1} vs {t2})");
    let scale = amount / (t2 - t1);
    let value: Vec<(usize, f32)> = dir.iter().map(|&(c, w)| (c, (scale * w) as f32)).collect();
    let neg: Vec<(usize, f32)> = value.iter().map(|&(c, w)| (c, -w)).collect();
    let slot = plan.next_slot();
    plan.neurons.push(Neuron {
        slot,
        key: key.to_vec(),
        bias: (bias_fold - t1) as f32,
        value,
    });
    plan.neurons.push(Neuron {
        slot: slot + 1,
        key: key.to_vec(),
        bias: (bias_fold - t2) as f32,
        value: neg,
    });
}

/// Highest competing pre-activation: the max over all states except the
/// owner and any state at or above half the owner's statistic. States in
/// that band are genuine co-matches and are allowed to fire; everything
/// below it bounds the firing threshold.
fn competitor_max(pres: &[f64], own: usize, c: f64) -> f64 {
    let mut mc = f64::MIN;
    for (i, &p) in pres.iter().enumerate() {
        if i != own && p < 0.5 * c && p > mc {
            mc = p;
        }
    }
    mc
}

/// Exact readout of a state under the final norm, computed in f64 directly
/// from the embedding rows, with support for solving the coefficient of a
/// rank-one update h + tau * dir without recomputing token products.
struct Lens<'a> {
    wte: &'a Matrix,
    row_sums: Vec<f64>,
}

struct LensState {
    p: Vec<f64>,
    sum_h: f64,
    hh: f64,
}

struct LensDir {
    q: Vec<f64>,
    sum_dir: f64,
    hd: f64,
    dd: f64,
}

impl<'a> Lens<'a> {
    fn new(wte: &'a Matrix) -> Self {
        let row_sums = (0..wte.rows)
            .map(|v| wte.row(v).iter().map(|&x| x as f64).sum())
            .collect();
        Lens { wte, row_sums }
    }

    fn state(&self, h: &[f32]) -> LensState {
        let sum_h = h.iter().map(|&x| x as f64).sum();
        let hh = h.iter().map(|&x| (x as f64) * (x as f64)).sum();
        let p = (0..self.wte.rows)
            .map(|v| {
                let row = self.wte.row(v);
                let mut acc = 0.0f64;
                for i in 0..ID_END {
                    acc += (row[i] as f64) * (h[i] as f64);
                }
                acc + (row[FREQ] as f64) * (h[FREQ] as f64)
            })
            .collect();
        LensState { p, sum_h, hh }
    }

    fn dir(&self, h: &[f32], dir: &[(usize, f64)]) -> LensDir {
        let sum_dir = dir.iter().map(|&(_, w)| w).sum();
        let hd = dir.iter().map(|&(c, w)| (h[c] as f64) * w).sum();
        let dd = dir.iter().map(|&(_, w)| w * w).sum();
        let q = (0..self.wte.rows)
            .map(|v| {
                let row = self.wte.row(v);
                dir.iter().map(|&(c, w)| (row[c] as f64) * w).sum()
            })
            .collect();
        LensDir { q, sum_dir, hd, dd }
    }

    fn logits_at(&self, st: &LensState, dir: Option<&LensDir>, tau: f64) -> Vec<f64> {
        let d = self.wte.cols as f64;
        let (sum, ss) = match dir {
            Some(dr) => (
                st.sum_h + tau * dr.sum_dir,
                st.hh + 2.0 * tau * dr.hd + tau * tau * dr.dd,
            ),
            None => (st.sum_h, st.hh),
        };
        let mu = sum / d;
        let var = ss / d - mu * mu;
        let inv = 1.0 / (var + 1e-5).sqrt();
        (0..self.wte.rows)
            .map(|v| {
                let p = match dir {
                    Some(dr) => st.p[v] + tau * dr.q[v],
                    None => st.p[v],
                };
                (p - mu * self.row_sums[v]) * inv
            })
            .collect()
    }

    fn prob_of(logits: &[f64], token: u32) -> f64 {
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        (logits[token as usize] - mx).exp() / denom
    }

    fn rank_of(logits: &[f64], token: u32) -> usize {
        let lt = logits[token as usize];
        1 + logits.iter().filter(|&&l| l > lt).count()
    }

    fn argmax(logits: &[f64]) -> u32 {
        let mut best = 0usize;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        best as u32
    }

    fn bisect(lo0: f64, hi0: f64, mut pred: impl FnMut(f64) -> bool) -> f64 {
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..52 {
            let mid = 0.5 * (lo + hi);
            if pred(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn grow(&self, init: f64, mut ok: impl FnMut(f64) -> bool, what: &str) -> f64 {
        let mut hi = init;
        let mut guard = 0;
        while !ok(hi) {
            hi *= 2.0;
            guard += 1;
            assert!(guard < 48, "{what} unreachable along direction");
        }
        hi
    }

    /// Smallest tau >= 0 with prob(token) >= goal. The target probability is
    /// monotone in tau for identity-directed writes. Returns 0 if already met.
    fn solve_prob_up(&self, st: &LensState, dr: &LensDir, token: u32, goal: f64) -> f64 {
        let f = |tau: f64| Self::prob_of(&self.logits_at(st, Some(dr), tau), token);
        if f(0.0) >= goal {
            return 0.0;
        }
        let hi = self.grow(0.25, |t| f(t) >= goal, "probability goal");
        Self::bisect(0.0, hi, |t| f(t) >= goal)
    }

    /// Smallest tau >= 0 with prob(token) <= goal, for hedge writes that
    /// spread mass onto distractor directions.
    fn solve_prob_down(&self, st: &LensState, dr: &LensDir, token: u32, goal: f64) -> f64 {
        let f = |tau: f64| Self::prob_of(&self.logits_at(st, Some(dr), tau), token);
        if f(0.0) <= goal {
            return 0.0;
        }
        let hi = self.grow(0.25, |t| f(t) <= goal, "hedge goal");
        Self::bisect(0.0, hi, |t| f(t) <= goal)
    }

    /// Smallest tau >= 0 putting token's logit at least `margin` above every
    /// other logit.
    fn solve_margin(&self, st: &LensState, dr: &LensDir, token: u32, margin: f64) -> f64 {
        let g = |tau: f64| {
            let logits = self.logits_at(st, Some(dr), tau);
            let lt = logits[token as usize];
            let other = logits
                .iter()
                .enumerate()
                .filter(|&(v, _)| v != token as usize)
                .map(|(_, &l)| l)
                .fold(f64::NEG_INFINITY, f64::max);
            lt - other - margin
        };
        if g(0.0) >= 0.0 {
            return 0.0;
        }
        let hi = self.grow(0.25, |t| g(t) >= 0.0, "logit margin");
        Self::bisect(0.0, hi, |t| g(t) >= 0.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Kind {
    MemIdiom,
    KeptIdiom,
    SimIdiom,
    BigramFrag,
    MemFact,
    OtherFact,
    Window,
}

#[derive(Clone)]
struct TrackedItem {
    kind: Kind,
    /// Index within the item's own family; doubles as the confidence
    /// direction id for planted kinds.
    fam: usize,
    prompt: String,
    target_word: String,
    /// Entity word for facts, empty otherwise.
    entity: String,
    /// Relation label for facts, empty otherwise.
    relation: String,
    tokens: Vec<u32>,
    target_tok: u32,
    last_tok: u32,
    h: Vec<f32>,
    /// Realized readout probability of the target after the last planted
    /// layer that touched this item.
    prob: f64,
}

struct Builder {
    tokenizer: Tokenizer,
    v: usize,
    ones: Vec<f32>,
    zeros: Vec<f32>,
    ehat: Vec<Vec<f64>>,
    alpha_jitter: Vec<f64>,
    counts: Vec<u64>,
    wte: Matrix,
    wpe: Matrix,
    attn_w: Matrix,
    attn_b: Vec<f32>,
    proj_w: Matrix,
    pos_f: Vec<Vec<f64>>,
    plans: Vec<LayerPlan>,
    scorer_plan: LayerPlan,
    items: Vec<TrackedItem>,
    conf_dirs: Vec<Vec<f64>>,
    relay_keys: Vec<Vec<f64>>,
    relay_vals: Vec<Vec<f64>>,
    bag_basis: Vec<Vec<f64>>,
    /// (cue token, value word, value token) per dropped-as-predictable
    /// idiom, in cue token order.
    bigrams: Vec<(u32, String, u32)>,
    stats: BuildStats,
}

fn encode(tok: &Tokenizer, text: &str) -> Vec<u32> {
    tok.encode(text)
        .unwrap_or_else(|e| panic!("tokenizing {text:?}: {e}"))
}

fn sp_token(tok: &Tokenizer, word: &str) -> Option<u32> {
    let enc = encode(tok, &format!(" {word}"));
    if enc.len() == 1 {
        Some(enc[0])
    } else {
        None
    }
}

/// Prompt word counts of the kept idioms in canonical source order. Probing
/// tools derive the same list from the filtered corpus, so wiki windows
/// sampled with these lengths line up between build and probe time.
pub fn kept_prompt_lengths(ds: &DataSet) -> Vec<usize> {
    let mut out = Vec::new();
    for src in SOURCES {
        for spec in ds.idioms.iter().filter(|s| s.source == src && s.is_kept()) {
            out.push(spec.prompt.len());
        }
    }
    out
}

impl Builder {
    fn new(ds: &DataSet, staging_probe: &Path, staging_scorer: &Path) -> io::Result<Builder> {
        let tok_files = build_tokenizer(ds);
        tok_files.write(staging_probe)?;
        tok_files.write(staging_scorer)?;
        let tokenizer = Tokenizer::load(
            &staging_probe.join("vocab.json"),
            &staging_probe.join("merges.txt"),
        )
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let v = tok_files.vocab.len();

        let mut b = Builder {
            tokenizer,
            v,
            ones: vec![1.0; D],
            zeros: vec![0.0; D],
            ehat: Vec::new(),
            alpha_jitter: Vec::new(),
            counts: vec![0u64; v],
            wte: Matrix::zeros(v, D),
            wpe: Matrix::zeros(MAX_POS, D),
            attn_w: Matrix::zeros(D, 3 * D),
            attn_b: vec![0.0; 3 * D],
            proj_w: Matrix::zeros(D, D),
            pos_f: Vec::new(),
            plans: vec![LayerPlan::default(); PROBE_LAYERS],
            scorer_plan: LayerPlan::default(),
            items: Vec::new(),
            conf_dirs: Vec::new(),
            relay_keys: Vec::new(),
            relay_vals: Vec::new(),
            bag_basis: Vec::new(),
            bigrams: Vec::new(),
            stats: BuildStats::default(),
        };
        b.stats.vocab_size = v;

        let mut rng = drng(1);
        b.ehat = (0..v).map(|_| unit_gauss(&mut rng, ID_END)).collect();
        let mut rng = drng(2);
        b.alpha_jitter = (0..v).map(|_| rng.gen_range(0.0..1.0)).collect();
        // Orthonormal per-residue position directions; the residue-4 one is
        // zero-sum so layer norm's mean shift cancels out of the entity
        // pickup score exactly.
        let mut rng = drng(9);
        let n_pos_dirs = D - POS_START;
        let mut pos_f: Vec<Vec<f64>> = vec![Vec::new(); n_pos_dirs];
        let mut done: Vec<Vec<f64>> = Vec::new();
        let order = [4usize, 0, 1, 2, 3, 5, 6];
        for (oi, &slot) in order.iter().enumerate() {
            let mut f = unit_gauss(&mut rng, n_pos_dirs);
            if oi == 0 {
                let m = f.iter().sum::<f64>() / n_pos_dirs as f64;
                for x in f.iter_mut() {
                    *x -= m;
                }
            }
            for d in &done {
                let c: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
                for (x, &dx) in f.iter_mut().zip(d) {
                    *x -= c * dx;
                }
            }
            let n = normalize(&mut f);
            assert!(n > 1e-6, "degenerate position basis");
            done.push(f.clone());
            pos_f[slot] = f;
        }
        b.pos_f = pos_f;
        for p in 0..MAX_POS {
            let f = &b.pos_f[p % n_pos_dirs];
            for (i, &w) in f.iter().enumerate() {
                b.wpe.row_mut(p)[POS_START + i] = (POS_RHO * w) as f32;
            }
        }

        for doc in &ds.wiki_docs {
            for t in encode(&b.tokenizer, doc) {
                b.counts[t as usize] += 1;
            }
        }

        b.collect_items(ds)?;
        b.draw_geometry();
        Ok(b)
    }

    fn collect_items(&mut self, ds: &DataSet) -> io::Result<()> {
        fn make(
            tok: &Tokenizer,
            kind: Kind,
            fam: usize,
            prompt: String,
            target_word: String,
            entity: String,
            relation: String,
        ) -> TrackedItem {
            let tokens = encode(tok, &prompt);
            assert!(
                !tokens.is_empty() && tokens.len() <= MAX_POS,
                "prompt out of range: {prompt:?}"
            );
            let target_tok = match kind {
                Kind::Window => encode(tok, &format!(" {target_word}"))[0],
                _ => sp_token(tok, &target_word)
                    .unwrap_or_else(|| panic!("target not a single token: {target_word:?}")),
            };
            let last_tok = *tokens.last().unwrap();
            TrackedItem {
                kind,
                fam,
                prompt,
                target_word,
                entity,
                relation,
                tokens,
                target_tok,
                last_tok,
                h: Vec::new(),
                prob: 0.0,
            }
        }

        let tok = &self.tokenizer;
        let mut items = Vec::new();
        let mut counts = [0usize; 4]; // mem, kept-other, sim, frag
        let mut cue_vals: BTreeMap<String, String> = BTreeMap::new();
        for spec in &ds.idioms {
            match spec.route {
                Route::Kept { memorized: true } => {
                    items.push(make(
                        tok,
                        Kind::MemIdiom,
                        counts[0],
                        spec.prompt_text(),
                        spec.target.clone(),
                        String::new(),
                        String::new(),
                    ));
                    counts[0] += 1;
                }
                Route::Kept { memorized: false } => {
                    items.push(make(
                        tok,
                        Kind::KeptIdiom,
                        counts[1],
                        spec.prompt_text(),
                        spec.target.clone(),
                        String::new(),
                        String::new(),
                    ));
                    counts[1] += 1;
                }
                Route::DropSimilarity => {
                    items.push(make(
                        tok,
                        Kind::SimIdiom,
                        counts[2],
                        spec.prompt_text(),
                        spec.target.clone(),
                        String::new(),
                        String::new(),
                    ));
                    counts[2] += 1;
                }
                Route::DropPredictable => {
                    assert!(spec.prompt.len() >= 2, "bigram cue needs two prompt words");
                    let cue_word = spec.prompt.last().unwrap().clone();
                    let old = cue_vals.insert(cue_word.clone(), spec.target.clone());
                    assert!(old.is_none(), "duplicate bigram cue {cue_word:?}");
                    let frag = spec.prompt[spec.prompt.len() - 2..].join(" ");
                    items.push(make(
                        tok,
                        Kind::BigramFrag,
                        counts[3],
                        frag,
                        spec.target.clone(),
                        String::new(),
                        String::new(),
                    ));
                    counts[3] += 1;
                }
                Route::DropLength => {}
            }
        }

        let mut fact_counts = [0usize; 2];
        for f in &ds.facts {
            let (kind, fam) = if f.memorized {
                fact_counts[0] += 1;
                (Kind::MemFact, fact_counts[0] - 1)
            } else {
                fact_counts[1] += 1;
                (Kind::OtherFact, fact_counts[1] - 1)
            };
            items.push(make(
                tok,
                kind,
                fam,
                f.prompt.clone(),
                f.answer.clone(),
                f.entity.clone(),
                f.relation.to_string(),
            ));
        }

        let docs: Vec<Vec<String>> = ds
            .wiki_docs
            .iter()
            .map(|d| d.split_whitespace().map(str::to_string).collect())
            .collect();
        let lengths = kept_prompt_lengths(ds);
        let windows = sample_wiki_prompts(&docs, &lengths, N_WIKI_PROBES, WIKI_SAMPLE_SEED)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        for (i, w) in windows.iter().enumerate() {
            items.push(make(
                tok,
                Kind::Window,
                i,
                w.prompt_words.join(" "),
                w.target_word.clone(),
                String::new(),
                String::new(),
            ));
        }

        // Cue tokens are last-token triggers. Outside wiki windows and the
        // fragments themselves, no tracked prompt may end in one.
        let cue_toks: BTreeMap<u32, String> = cue_vals
            .iter()
            .map(|(cue, _)| {
                let t = sp_token(tok, cue)
                    .unwrap_or_else(|| panic!("cue not a single token: {cue:?}"));
                (t, cue.clone())
            })
            .collect();
        assert_eq!(cue_toks.len(), cue_vals.len(), "bigram cue tokens collide");
        for it in &items {
            if !matches!(it.kind, Kind::Window | Kind::BigramFrag) {
                assert!(
                    !cue_toks.contains_key(&it.last_tok),
                    "tracked prompt ends in a bigram cue: {:?}",
                    it.prompt
                );
            }
        }
        // A planted bigram firing inside another idiom's fragment sweep must
        // not complete that idiom's own target, or the drop votes would flip.
        for it in &items {
            if matches!(it.kind, Kind::MemIdiom | Kind::KeptIdiom | Kind::SimIdiom) {
                for w in it.prompt.split_whitespace() {
                    if let Some(val) = cue_vals.get(w) {
                        assert_ne!(
                            val, &it.target_word,
                            "bigram {w:?} would complete idiom {:?}",
                            it.prompt
                        );
                    }
                }
            }
        }

        for (cue, val) in &cue_vals {
            let cue_tok = sp_token(tok, cue).unwrap();
            let val_tok = sp_token(tok, val)
                .unwrap_or_else(|| panic!("bigram value not a single token: {val:?}"));
            self.bigrams.push((cue_tok, val.clone(), val_tok));
        }
        self.bigrams.sort_by_key(|&(c, _, _)| c);

        self.stats.n_mem_idioms = counts[0];
        self.stats.n_kept_other = counts[1];
        self.stats.n_sim = counts[2];
        self.stats.n_pred_bigrams = counts[3];
        self.stats.n_mem_facts = fact_counts[0];
        self.stats.n_other_facts = fact_counts[1];
        assert!(
            2 * counts[0] + counts[3] <= FF,
            "layer-1 budget: {} patterns + {} bigrams",
            counts[0],
            counts[3]
        );
        assert!(2 * fact_counts[0] <= FF, "layer-2 budget");

        self.items = items;
        Ok(())
    }

    fn draw_geometry(&mut self) {
        let mut rng = drng(3);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < BAG_END - BAG_START {
            let mut cand: Vec<f64> = (0..ID_END).map(|_| gauss(&mut rng)).collect();
            for b in &basis {
                let d: f64 = cand.iter().zip(b).map(|(c, b)| c * b).sum();
                for (c, b) in cand.iter_mut().zip(b) {
                    *c -= d * b;
                }
            }
            if normalize(&mut cand) > 1e-6 {
                basis.push(cand);
            }
        }
        self.bag_basis = basis;

        let mut rng = drng(4);
        for _ in 0..N_RELAY {
            self.relay_keys
                .push(unit_gauss(&mut rng, BAG_END - BAG_START));
            self.relay_vals
                .push(unit_gauss(&mut rng, RELAY_END - RELAY_START));
        }

        let mut rng = drng(5);
        let n_conf = self.stats.n_mem_idioms + self.stats.n_mem_facts;
        assert!(n_conf <= CONF_END - CONF_START + 602, "conf block too small");
        let dim = CONF_END - CONF_START;
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        let mut draws = 0usize;
        while dirs.len() < n_conf {
            draws += 1;
            assert!(
                draws < 400_000,
                "could not pack {n_conf} confidence directions at cos {CONF_MAX_COS}"
            );
            let cand = unit_gauss(&mut rng, dim);
            let ok = dirs.iter().all(|d| {
                d.iter().zip(&cand).map(|(a, b)| a * b).sum::<f64>().abs() <= CONF_MAX_COS
            });
            if ok {
                dirs.push(cand);
            }
        }
        self.conf_dirs = dirs;
    }

    fn build_wte(&mut self, priors: &[f64], alpha0: f64) {
        for v in 0..self.v {
            let row = self.wte.row_mut(v);
            row.fill(0.0);
            let a = alpha0 * (1.0 + 0.05 * self.alpha_jitter[v]);
            for i in 0..ID_END {
                row[i] = (a * self.ehat[v][i]) as f32;
            }
            row[FREQ] = priors[v] as f32;
        }
    }

    fn embed_rows(&self, tokens: &[u32]) -> Vec<Vec<f32>> {
        tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| {
                let mut h = self.wte.row(t as usize).to_vec();
                tensor::add_assign(&mut h, self.wpe.row(p));
                h
            })
            .collect()
    }

    /// Builds probe layer 0's attention weights. Heads 0..3 attend uniformly
    /// (zero scores) and carry the identity block to the bag projection;
    /// heads 3..6 attend to position 4 and carry the identity block to the
    /// entity projection rows. Scales come from the calibration passes.
    fn build_attn(&mut self, bag_scale: f64, ent_scale: f64) {
        let mut w = Matrix::zeros(D, 3 * D);
        for c in 0..ID_END {
            w.row_mut(c)[2 * D + c] = 1.0;
        }
        for i in 0..HEAD_DIM {
            w.row_mut(i)[2 * D + 3 * HEAD_DIM + i] = 1.0;
            w.row_mut(HEAD_DIM + i)[2 * D + 4 * HEAD_DIM + i] = 1.0;
        }
        for i in 0..ID_END - 2 * HEAD_DIM {
            w.row_mut(2 * HEAD_DIM + i)[2 * D + 5 * HEAD_DIM + i] = 1.0;
        }
        for (i, &f) in self.pos_f[4].iter().enumerate() {
            for head in 3..6 {
                w.row_mut(POS_START + i)[D + head * HEAD_DIM] = f as f32;
            }
        }
        let mut b = vec![0.0f32; 3 * D];
        for head in 3..6 {
            b[head * HEAD_DIM] = POS_Q0;
        }
        let mut proj = Matrix::zeros(D, D);
        for (k, col) in self.bag_basis.iter().enumerate() {
            for (i, &g) in col.iter().enumerate() {
                proj.row_mut(i)[BAG_START + k] = (bag_scale * g) as f32;
                proj.row_mut(3 * HEAD_DIM + i)[BAG_START + k] = (ent_scale * g) as f32;
            }
        }
        self.attn_w = w;
        self.attn_b = b;
        self.proj_w = proj;
    }

    /// Per-position attention weights of the entity pickup heads for one
    /// prompt, reproducing the engine's score and softmax arithmetic bit for
    /// bit. All three pickup heads share one key column and bias, so one
    /// weight vector serves them all.
    fn pos4_weights(&self, xs: &[Vec<f32>]) -> Vec<f32> {
        let scale = 1.0 / (HEAD_DIM as f64).sqrt();
        let u: Vec<f32> = self.pos_f[4].iter().map(|&f| f as f32).collect();
        let mut scores: Vec<f32> = xs
            .iter()
            .map(|x| {
                let mut acc = 0.0f64;
                for (i, &uw) in u.iter().enumerate() {
                    let xi = x[POS_START + i];
                    if xi != 0.0 {
                        acc += (xi as f64) * (uw as f64);
                    }
                }
                let k = acc as f32;
                let dot = ((POS_Q0 as f64) * (k as f64)) as f32;
                ((dot as f64) * scale) as f32
            })
            .collect();
        let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        let mut buf: Vec<f64> = Vec::with_capacity(scores.len());
        for &s in scores.iter() {
            let e = ((s as f64) - max).exp();
            buf.push(e);
            sum += e;
        }
        for (o, e) in scores.iter_mut().zip(buf) {
            *o = (e / sum) as f32;
        }
        scores
    }

    /// Last position's state after the probe's layer 0 attention: the
    /// uniform heads average the identity blocks into the bag projection,
    /// the entity pickup heads route position 4's identity block into the
    /// entity projection. Matches the engine's attention bit for bit.
    fn attn0_last(&self, tokens: &[u32]) -> Vec<f32> {
        let hs = self.embed_rows(tokens);
        let n = hs.len();
        let xs: Vec<Vec<f32>> = hs
            .iter()
            .map(|h| ln_unit(h, &self.ones, &self.zeros))
            .collect();
        let a = (1.0f64 / n as f64) as f32;
        let a4 = self.pos4_weights(&xs);
        let mut ctx = vec![0.0f32; D];
        for c in 0..ID_END {
            let mut acc = 0.0f64;
            let mut acc4 = 0.0f64;
            for (x, &w4) in xs.iter().zip(&a4) {
                acc += (a as f64) * (x[c] as f64);
                acc4 += (w4 as f64) * (x[c] as f64);
            }
            ctx[c] = acc as f32;
            ctx[3 * HEAD_DIM + c] = acc4 as f32;
        }
        let mut proj = vec![0.0f32; D];
        for k in 0..BAG_END - BAG_START {
            let mut acc = 0.0f64;
            for i in 0..ID_END {
                if ctx[i] != 0.0 {
                    acc += (ctx[i] as f64) * (self.proj_w.row(i)[BAG_START + k] as f64);
                }
            }
            for i in 0..ID_END {
                let c = ctx[3 * HEAD_DIM + i];
                if c != 0.0 {
                    acc += (c as f64) * (self.proj_w.row(3 * HEAD_DIM + i)[BAG_START + k] as f64);
                }
            }
            proj[BAG_START + k] = acc as f32;
        }
        let mut h = hs[n - 1].clone();
        tensor::add_assign(&mut h, &proj);
        h
    }

    /// Full layer 0: attention bag write plus the relay FFN.
    fn layer0_last(&self, tokens: &[u32]) -> Vec<f32> {
        let mut h = self.attn0_last(tokens);
        ffn_apply(&mut h, &self.plans[0], &self.ones, &self.zeros);
        h
    }

    fn scorer_embed_last(&self, tokens: &[u32]) -> Vec<f32> {
        let n = tokens.len();
        let mut h = self.wte.row(tokens[n - 1] as usize).to_vec();
        tensor::add_assign(&mut h, self.wpe.row(n - 1));
        h
    }

    /// Plants layer 0 for the current embedding table: the bag projection
    /// scaled so memorized idiom bags average a fixed norm, then the relay
    /// FFN scaled the same way.
    fn plant_layer0(&mut self) {
        let mem_tokens: Vec<&Vec<u32>> = self
            .items
            .iter()
            .filter(|i| i.kind == Kind::MemIdiom)
            .map(|i| &i.tokens)
            .collect();

        let mean_raw: f64 = mem_tokens
            .par_iter()
            .map(|tokens| {
                let hs = self.embed_rows(tokens);
                let n = hs.len() as f64;
                let mut bag = vec![0.0f64; ID_END];
                for h in &hs {
                    let x = ln_unit(h, &self.ones, &self.zeros);
                    for (c, b) in bag.iter_mut().enumerate() {
                        *b += x[c] as f64 / n;
                    }
                }
                let mut ss = 0.0f64;
                for col in &self.bag_basis {
                    let d: f64 = col.iter().zip(&bag).map(|(a, b)| a * b).sum();
                    ss += d * d;
                }
                ss.sqrt()
            })
            .sum::<f64>()
            / mem_tokens.len() as f64;
        assert!(mean_raw > 1e-6, "degenerate bag geometry");
        let bag_scale = BAG_NORM_TARGET / mean_raw;

        let fact_tokens: Vec<&Vec<u32>> = self
            .items
            .iter()
            .filter(|i| i.kind == Kind::MemFact)
            .map(|i| &i.tokens)
            .collect();
        let mean_ent: f64 = fact_tokens
            .par_iter()
            .map(|tokens| {
                let x = ln_unit(&self.embed_rows(tokens)[4], &self.ones, &self.zeros);
                let mut ss = 0.0f64;
                for col in &self.bag_basis {
                    let d: f64 = col
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * x[i] as f64)
                        .sum();
                    ss += d * d;
                }
                ss.sqrt()
            })
            .sum::<f64>()
            / fact_tokens.len() as f64;
        assert!(mean_ent > 1e-6, "degenerate entity geometry");
        let ent_scale = ENT_NORM_TARGET / mean_ent;

        self.build_attn(bag_scale, ent_scale);

        let keys: Vec<Vec<(usize, f32)>> = self
            .relay_keys
            .iter()
            .map(|k| {
                k.iter()
                    .enumerate()
                    .map(|(c, &w)| (BAG_START + c, w as f32))
                    .collect()
            })
            .collect();
        // Pass 1: mean relay write norm at unit value scale.
        let mean_relay: f64 = mem_tokens
            .par_iter()
            .map(|tokens| {
                let h = self.attn0_last(tokens);
                let x = ln_unit(&h, &self.ones, &self.zeros);
                let mut acc = vec![0.0f64; RELAY_END - RELAY_START];
                for (j, key) in keys.iter().enumerate() {
                    let m = preact(&x, key).max(0.0);
                    if m != 0.0 {
                        for (c, v) in self.relay_vals[j].iter().enumerate() {
                            acc[c] += (m as f64) * v;
                        }
                    }
                }
                acc.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / mem_tokens.len() as f64;
        assert!(mean_relay > 1e-6, "relay layer never fires");
        let relay_scale = RELAY_NORM_TARGET / mean_relay;

        let mut plan = LayerPlan::default();
        for (j, key) in keys.into_iter().enumerate() {
            let value: Vec<(usize, f32)> = self.relay_vals[j]
                .iter()
                .enumerate()
                .map(|(c, v)| (RELAY_START + c, (relay_scale * v) as f32))
                .collect();
            plan.neurons.push(Neuron {
                slot: j,
                key,
                bias: 0.0,
                value,
            });
        }
        self.plans[0] = plan;
    }

    /// Joint calibration of the frequency prior and identity scale. Accepts
    /// when the layer-1 readout of memorized idioms shows a weak negative
    /// rank/frequency correlation, deep target ranks, and a balanced echo
    /// share on wiki windows.
    fn dial(&mut self) {
        let mem_info: Vec<(Vec<u32>, u32)> = self
            .items
            .iter()
            .filter(|i| i.kind == Kind::MemIdiom)
            .map(|i| (i.tokens.clone(), i.target_tok))
            .collect();
        let win_info: Vec<(Vec<u32>, u32)> = self
            .items
            .iter()
            .filter(|i| i.kind == Kind::Window)
            .map(|i| (i.tokens.clone(), i.last_tok))
            .collect();
        let mem_counts: Vec<f64> = mem_info
            .iter()
            .map(|&(_, t)| self.counts[t as usize] as f64)
            .collect();
        let win_last: Vec<u32> = win_info.iter().map(|&(_, t)| t).collect();

        const R_LO: f64 = -0.30;
        const R_HI: f64 = -0.10;
        const RANK_FLOOR: f64 = 1450.0;
        const GAINS: [f64; 4] = [0.30, 0.22, 0.40, 0.15];

        struct Iterate {
            gain: f64,
            noise: f64,
            alpha0: f64,
            r: f64,
            rank: f64,
            echo: f64,
            priors: Vec<f64>,
        }
        let mut history: Vec<Iterate> = Vec::new();
        let mut accepted: Option<Iterate> = None;
        let mut echo_adj = 1.0f64;

        'outer: for (gi, &gain) in GAINS.iter().enumerate() {
            let mut noise = 0.45f64;
            for it in 0..14u64 {
                let mut zrng = drng(0x4000 + (gi as u64) * 64 + it);
                let z: Vec<f64> = (0..self.v).map(|_| gauss(&mut zrng)).collect();
                let priors: Vec<f64> = (0..self.v)
                    .map(|v| {
                        let c = self.counts[v] as f64;
                        (PRIOR_BASE + gain * (1.0 - (-c / PRIOR_KNEE).exp()) + noise * z[v])
                            .max(PRIOR_FLOOR)
                    })
                    .collect();
                let p_max = priors.iter().cloned().fold(f64::MIN, f64::max);
                let p_med = median(win_last.iter().map(|&t| priors[t as usize]).collect());
                let alpha0 = echo_adj * (p_med * (p_max - p_med)).max(0.01).sqrt();

                self.build_wte(&priors, alpha0);
                self.plant_layer0();
                let lens = Lens::new(&self.wte);

                let ranks: Vec<f64> = mem_info
                    .par_iter()
                    .map(|(toks, t)| {
                        let h = self.layer0_last(toks);
                        let st = lens.state(&h);
                        Lens::rank_of(&lens.logits_at(&st, None, 0.0), *t) as f64
                    })
                    .collect();
                let echo_hits: usize = win_info
                    .par_iter()
                    .map(|(toks, last)| {
                        let h = self.layer0_last(toks);
                        let st = lens.state(&h);
                        (Lens::argmax(&lens.logits_at(&st, None, 0.0)) == *last) as usize
                    })
                    .sum();

                let rank = ranks.iter().sum::<f64>() / ranks.len() as f64;
                let r = pearson(&ranks, &mem_counts);
                let echo = echo_hits as f64 / win_info.len() as f64;
                eprintln!(
                    "dial gi={gi} it={it} gain={gain:.2} noise={noise:.3} alpha0={alpha0:.3} echo={echo:.3} rank={rank:.0} r={r:.3}"
                );
                history.push(Iterate {
                    gain,
                    noise,
                    alpha0,
                    r,
                    rank,
                    echo,
                    priors,
                });

                if !(0.2..=0.8).contains(&echo) {
                    echo_adj *= if echo > 0.8 { 0.90 } else { 1.10 };
                    continue;
                }
                if rank < RANK_FLOOR {
                    noise *= 1.30;
                    continue;
                }
                if r < R_LO {
                    noise *= 1.22;
                    continue;
                }
                if r > R_HI {
                    noise *= 0.84;
                    continue;
                }
                accepted = history.pop();
                break 'outer;
            }
        }

        let chosen = accepted
            .or_else(|| {
                let mut best: Option<Iterate> = None;
                for it in history.drain(..) {
                    let ok = it.r > -0.34
                        && it.r < -0.06
                        && it.rank >= 1350.0
                        && (0.22..=0.78).contains(&it.echo);
                    if ok && best.as_ref().map_or(true, |b| it.rank > b.rank) {
                        best = Some(it);
                    }
                }
                best
            })
            .unwrap_or_else(|| {
                panic!("frequency dial found no acceptable operating point")
            });

        self.build_wte(&chosen.priors, chosen.alpha0);
        self.plant_layer0();
        self.stats.prior_gain = chosen.gain;
        self.stats.prior_noise = chosen.noise;
        self.stats.alpha0 = chosen.alpha0;
        self.stats.layer1_rank_mean = chosen.rank;
        self.stats.layer1_freq_r = chosen.r;
        self.stats.echo_share = chosen.echo;
    }

    fn rebuild_states(&mut self) {
        let states: Vec<Vec<f32>> = self
            .items
            .par_iter()
            .map(|it| self.layer0_last(&it.tokens))
            .collect();
        for (it, h) in self.items.iter_mut().zip(states) {
            it.h = h;
        }
    }

    fn advance(&mut self, layer: usize) {
        let plan = std::mem::take(&mut self.plans[layer]);
        let ones = self.ones.clone();
        let zeros = self.zeros.clone();
        self.items.par_iter_mut().for_each(|it| {
            ffn_apply(&mut it.h, &plan, &ones, &zeros);
        });
        self.plans[layer] = plan;
    }

    fn normed_states(&self) -> Vec<Vec<f32>> {
        self.items
            .par_iter()
            .map(|it| ln_unit(&it.h, &self.ones, &self.zeros))
            .collect()
    }

    fn conf_key(&self, conf_id: usize) -> Vec<(usize, f32)> {
        self.conf_dirs[conf_id]
            .iter()
            .enumerate()
            .map(|(k, &w)| (CONF_START + k, w as f32))
            .collect()
    }

    fn conf_value_dir(&self, conf_id: usize) -> Vec<(usize, f64)> {
        self.conf_dirs[conf_id]
            .iter()
            .enumerate()
            .map(|(k, &w)| (CONF_START + k, w))
            .collect()
    }

    fn id_value_dir(&self, token: u32) -> Vec<(usize, f64)> {
        self.ehat[token as usize]
            .iter()
            .enumerate()
            .map(|(i, &w)| (i, w))
            .collect()
    }

    fn family(&self, kind: Kind) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].kind == kind)
            .collect()
    }

    /// Layer 1: one saturating pair per memorized idiom, keyed on the full
    /// relay signature of its prompt, writing onto its confidence direction.
    /// Plus one linear bigram neuron per dropped-as-predictable idiom, keyed
    /// on the cue token's identity in the last position.
    fn plant_idiom_patterns(&mut self) {
        let lns = self.normed_states();
        let mem_ids = self.family(Kind::MemIdiom);
        let nr = RELAY_END - RELAY_START;

        struct Planted {
            key: Vec<(usize, f32)>,
            t1: f64,
            t2: f64,
            conf: usize,
        }
        let specs: Vec<Planted> = mem_ids
            .par_iter()
            .map(|&qi| {
                let xq = &lns[qi];
                let mut kdir: Vec<f64> = (0..nr).map(|c| xq[RELAY_START + c] as f64).collect();
                let n = normalize(&mut kdir);
                assert!(n > 1e-3, "empty relay signature: {:?}", self.items[qi].prompt);
                let key: Vec<(usize, f32)> = kdir
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| (RELAY_START + k, w as f32))
                    .collect();
                let pres: Vec<f64> = lns.iter().map(|x| preact(x, &key) as f64).collect();
                let c = pres[qi];
                let mc = competitor_max(&pres, qi, c);
                let t1 = (0.75 * c).max(mc + 0.05 * c);
                let t2 = 0.82 * c;
                assert!(
                    t1 <= t2 - 0.04 * c,
                    "idiom pattern crowding: {:?} c={c:.3} mc={mc:.3}",
                    self.items[qi].prompt
                );
                Planted {
                    key,
                    t1,
                    t2,
                    conf: self.items[qi].fam,
                }
            })
            .collect();

        let mut plan = LayerPlan::default();
        for s in &specs {
            push_pair(
                &mut plan,
                &s.key,
                0.0,
                s.t1,
                s.t2,
                &self.conf_value_dir(s.conf),
                CONF_WRITE,
            );
        }

        let lens = Lens::new(&self.wte);
        let frag_by_cue: BTreeMap<u32, usize> = self
            .family(Kind::BigramFrag)
            .into_iter()
            .map(|i| (self.items[i].last_tok, i))
            .collect();
        struct Bigram {
            key: Vec<(usize, f32)>,
            t1: f64,
            c: f64,
            dir: Vec<(usize, f64)>,
            tau: f64,
        }
        let bspecs: Vec<Bigram> = self
            .bigrams
            .par_iter()
            .map(|&(cue_tok, _, val_tok)| {
                let qi = *frag_by_cue
                    .get(&cue_tok)
                    .expect("bigram cue without a tracked fragment");
                let key: Vec<(usize, f32)> = self.ehat[cue_tok as usize]
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| (i, w as f32))
                    .collect();
                let pres: Vec<f64> = lns.iter().map(|x| preact(x, &key) as f64).collect();
                let c = pres[qi];
                assert!(c > 1e-3, "cue direction missing from fragment state");
                let mc = competitor_max(&pres, qi, c);
                let t1 = (0.70 * c).max(mc + 0.08 * c);
                assert!(
                    t1 <= 0.85 * c,
                    "bigram cue not separable: tok {cue_tok} c={c:.3} mc={mc:.3}"
                );
                let dir = self.id_value_dir(val_tok);
                let st = lens.state(&self.items[qi].h);
                let dr = lens.dir(&self.items[qi].h, &dir);
                let tau = lens.solve_margin(&st, &dr, val_tok, BIGRAM_MARGIN);
                Bigram { key, t1, c, dir, tau }
            })
            .collect();
        for s in &bspecs {
            if s.tau <= 0.0 {
                continue;
            }
            // Linear is enough here: only cue-ended states clear t1, and
            // overshoot past the measured statistic only widens the margin.
            let scale = s.tau / (s.c - s.t1);
            let value: Vec<(usize, f32)> =
                s.dir.iter().map(|&(c, w)| (c, (scale * w) as f32)).collect();
            let slot = plan.next_slot();
            plan.neurons.push(Neuron {
                slot,
                key: s.key.clone(),
                bias: -s.t1 as f32,
                value,
            });
        }
        assert!(plan.neurons.len() <= FF, "layer-1 budget exceeded");
        self.plans[1] = plan;
        self.advance(1);
    }

    /// Layer 2: one saturating pair per memorized fact, keyed on the
    /// entity's image in the bag block. Each entity has exactly one
    /// memorized relation, so the entity word identifies the fact. The
    /// sibling control prompt shares the entity and legitimately co-fires;
    /// it then predicts the memorized answer, which keeps it incorrect on
    /// its own answer.
    fn plant_fact_patterns(&mut self) {
        let lns = self.normed_states();
        let mem_ids = self.family(Kind::MemFact);
        let n_mem_idioms = self.stats.n_mem_idioms;

        struct Planted {
            key: Vec<(usize, f32)>,
            t1: f64,
            t2: f64,
            conf: usize,
        }
        let specs: Vec<Planted> = mem_ids
            .par_iter()
            .map(|&qi| {
                let it = &self.items[qi];
                let pieces = encode(&self.tokenizer, &format!(" {}", it.entity));
                assert!(!pieces.is_empty(), "entity did not tokenize: {:?}", it.entity);
                let mut id_dir = vec![0.0f64; ID_END];
                for &p in &pieces {
                    for (i, &w) in self.ehat[p as usize].iter().enumerate() {
                        id_dir[i] += w;
                    }
                }
                let mut kdir: Vec<f64> = self
                    .bag_basis
                    .iter()
                    .map(|col| col.iter().zip(&id_dir).map(|(a, b)| a * b).sum())
                    .collect();
                let n = normalize(&mut kdir);
                assert!(n > 1e-3, "entity direction outside bag span: {:?}", it.entity);
                let key: Vec<(usize, f32)> = kdir
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| (BAG_START + k, w as f32))
                    .collect();
                let pres: Vec<f64> = lns.iter().map(|x| preact(x, &key) as f64).collect();
                let c = pres[qi];
                if c <= 1e-3 {
                    let x = &lns[qi];
                    let bagn: f64 = (BAG_START..BAG_END)
                        .map(|i| (x[i] as f64).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let pmax = pres.iter().cloned().fold(f64::MIN, f64::max);
                    panic!(
                        "entity key misses its own prompt: {:?} c={c:.4} pieces={} kdir_n={n:.3} bag_norm={bagn:.3} pres_max={pmax:.3}",
                        it.prompt,
                        pieces.len(),
                    );
                }
                let mc = competitor_max(&pres, qi, c);
                let t1 = (0.75 * c).max(mc + 0.05 * c);
                let t2 = 0.93 * c;
                assert!(
                    t1 <= t2 - 0.03 * c,
                    "fact pattern crowding: {:?} c={c:.3} mc={mc:.3}",
                    it.prompt
                );
                Planted {
                    key,
                    t1,
                    t2,
                    conf: n_mem_idioms + it.fam,
                }
            })
            .collect();

        let mut plan = LayerPlan::default();
        for s in &specs {
            push_pair(
                &mut plan,
                &s.key,
                0.0,
                s.t1,
                s.t2,
                &self.conf_value_dir(s.conf),
                CONF_WRITE,
            );
        }
        assert!(plan.neurons.len() <= FF, "layer-2 budget exceeded");
        self.plans[2] = plan;
        self.advance(2);
    }

    /// Measures the confidence statistic and thresholds for one item at the
    /// current depth.
    fn conf_gate(
        &self,
        lns: &[Vec<f32>],
        qi: usize,
        conf_id: usize,
        layer: usize,
    ) -> (Vec<(usize, f32)>, f64, f64) {
        let key = self.conf_key(conf_id);
        let pres: Vec<f64> = lns.iter().map(|x| preact(x, &key) as f64).collect();
        let m = pres[qi];
        assert!(
            m > 1e-3,
            "confidence signal missing at layer {layer}: {:?}",
            self.items[qi].prompt
        );
        let mc = competitor_max(&pres, qi, m);
        let t1 = (0.45 * m).max(mc + 0.10 * m);
        assert!(
            t1 <= 0.70 * m,
            "stage crowding at layer {layer}: {:?} m={m:.3} mc={mc:.3}",
            self.items[qi].prompt
        );
        (key, t1, 0.85 * m)
    }

    /// Plants one staged write layer: per item, a pair keyed on its own
    /// confidence direction whose write lifts the target's readout
    /// probability to the given goal. Advances all states and records the
    /// realized probabilities.
    fn plant_up_layer(&mut self, layer: usize, kind: Kind, conf_base: usize, goals: &[f64]) {
        let ids = self.family(kind);
        assert_eq!(ids.len(), goals.len());
        let lns = self.normed_states();
        let lens = Lens::new(&self.wte);

        struct Planted {
            key: Vec<(usize, f32)>,
            t1: f64,
            t2: f64,
            dir: Vec<(usize, f64)>,
            tau: f64,
        }
        let specs: Vec<Planted> = ids
            .par_iter()
            .zip(goals)
            .map(|(&qi, &goal)| {
                let it = &self.items[qi];
                let (key, t1, t2) = self.conf_gate(&lns, qi, conf_base + it.fam, layer);
                let dir = self.id_value_dir(it.target_tok);
                let st = lens.state(&it.h);
                let dr = lens.dir(&it.h, &dir);
                let tau = lens.solve_prob_up(&st, &dr, it.target_tok, goal);
                Planted { key, t1, t2, dir, tau }
            })
            .collect();

        let mut plan = LayerPlan::default();
        for s in &specs {
            if s.tau > 0.0 {
                push_pair(&mut plan, &s.key, 0.0, s.t1, s.t2, &s.dir, s.tau);
            }
        }
        assert!(
            plan.neurons.len() <= FF,
            "stage budget exceeded at layer {layer}"
        );
        self.plans[layer] = plan;
        self.advance(layer);
        self.settle_goals(layer, &ids, goals);
    }

    /// Fact hedge layer: pairs keyed on fact confidence whose write spreads
    /// mass over same-relation distractor answers until the memorized
    /// answer's probability falls to the goal, while it stays the argmax.
    fn plant_hedge_layer(&mut self, layer: usize, conf_base: usize, goals: &[f64]) {
        let ids = self.family(Kind::MemFact);
        assert_eq!(ids.len(), goals.len());
        let lns = self.normed_states();
        let lens = Lens::new(&self.wte);

        // Distractors: answers of other memorized facts with the same
        // relation, distinct from each other and from the item's own answer.
        let by_relation: BTreeMap<&str, Vec<u32>> = {
            let mut m: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
            for &qi in &ids {
                let it = &self.items[qi];
                m.entry(it.relation.as_str()).or_default().push(it.target_tok);
            }
            m
        };

        struct Planted {
            key: Vec<(usize, f32)>,
            t1: f64,
            t2: f64,
            dir: Vec<(usize, f64)>,
            tau: f64,
        }
        let specs: Vec<Planted> = ids
            .par_iter()
            .enumerate()
            .zip(goals)
            .map(|((pos, &qi), &goal)| {
                let it = &self.items[qi];
                let (key, t1, t2) = self.conf_gate(&lns, qi, conf_base + it.fam, layer);
                let pool = &by_relation[it.relation.as_str()];
                let mut seen = vec![it.target_tok];
                let mut dir_map: BTreeMap<usize, f64> = BTreeMap::new();
                let mut k = 0usize;
                while seen.len() - 1 < N_HEDGE_DISTRACTORS && k < pool.len() {
                    let cand = pool[(pos + 1 + k) % pool.len()];
                    k += 1;
                    if seen.contains(&cand) {
                        continue;
                    }
                    seen.push(cand);
                    for (i, &w) in self.ehat[cand as usize].iter().enumerate() {
                        *dir_map.entry(i).or_insert(0.0) += w;
                    }
                }
                assert!(seen.len() - 1 >= 3, "not enough hedge distractors");
                let dir: Vec<(usize, f64)> = dir_map.into_iter().collect();
                let st = lens.state(&it.h);
                let dr = lens.dir(&it.h, &dir);
                let tau = lens.solve_prob_down(&st, &dr, it.target_tok, goal);
                let logits = lens.logits_at(&st, Some(&dr), tau);
                assert_eq!(
                    Lens::argmax(&logits),
                    it.target_tok,
                    "hedge toppled the answer: {:?}",
                    it.prompt
                );
                Planted { key, t1, t2, dir, tau }
            })
            .collect();

        let mut plan = LayerPlan::default();
        for s in &specs {
            if s.tau > 0.0 {
                push_pair(&mut plan, &s.key, 0.0, s.t1, s.t2, &s.dir, s.tau);
            }
        }
        assert!(plan.neurons.len() <= FF, "hedge budget exceeded");
        self.plans[layer] = plan;
        self.advance(layer);
        self.settle_goals(layer, &ids, goals);
    }

    /// After advancing a planted layer, checks every goal was realized and
    /// records the achieved probabilities on the items.
    fn settle_goals(&mut self, layer: usize, ids: &[usize], goals: &[f64]) {
        let lens = Lens::new(&self.wte);
        let realized: Vec<f64> = ids
            .par_iter()
            .map(|&qi| {
                let st = lens.state(&self.items[qi].h);
                Lens::prob_of(&lens.logits_at(&st, None, 0.0), self.items[qi].target_tok)
            })
            .collect();
        for ((&qi, &goal), &p) in ids.iter().zip(goals).zip(&realized) {
            assert!(
                (p - goal).abs() <= 0.02,
                "stage write missed its goal at layer {layer}: {:?} goal {goal:.4} got {p:.4}",
                self.items[qi].prompt
            );
            self.items[qi].prob = p;
        }
    }

    fn stage_goals(&self, kind: Kind, layer: usize, sched: f64) -> Vec<f64> {
        let ids = self.family(kind);
        let mut jrng = drng(0x700 + layer as u64);
        ids.iter()
            .map(|&qi| {
                let u: f64 = jrng.gen_range(0.0..1.0);
                let jit = (0.5 * (2.0 * u - 1.0)).exp();
                (self.items[qi].prob * 1.25).max(sched * jit)
            })
            .collect()
    }

    fn plant_all_layers(&mut self) {
        self.plant_idiom_patterns();
        self.plant_fact_patterns();

        let idiom_sched: BTreeMap<usize, f64> = IDIOM_STAGES.into_iter().collect();
        let fact_sched: BTreeMap<usize, f64> = FACT_STAGES.into_iter().collect();
        let conf_fact = self.stats.n_mem_idioms;

        for layer in 3..PROBE_LAYERS {
            if let Some(&sched) = idiom_sched.get(&layer) {
                let goals = self.stage_goals(Kind::MemIdiom, layer, sched);
                self.plant_up_layer(layer, Kind::MemIdiom, 0, &goals);
            } else if let Some(&sched) = fact_sched.get(&layer) {
                let goals = self.stage_goals(Kind::MemFact, layer, sched);
                self.plant_up_layer(layer, Kind::MemFact, conf_fact, &goals);
            } else if layer == FACT_PEAK_LAYER {
                let ids = self.family(Kind::MemFact);
                let mut grng = drng(0xA00);
                let goals: Vec<f64> = ids
                    .iter()
                    .map(|&qi| {
                        let u: f64 = grng.gen_range(0.0..1.0);
                        (0.42 + 0.16 * u).max(self.items[qi].prob * 1.25)
                    })
                    .collect();
                self.plant_up_layer(layer, Kind::MemFact, conf_fact, &goals);
            } else if layer == FACT_HEDGE_LAYER {
                let ids = self.family(Kind::MemFact);
                let mut grng = drng(0xB00);
                let goals: Vec<f64> = ids
                    .iter()
                    .map(|&qi| {
                        let u: f64 = grng.gen_range(0.0..1.0);
                        let peak = self.items[qi].prob;
                        (0.14 + 0.10 * u).min(peak - 0.18).clamp(0.10, 0.30)
                    })
                    .collect();
                self.plant_hedge_layer(layer, conf_fact, &goals);
            } else if layer == IDIOM_FINAL_LAYER {
                let ids = self.family(Kind::MemIdiom);
                let mut grng = drng(0x900);
                let goals: Vec<f64> = ids
                    .iter()
                    .map(|&qi| {
                        let u: f64 = grng.gen_range(0.0..1.0);
                        (0.55 + 0.25 * u).max(self.items[qi].prob * 1.25).min(0.80)
                    })
                    .collect();
                self.plant_up_layer(layer, Kind::MemIdiom, 0, &goals);
            }
        }
    }

    /// Scorer layer 0: one linear bigram neuron per cue, keyed directly on
    /// the last token's identity (the scorer has no attention mixing at
    /// all, so the normalized embedding is the whole signal).
    fn plant_scorer(&mut self) {
        let scorer_states: Vec<Vec<f32>> = self
            .items
            .par_iter()
            .map(|it| self.scorer_embed_last(&it.tokens))
            .collect();
        let lns: Vec<Vec<f32>> = scorer_states
            .par_iter()
            .map(|h| ln_unit(h, &self.ones, &self.zeros))
            .collect();
        let lens = Lens::new(&self.wte);
        let frag_by_cue: BTreeMap<u32, usize> = self
            .family(Kind::BigramFrag)
            .into_iter()
            .map(|i| (self.items[i].last_tok, i))
            .collect();

        struct Planted {
            key: Vec<(usize, f32)>,
            t1: f64,
            c: f64,
            dir: Vec<(usize, f64)>,
            tau: f64,
        }
        let specs: Vec<Planted> = self
            .bigrams
            .par_iter()
            .map(|&(cue_tok, _, val_tok)| {
                let qi = *frag_by_cue.get(&cue_tok).unwrap();
                let key: Vec<(usize, f32)> = self.ehat[cue_tok as usize]
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| (i, w as f32))
                    .collect();
                let pres: Vec<f64> = lns.iter().map(|x| preact(x, &key) as f64).collect();
                let c = pres[qi];
                assert!(c > 1e-3, "cue missing from scorer state");
                let mc = competitor_max(&pres, qi, c);
                let t1 = (0.70 * c).max(mc + 0.08 * c);
                assert!(
                    t1 <= 0.85 * c,
                    "scorer bigram not separable: tok {cue_tok} c={c:.3} mc={mc:.3}"
                );
                let dir = self.id_value_dir(val_tok);
                let st = lens.state(&scorer_states[qi]);
                let dr = lens.dir(&scorer_states[qi], &dir);
                let tau = lens.solve_margin(&st, &dr, val_tok, BIGRAM_MARGIN);
                Planted { key, t1, c, dir, tau }
            })
            .collect();

        let mut plan = LayerPlan::default();
        for s in &specs {
            if s.tau <= 0.0 {
                continue;
            }
            let scale = s.tau / (s.c - s.t1);
            let value: Vec<(usize, f32)> =
                s.dir.iter().map(|&(c, w)| (c, (scale * w) as f32)).collect();
            let slot = plan.next_slot();
            plan.neurons.push(Neuron {
                slot,
                key: s.key.clone(),
                bias: -s.t1 as f32,
                value,
            });
        }
        assert!(plan.neurons.len() <= FF, "scorer budget exceeded");
        self.scorer_plan = plan;
    }

    fn write_model<'a>(
        &'a self,
        dir: &Path,
        n_layers: usize,
        bag_layer0: bool,
        plan_of: impl Fn(usize) -> Option<&'a LayerPlan>,
    ) -> io::Result<()> {
        let err = |e: EngineError| io::Error::new(io::ErrorKind::Other, e.to_string());
        let mut w = TensorFileWriter::new();
        w.add("wte.weight", vec![self.v, D], &self.wte.data);
        w.add("wpe.weight", vec![MAX_POS, D], &self.wpe.data);
        for l in 0..n_layers {
            let p = format!("h.{l}");
            w.add(&format!("{p}.ln_1.weight"), vec![D], &self.ones);
            w.add(&format!("{p}.ln_1.bias"), vec![D], &self.zeros);
            if l == 0 && bag_layer0 {
                w.add(&format!("{p}.attn.c_attn.weight"), vec![D, 3 * D], &self.attn_w.data);
                w.add(&format!("{p}.attn.c_attn.bias"), vec![3 * D], &self.attn_b);
                w.add(&format!("{p}.attn.c_proj.weight"), vec![D, D], &self.proj_w.data);
            } else {
                w.add(&format!("{p}.attn.c_attn.weight"), vec![D, 3 * D], &vec![0.0f32; D * 3 * D]);
                w.add(&format!("{p}.attn.c_attn.bias"), vec![3 * D], &vec![0.0f32; 3 * D]);
                w.add(&format!("{p}.attn.c_proj.weight"), vec![D, D], &vec![0.0f32; D * D]);
            }
            w.add(&format!("{p}.attn.c_proj.bias"), vec![D], &self.zeros);
            w.add(&format!("{p}.ln_2.weight"), vec![D], &self.ones);
            w.add(&format!("{p}.ln_2.bias"), vec![D], &self.zeros);

            let mut fc_w = vec![0.0f32; D * FF];
            let mut fc_b = vec![0.0f32; FF];
            let mut out_w = vec![0.0f32; FF * D];
            if let Some(plan) = plan_of(l) {
                for n in &plan.neurons {
                    assert!(n.slot < FF);
                    for &(i, v) in &n.key {
                        fc_w[i * FF + n.slot] = v;
                    }
                    fc_b[n.slot] = n.bias;
                    for &(c, v) in &n.value {
                        out_w[n.slot * D + c] = v;
                    }
                }
            }
            w.add(&format!("{p}.mlp.c_fc.weight"), vec![D, FF], &fc_w);
            w.add(&format!("{p}.mlp.c_fc.bias"), vec![FF], &fc_b);
            w.add(&format!("{p}.mlp.c_proj.weight"), vec![FF, D], &out_w);
            w.add(&format!("{p}.mlp.c_proj.bias"), vec![D], &self.zeros);
        }
        w.add("ln_f.weight", vec![D], &self.ones);
        w.add("ln_f.bias", vec![D], &self.zeros);
        w.write(&dir.join("model.safetensors")).map_err(err)?;

        let config = ModelConfig {
            n_layers,
            d_model: D,
            d_ff: FF,
            n_heads: HEADS,
            vocab_size: self.v,
            max_positions: MAX_POS,
            activation: Activation::Relu,
        };
        let text = serde_json::to_string_pretty(&config)?;
        fs::write(dir.join("config.json"), text)
    }

    fn write_pair(&self, probe_dir: &Path, scorer_dir: &Path) -> io::Result<()> {
        self.write_model(probe_dir, PROBE_LAYERS, true, |l| Some(&self.plans[l]))?;
        self.write_model(scorer_dir, SCORER_LAYERS, false, |l| {
            (l == 0).then_some(&self.scorer_plan)
        })
    }
}

/// Re-derives every behavioral guarantee from the written files through the
/// ordinary engine entry points, then returns summary statistics. Panics on
/// any violation.
fn verify(paths: &PairPaths, b: &mut Builder) -> io::Result<()> {
    let err = |e: EngineError| io::Error::new(io::ErrorKind::Other, e.to_string());
    let probe = Model::load(&paths.probe).map_err(err)?;
    let scorer = Model::load(&paths.scorer).map_err(err)?;

    let probe_records = |model: &Model, kind: Kind, label: SetLabel| -> Vec<LensRecord> {
        b.items
            .par_iter()
            .filter(|it| it.kind == kind)
            .map(|it| {
                probe_example(
                    model,
                    &format!("{:?}-{}", it.kind, it.fam),
                    label,
                    &it.prompt,
                    &it.target_word,
                    true,
                )
                .unwrap_or_else(|e| panic!("probe failed on {:?}: {e}", it.prompt))
            })
            .collect()
    };

    // Memorized idioms: correct, confident, monotone climb, no early peak.
    let mem = probe_records(&probe, Kind::MemIdiom, SetLabel::Mem);
    let mut final_sum = 0.0;
    for r in &mem {
        assert!(r.correct, "memorized idiom missed: {}", r.example_id);
        let last = *r.prob.last().unwrap();
        assert!(
            (0.50..=0.85).contains(&last),
            "memorized final prob {last:.3} out of band: {}",
            r.example_id
        );
        for w in r.prob.windows(2) {
            assert!(w[1] >= w[0] - 0.04, "probability dip: {}", r.example_id);
        }
        let peak = r.prob[..r.prob.len() - 1]
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        assert!(peak <= last + 0.01, "early idiom peak: {}", r.example_id);
        final_sum += last;
    }
    b.stats.mem_final_prob_mean = final_sum / mem.len() as f64;
    assert!(b.stats.mem_final_prob_mean > 0.55, "mem final mean too low");

    // Rank profile: mean rank below 10 by layer 18 while mean prob is
    // still small there.
    let n_layers = mem[0].rank.len();
    let mut rank10 = None;
    for l in 0..n_layers {
        let mean_rank =
            mem.iter().map(|r| r.rank[l] as f64).sum::<f64>() / mem.len() as f64;
        if mean_rank < 10.0 {
            rank10 = Some(l);
            break;
        }
    }
    let l10 = rank10.expect("memorized rank never fell below 10");
    let prob_at = mem.iter().map(|r| r.prob[l10]).sum::<f64>() / mem.len() as f64;
    assert!(l10 + 1 <= 18, "rank<10 too late: layer {}", l10 + 1);
    assert!(prob_at < 0.25, "prob already high at rank<10 layer: {prob_at:.3}");
    b.stats.mem_rank10_layer = l10 + 1;
    b.stats.mem_rank10_prob_mean = prob_at;

    // Kept non-memorized idioms stay incorrect in the probe.
    let kept = probe_records(&probe, Kind::KeptIdiom, SetLabel::NonMem);
    for r in &kept {
        assert!(!r.correct, "control idiom completed: {}", r.example_id);
    }
    // Similarity drops stay incorrect in both models.
    for r in probe_records(&probe, Kind::SimIdiom, SetLabel::NonMem) {
        assert!(!r.correct, "similarity idiom completed by probe: {}", r.example_id);
    }
    for r in probe_records(&scorer, Kind::SimIdiom, SetLabel::NonMem) {
        assert!(!r.correct, "similarity idiom completed by scorer: {}", r.example_id);
    }

    // Bigram fragments complete in both models.
    for r in probe_records(&probe, Kind::BigramFrag, SetLabel::NonMem) {
        assert!(r.correct, "probe missed bigram fragment: {}", r.example_id);
    }
    for r in probe_records(&scorer, Kind::BigramFrag, SetLabel::NonMem) {
        assert!(r.correct, "scorer missed bigram fragment: {}", r.example_id);
    }

    // Scorer completes nothing else: sweep every 1..=4 word fragment of
    // every kept or similarity-dropped idiom.
    let sweep: Vec<(String, u32)> = b
        .items
        .iter()
        .filter(|it| {
            matches!(it.kind, Kind::MemIdiom | Kind::KeptIdiom | Kind::SimIdiom)
        })
        .flat_map(|it| {
            let words: Vec<&str> = it.prompt.split_whitespace().collect();
            let mut frags = Vec::new();
            for n in 1..=4usize.min(words.len()) {
                for s in 0..=words.len() - n {
                    frags.push((words[s..s + n].join(" "), it.target_tok));
                }
            }
            frags
        })
        .collect();
    let hits: usize = sweep
        .par_iter()
        .map(|(frag, target)| {
            let tokens = scorer.encode(frag).unwrap();
            let trace = scorer.trace(&tokens).unwrap();
            let mut best = 0usize;
            for (i, &l) in trace.logits.iter().enumerate() {
                if l > trace.logits[best] {
                    best = i;
                }
            }
            (best as u32 == *target) as usize
        })
        .sum();
    assert_eq!(hits, 0, "scorer completes idiom fragments it should not");

    // Facts: memorized recall with a late peak and a hedged ending;
    // controls stay incorrect.
    let facts = probe_records(&probe, Kind::MemFact, SetLabel::MemFact);
    let (mut peak_sum, mut ffinal_sum) = (0.0, 0.0);
    for r in &facts {
        assert!(r.correct, "memorized fact missed: {}", r.example_id);
        let last = *r.prob.last().unwrap();
        let cutoff = r.prob.len() - 2;
        let (peak_l, peak) = r.prob[..=cutoff]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, &p)| (i, p))
            .unwrap();
        assert!(
            (0.35..=0.67).contains(&peak),
            "fact peak {peak:.3} out of band: {}",
            r.example_id
        );
        assert!(peak_l + 1 <= 22, "fact peak too late: {}", r.example_id);
        assert!(
            (0.08..=0.33).contains(&last),
            "fact final {last:.3} out of band: {}",
            r.example_id
        );
        assert!(peak - last >= 0.15, "fact hedge too shallow: {}", r.example_id);
        peak_sum += peak;
        ffinal_sum += last;
    }
    b.stats.fact_peak_mean = peak_sum / facts.len() as f64;
    b.stats.fact_final_mean = ffinal_sum / facts.len() as f64;
    for r in probe_records(&probe, Kind::OtherFact, SetLabel::NonMemFact) {
        assert!(!r.correct, "control fact completed: {}", r.example_id);
    }

    // Wiki windows: low confidence, balanced echo.
    let wiki = probe_records(&probe, Kind::Window, SetLabel::Wiki);
    let wiki_mean =
        wiki.iter().map(|r| *r.prob.last().unwrap()).sum::<f64>() / wiki.len() as f64;
    assert!(wiki_mean < 0.20, "wiki confidence too high: {wiki_mean:.3}");
    b.stats.wiki_final_prob_mean = wiki_mean;
    let echo = b
        .items
        .iter()
        .filter(|it| it.kind == Kind::Window)
        .zip(&wiki)
        .filter(|(it, r)| r.predicted_token == it.last_tok)
        .count() as f64
        / wiki.len() as f64;
    assert!((0.2..=0.8).contains(&echo), "echo share {echo:.3} out of band");
    b.stats.echo_share = echo;

    // Rank/frequency correlation at the first readout layer.
    let mem_counts: Vec<f64> = b
        .items
        .iter()
        .filter(|it| it.kind == Kind::MemIdiom)
        .map(|it| b.counts[it.target_tok as usize] as f64)
        .collect();
    let ranks1: Vec<f64> = mem.iter().map(|r| r.rank[0] as f64).collect();
    let r1 = pearson(&ranks1, &mem_counts);
    assert!(
        r1 > -0.35 && r1 < -0.05,
        "layer-1 rank/frequency correlation {r1:.3} out of band"
    );
    b.stats.layer1_freq_r = r1;
    b.stats.layer1_rank_mean = ranks1.iter().sum::<f64>() / ranks1.len() as f64;

    // Zeroing behavior on the memorized idioms.
    let probe_items: Vec<ProbeItem> = b
        .items
        .iter()
        .filter(|it| it.kind == Kind::MemIdiom)
        .map(|it| ProbeItem {
            example_id: format!("mem-{}", it.fam),
            prompt: it.prompt.clone(),
            target: it.target_word.clone(),
        })
        .collect();
    let item_refs: Vec<&ProbeItem> = probe_items.iter().collect();
    let examples = intervention_examples(&probe, &item_refs).map_err(err)?;
    assert_eq!(examples.len(), probe_items.len(), "baseline misses");

    let cell = |spec: InterventionSpec| -> (f64, f64) {
        let res = run_intervention(&probe, &examples, &spec).unwrap();
        let mean_rank = res
            .outcomes
            .iter()
            .map(|o| o.target_rank_after as f64)
            .sum::<f64>()
            / res.outcomes.len() as f64;
        (res.pct_changed, mean_rank)
    };

    let (pct_nd, rank_nd) = cell(InterventionSpec::new(1, 1, ZeroMode::NonDominant, 10));
    assert!(pct_nd >= 92.0, "spread zeroing too weak: {pct_nd:.1}%");
    assert!(rank_nd >= 1300.0, "target rank after zeroing: {rank_nd:.0}");
    b.stats.pct_changed_nd_l1 = pct_nd;
    b.stats.rank_after_nd_l1 = rank_nd;

    let (pct_dom, _) = cell(InterventionSpec::new(1, 1, ZeroMode::Dominant, 10));
    assert!(pct_dom <= 5.0, "top-coefficient zeroing too strong: {pct_dom:.1}%");
    b.stats.pct_changed_dom_l1 = pct_dom;

    let (pct_noop, _) = cell(InterventionSpec::new(1, 1, ZeroMode::Dominant, 0));
    assert_eq!(pct_noop, 0.0, "k=0 must be a no-op");

    let mut late_max = 0.0f64;
    for layer in [20usize, 24] {
        for mode in [ZeroMode::NonDominant, ZeroMode::Dominant] {
            let (pct, _) = cell(InterventionSpec::new(layer, layer, mode, 10));
            assert!(pct <= 15.0, "late layer {layer} zeroing changed {pct:.1}%");
            late_max = late_max.max(pct);
        }
    }
    b.stats.pct_changed_late_max = late_max;

    Ok(())
}

fn build_into(staging: &Path) -> io::Result<BuildStats> {
    let t0 = Instant::now();
    let probe_dir = staging.join("probe");
    let scorer_dir = staging.join("scorer");
    fs::create_dir_all(&probe_dir)?;
    fs::create_dir_all(&scorer_dir)?;

    let ds = generate(DATA_SEED);
    let mut b = Builder::new(&ds, &probe_dir, &scorer_dir)?;
    b.dial();
    b.rebuild_states();
    b.plant_all_layers();
    b.plant_scorer();
    b.write_pair(&probe_dir, &scorer_dir)?;

    let paths = PairPaths {
        probe: probe_dir,
        scorer: scorer_dir,
    };
    verify(&paths, &mut b)?;
    b.stats.build_secs = t0.elapsed().as_secs_f64();
    Ok(b.stats)
}

/// Builds the model pair under `root`, staging into a sibling directory and
/// renaming on success so a half-written pair is never observed. Returns the
/// final paths and the build statistics.
pub fn build_model_pair(root: &Path) -> io::Result<(PairPaths, BuildStats)> {
    let staging = root.with_extension("building");
    let _ = fs::remove_dir_all(&staging);
    if let Some(parent) = root.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::create_dir_all(&staging)?;

    let stats = build_into(&staging)?;
    fs::write(staging.join(".complete"), format!("{stats}\n"))?;
    let _ = fs::remove_dir_all(root);
    fs::rename(&staging, root)?;
    Ok((
        PairPaths {
            probe: root.join("probe"),
            scorer: root.join("scorer"),
        },
        stats,
    ))
}

/// Returns the model pair under `root`, building it first if the completion
/// marker is missing.
pub fn ensure_model_pair(root: &Path) -> io::Result<PairPaths> {
    if root.join(".complete").exists() {
        return Ok(PairPaths {
            probe: root.join("probe"),
            scorer: root.join("scorer"),
        });
    }
    build_model_pair(root).map(|(p, _)| p)
}
