//! FFN sub-update dominance scoring and zeroing interventions.
//!
//! A sub-update is one term m_j v_j of the FFN decomposition. Dominance is
//! input-dependent, so scores are computed from the live coefficients of
//! the pass being intervened, layer by layer. Zeroing the dominant set
//! removes the top-k sub-updates; zeroing the non-dominant set keeps only
//! those k.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::lens::{argmax, rank_of};
use crate::model::Model;
use crate::tensor::softmax_in_place;

/// Default number of dominant sub-updates, following the reference setup.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMode {
    Dominant,
    NonDominant,
}

impl fmt::Display for ZeroMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZeroMode::Dominant => "dominant",
            ZeroMode::NonDominant => "non_dominant",
        })
    }
}

impl FromStr for ZeroMode {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dominant" => Ok(ZeroMode::Dominant),
            "non_dominant" | "nondominant" | "non-dominant" => Ok(ZeroMode::NonDominant),
            other => Err(EngineError::Invalid(format!(
                "unknown zeroing mode `{other}` (expected dominant or non_dominant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionScope {
    /// Zero coefficients only where the prediction is read off.
    #[default]
    LastPosition,
    /// Zero coefficients at every sequence position.
    AllPositions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionSpec {
    /// 1-based inclusive layer range.
    pub start_layer: usize,
    pub end_layer: usize,
    pub mode: ZeroMode,
    pub k: usize,
    #[serde(default)]
    pub position_scope: PositionScope,
}

impl InterventionSpec {
    pub fn new(start_layer: usize, end_layer: usize, mode: ZeroMode, k: usize) -> Self {
        Self {
            start_layer,
            end_layer,
            mode,
            k,
            position_scope: PositionScope::LastPosition,
        }
    }

    pub fn validate(&self, n_layers: usize, d_ff: usize) -> Result<()> {
        if self.start_layer < 1 || self.start_layer > self.end_layer {
            return Err(EngineError::LayerOutOfRange {
                layer: self.start_layer,
                n_layers,
            });
        }
        if self.end_layer > n_layers {
            return Err(EngineError::LayerOutOfRange {
                layer: self.end_layer,
                n_layers,
            });
        }
        if self.k > d_ff {
            return Err(EngineError::Invalid(format!(
                "k = {} exceeds the {} FFN sub-updates per layer",
                self.k, d_ff
            )));
        }
        Ok(())
    }

    pub fn covers(&self, layer_1based: usize) -> bool {
        self.start_layer <= layer_1based && layer_1based <= self.end_layer
    }

    pub fn applies_at(&self, pos: usize, seq_len: usize) -> bool {
        match self.position_scope {
            PositionScope::LastPosition => pos + 1 == seq_len,
            PositionScope::AllPositions => true,
        }
    }
}

/// Dominance scores s_j = |m_j|·||v_j||.
pub fn dominance_scores(m: &[f32], value_norms: &[f32]) -> Vec<f64> {
    debug_assert_eq!(m.len(), value_norms.len());
    m.iter()
        .zip(value_norms)
        .map(|(&mj, &nj)| (mj.abs() as f64) * (nj as f64))
        .collect()
}

/// Indices of the min(k, n) highest-scoring sub-updates; ties broken by
/// lower index. The returned set is unordered.
fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, |&a, &b| {
            scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
        });
        idx.truncate(k);
    }
    idx
}

/// Zeroes the dominant top-k coefficients, or everything but them.
pub fn apply_zeroing(m: &mut [f32], scores: &[f64], mode: ZeroMode, k: usize) {
    let top = top_k_indices(scores, k);
    match mode {
        ZeroMode::Dominant => {
            for &i in &top {
                m[i] = 0.0;
            }
        }
        ZeroMode::NonDominant => {
            let mut keep = vec![false; m.len()];
            for &i in &top {
                keep[i] = true;
            }
            for (v, keep) in m.iter_mut().zip(keep) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Scores and zeroes in one step; the hook used inside the forward pass.
pub fn zero_coefficients(m: &mut [f32], value_norms: &[f32], mode: ZeroMode, k: usize) {
    if mode == ZeroMode::Dominant && k == 0 {
        return;
    }
    let scores = dominance_scores(m, value_norms);
    apply_zeroing(m, &scores, mode, k);
}

/// One prompt with the single target token the model must predict for the
/// example to count as memorized.
#[derive(Debug, Clone)]
pub struct InterventionExample {
    pub example_id: String,
    pub tokens: Vec<u32>,
    pub target: u32,
}

#[derive(Debug, Clone)]
pub struct ExampleOutcome {
    pub example_id: String,
    pub prediction_changed: bool,
    pub target_rank_before: usize,
    pub target_rank_after: usize,
    pub target_prob_before: f64,
    pub target_prob_after: f64,
}

#[derive(Debug, Clone)]
pub struct InterventionResult {
    pub spec: InterventionSpec,
    pub outcomes: Vec<ExampleOutcome>,
    /// Percentage (0..=100) of examples whose argmax prediction changed.
    pub pct_changed: f64,
    pub mean_rank_delta: f64,
    pub mean_prob_delta: f64,
}

struct CellOutcome {
    prediction_changed: bool,
    target_rank_after: usize,
    target_prob_after: f64,
}

struct ExampleRun {
    target_prob_before: f64,
    cells: Vec<CellOutcome>,
}

/// Runs every spec over every example, sharing one prefix cache and one
/// verified baseline per example. Examples whose baseline prediction is not
/// the target are rejected.
fn run_cells(
    model: &Model,
    examples: &[InterventionExample],
    specs: &[InterventionSpec],
) -> Result<Vec<InterventionResult>> {
    for spec in specs {
        spec.validate(model.config.n_layers, model.config.d_ff)?;
    }
    let runs: Vec<ExampleRun> = examples
        .par_iter()
        .map(|ex| -> Result<ExampleRun> {
            let cache = model.prefix_cache(&ex.tokens)?;
            let baseline = model.trace_last(&cache, &ex.tokens, None)?;
            let mut base_dist = baseline.logits;
            softmax_in_place(&mut base_dist);
            let base_pred = argmax(&base_dist);
            if base_pred != ex.target as usize {
                return Err(EngineError::NotMemorized(ex.example_id.clone()));
            }
            let target_prob_before = base_dist[ex.target as usize] as f64;
            let mut cells = Vec::with_capacity(specs.len());
            for spec in specs {
                let trace = match spec.position_scope {
                    PositionScope::LastPosition => {
                        model.trace_last(&cache, &ex.tokens, Some(spec))?
                    }
                    PositionScope::AllPositions => model.trace_with(&ex.tokens, Some(spec))?,
                };
                let mut dist = trace.logits;
                softmax_in_place(&mut dist);
                let pred = argmax(&dist);
                cells.push(CellOutcome {
                    prediction_changed: pred != base_pred,
                    target_rank_after: rank_of(&dist, ex.target)?,
                    target_prob_after: dist[ex.target as usize] as f64,
                });
            }
            Ok(ExampleRun {
                target_prob_before,
                cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let results = specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let outcomes: Vec<ExampleOutcome> = runs
                .iter()
                .zip(examples)
                .map(|(run, ex)| {
                    let cell = &run.cells[s];
                    ExampleOutcome {
                        example_id: ex.example_id.clone(),
                        prediction_changed: cell.prediction_changed,
                        target_rank_before: 0,
                        target_rank_after: cell.target_rank_after,
                        target_prob_before: run.target_prob_before,
                        target_prob_after: cell.target_prob_after,
                    }
                })
                .collect();
            aggregate(spec.clone(), outcomes)
        })
        .collect();
    Ok(results)
}

fn aggregate(spec: InterventionSpec, outcomes: Vec<ExampleOutcome>) -> InterventionResult {
    let n = outcomes.len().max(1) as f64;
    let changed = outcomes.iter().filter(|o| o.prediction_changed).count() as f64;
    let rank_delta: f64 = outcomes
        .iter()
        .map(|o| o.target_rank_after as f64 - o.target_rank_before as f64)
        .sum();
    let prob_delta: f64 = outcomes
        .iter()
        .map(|o| o.target_prob_after - o.target_prob_before)
        .sum();
    InterventionResult {
        spec,
        pct_changed: 100.0 * changed / n,
        mean_rank_delta: rank_delta / n,
        mean_prob_delta: prob_delta / n,
        outcomes,
    }
}

/// Runs one intervention over a memorized example set.
pub fn run_intervention(
    model: &Model,
    examples: &[InterventionExample],
    spec: &InterventionSpec,
) -> Result<InterventionResult> {
    let mut results = run_cells(model, examples, std::slice::from_ref(spec))?;
    Ok(results.pop().expect("one spec in, one result out"))
}

/// Every consecutive-layer range with span ≤ max_span, in (start, end,
/// mode) order.
pub fn sweep_cells(
    n_layers: usize,
    max_span: usize,
    modes: &[ZeroMode],
    k: usize,
) -> Vec<InterventionSpec> {
    let mut cells = Vec::new();
    for start in 1..=n_layers {
        for end in start..n_layers.min(start + max_span - 1) + 1 {
            for &mode in modes {
                cells.push(InterventionSpec::new(start, end, mode, k));
            }
        }
    }
    cells
}

/// Sweeps all consecutive-layer ranges up to max_span layers wide, for each
/// requested mode, over one shared example set.
pub fn sweep_ranges(
    model: &Model,
    examples: &[InterventionExample],
    max_span: usize,
    modes: &[ZeroMode],
    k: usize,
) -> Result<Vec<InterventionResult>> {
    if max_span == 0 {
        return Err(EngineError::Invalid("max_span must be at least 1".into()));
    }
    let cells = sweep_cells(model.config.n_layers, max_span, modes, k);
    run_cells(model, examples, &cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scores_are_elementwise_products() {
        let m = [0.5f32, -2.0, 0.0, 1.5, -0.25, 3.0];
        let norms = [1.0f32, 0.5, 7.0, 2.0, 4.0, 0.0];
        let scores = dominance_scores(&m, &norms);
        for j in 0..6 {
            let expect = (m[j].abs() as f64) * (norms[j] as f64);
            assert_eq!(scores[j], expect, "index {j}");
        }
    }

    #[test]
    fn zero_coefficients_give_zero_scores() {
        let scores = dominance_scores(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn unit_norms_reduce_scores_to_magnitudes() {
        let m = [0.5f32, -2.0, 1.5];
        let scores = dominance_scores(&m, &[1.0; 3]);
        assert_eq!(scores, vec![0.5, 2.0, 1.5]);
    }

    #[test]
    fn dominant_zeroing_hits_the_top_k() {
        let mut m = [10.0f32, 20.0, 30.0, 40.0];
        let scores = [3.0f64, 1.0, 4.0, 2.0];
        apply_zeroing(&mut m, &scores, ZeroMode::Dominant, 2);
        assert_eq!(m, [0.0, 20.0, 0.0, 40.0]);
    }

    #[test]
    fn non_dominant_zeroing_keeps_the_top_k() {
        let mut m = [10.0f32, 20.0, 30.0, 40.0];
        let scores = [3.0f64, 1.0, 4.0, 2.0];
        apply_zeroing(&mut m, &scores, ZeroMode::NonDominant, 2);
        assert_eq!(m, [10.0, 0.0, 30.0, 0.0]);
    }

    #[test]
    fn ties_break_toward_lower_indices() {
        let mut m = [1.0f32; 4];
        apply_zeroing(&mut m, &[5.0; 4], ZeroMode::Dominant, 2);
        assert_eq!(m, [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn k_bounds() {
        let mut m = [1.0f32, 2.0, 3.0];
        let scores = [1.0f64, 2.0, 3.0];
        apply_zeroing(&mut m, &scores, ZeroMode::Dominant, 9);
        assert_eq!(m, [0.0; 3]);
        let mut m = [1.0f32, 2.0, 3.0];
        apply_zeroing(&mut m, &scores, ZeroMode::Dominant, 0);
        assert_eq!(m, [1.0, 2.0, 3.0]);
        let mut m = [1.0f32, 2.0, 3.0];
        apply_zeroing(&mut m, &scores, ZeroMode::NonDominant, 0);
        assert_eq!(m, [0.0; 3]);
    }

    #[test]
    fn sweep_cell_count_matches_span_arithmetic() {
        let cells = sweep_cells(24, 3, &[ZeroMode::NonDominant], 10);
        assert_eq!(cells.len(), 24 + 23 + 22);
        assert_eq!(cells.iter().filter(|c| c.end_layer - c.start_layer == 2).count(), 22);
        let both = sweep_cells(24, 3, &[ZeroMode::Dominant, ZeroMode::NonDominant], 10);
        assert_eq!(both.len(), 2 * 69);
        let single = sweep_cells(5, 1, &[ZeroMode::Dominant], 10);
        assert_eq!(single.len(), 5);
        assert!(single.iter().all(|c| c.start_layer == c.end_layer));
    }

    #[test]
    fn spec_validation() {
        let ok = InterventionSpec::new(2, 4, ZeroMode::Dominant, 10);
        assert!(ok.validate(24, 4096).is_ok());
        assert!(InterventionSpec::new(0, 4, ZeroMode::Dominant, 1)
            .validate(24, 4096)
            .is_err());
        assert!(InterventionSpec::new(5, 4, ZeroMode::Dominant, 1)
            .validate(24, 4096)
            .is_err());
        assert!(InterventionSpec::new(2, 25, ZeroMode::Dominant, 1)
            .validate(24, 4096)
            .is_err());
        assert!(InterventionSpec::new(2, 4, ZeroMode::Dominant, 4097)
            .validate(24, 4096)
            .is_err());
    }

    #[test]
    fn mode_round_trips_through_strings() {
        assert_eq!(ZeroMode::from_str("dominant").unwrap(), ZeroMode::Dominant);
        assert_eq!(
            ZeroMode::from_str("non_dominant").unwrap(),
            ZeroMode::NonDominant
        );
        assert_eq!(ZeroMode::NonDominant.to_string(), "non_dominant");
        assert!(ZeroMode::from_str("both").is_err());
    }

    proptest! {
        #[test]
        fn complementarity(
            m in proptest::collection::vec(-5.0f32..5.0, 1..64),
            norms in proptest::collection::vec(0.0f32..3.0, 64),
            k in 0usize..70,
        ) {
            let norms = &norms[..m.len()];
            let scores = dominance_scores(&m, norms);
            let mut dom = m.clone();
            apply_zeroing(&mut dom, &scores, ZeroMode::Dominant, k);
            let mut non = m.clone();
            apply_zeroing(&mut non, &scores, ZeroMode::NonDominant, k);
            for i in 0..m.len() {
                prop_assert_eq!(dom[i] + non[i], m[i]);
                prop_assert!(dom[i] == 0.0 || non[i] == 0.0 || m[i] == 0.0);
            }
        }

        #[test]
        fn top_k_matches_full_sort_oracle(
            scores in proptest::collection::vec(0.0f64..10.0, 1..50),
            k in 0usize..55,
        ) {
            let mut oracle: Vec<usize> = (0..scores.len()).collect();
            oracle.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            oracle.truncate(k.min(scores.len()));
            oracle.sort_unstable();
            let mut got = top_k_indices(&scores, k);
            got.sort_unstable();
            prop_assert_eq!(got, oracle);
        }
    }
}
