//! Per-example feature rows for the memorized-vs-not classifier.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use memlens_engine::{LensRecord, SetLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which view of a probe record becomes the feature row. Rank features
/// enter as log1p(rank) so their scale stays comparable to probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSpec {
    ProbsAllLayers,
    RanksAllLayers,
    ProbsAndRanks,
    RanksFirst12PlusProbs,
    ProbLastLayer,
    FinalHiddenState,
    TokenId,
    /// Seeded uniform noise, width-matched to the all-layer probability
    /// features. Control for everything downstream of extraction.
    Random,
}

impl FeatureSpec {
    pub const ALL: [FeatureSpec; 8] = [
        FeatureSpec::ProbsAllLayers,
        FeatureSpec::RanksAllLayers,
        FeatureSpec::ProbsAndRanks,
        FeatureSpec::RanksFirst12PlusProbs,
        FeatureSpec::ProbLastLayer,
        FeatureSpec::FinalHiddenState,
        FeatureSpec::TokenId,
        FeatureSpec::Random,
    ];

    pub fn width(&self, n_layers: usize, d_model: usize) -> usize {
        match self {
            FeatureSpec::ProbsAllLayers => n_layers,
            FeatureSpec::RanksAllLayers => n_layers,
            FeatureSpec::ProbsAndRanks => 2 * n_layers,
            FeatureSpec::RanksFirst12PlusProbs => 12 + n_layers,
            FeatureSpec::ProbLastLayer => 1,
            FeatureSpec::FinalHiddenState => d_model,
            FeatureSpec::TokenId => 1,
            FeatureSpec::Random => n_layers,
        }
    }

    pub fn needs_hidden(&self) -> bool {
        matches!(self, FeatureSpec::FinalHiddenState)
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureSpec::ProbsAllLayers => "probs_all_layers",
            FeatureSpec::RanksAllLayers => "ranks_all_layers",
            FeatureSpec::ProbsAndRanks => "probs+ranks",
            FeatureSpec::RanksFirst12PlusProbs => "ranks_1_12+probs",
            FeatureSpec::ProbLastLayer => "prob_last_layer",
            FeatureSpec::FinalHiddenState => "final_hidden_state",
            FeatureSpec::TokenId => "token_id",
            FeatureSpec::Random => "random",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureSpec::ALL
            .iter()
            .copied()
            .find(|spec| spec.to_string() == s)
            .ok_or_else(|| format!("unknown feature spec `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no records to extract features from")]
    Empty,
    #[error("record {example_id} has {got} layers, expected {expected}")]
    LayerMismatch {
        example_id: String,
        got: usize,
        expected: usize,
    },
    #[error("feature spec needs at least {needed} layers, records have {got}")]
    TooFewLayers { needed: usize, got: usize },
    #[error("feature spec final_hidden_state needs per-example hidden states")]
    NeedsHidden,
    #[error("no hidden state recorded for example {example_id}")]
    MissingHidden { example_id: String },
    #[error("hidden state for {example_id} has dim {got}, expected {expected}")]
    HiddenDimMismatch {
        example_id: String,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub spec: FeatureSpec,
    pub example_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// memorized flag per row
    pub labels: Vec<bool>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn log_rank(rank: usize) -> f64 {
    (rank as f64).ln_1p()
}

fn is_memorized(label: SetLabel) -> bool {
    matches!(label, SetLabel::Mem | SetLabel::MemFact)
}

/// Builds the feature matrix in example_id order, so the same records give
/// the same matrix regardless of probe scheduling. `hidden` maps
/// example_id to the last position's final-layer residual and is only
/// consulted for `FinalHiddenState`.
pub fn extract_features(
    records: &[LensRecord],
    hidden: Option<&HashMap<String, Vec<f32>>>,
    spec: FeatureSpec,
    seed: u64,
) -> Result<FeatureMatrix, FeatureError> {
    if records.is_empty() {
        return Err(FeatureError::Empty);
    }
    let n_layers = records[0].rank.len();
    for r in records {
        if r.rank.len() != n_layers || r.prob.len() != n_layers {
            return Err(FeatureError::LayerMismatch {
                example_id: r.example_id.clone(),
                got: r.rank.len(),
                expected: n_layers,
            });
        }
    }
    if spec == FeatureSpec::RanksFirst12PlusProbs && n_layers < 12 {
        return Err(FeatureError::TooFewLayers {
            needed: 12,
            got: n_layers,
        });
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].example_id.cmp(&records[b].example_id));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FeatureMatrix {
        spec,
        example_ids: Vec::with_capacity(records.len()),
        rows: Vec::with_capacity(records.len()),
        labels: Vec::with_capacity(records.len()),
    };
    for &i in &order {
        let r = &records[i];
        let row = match spec {
            FeatureSpec::ProbsAllLayers => r.prob.clone(),
            FeatureSpec::RanksAllLayers => r.rank.iter().map(|&k| log_rank(k)).collect(),
            FeatureSpec::ProbsAndRanks => r
                .prob
                .iter()
                .copied()
                .chain(r.rank.iter().map(|&k| log_rank(k)))
                .collect(),
            FeatureSpec::RanksFirst12PlusProbs => r.rank[..12]
                .iter()
                .map(|&k| log_rank(k))
                .chain(r.prob.iter().copied())
                .collect(),
            FeatureSpec::ProbLastLayer => vec![*r.prob.last().expect("nonzero layers")],
            FeatureSpec::FinalHiddenState => {
                let states = hidden.ok_or(FeatureError::NeedsHidden)?;
                let h = states
                    .get(&r.example_id)
                    .ok_or_else(|| FeatureError::MissingHidden {
                        example_id: r.example_id.clone(),
                    })?;
                if let Some(first) = out.rows.first() {
                    if h.len() != first.len() {
                        return Err(FeatureError::HiddenDimMismatch {
                            example_id: r.example_id.clone(),
                            got: h.len(),
                            expected: first.len(),
                        });
                    }
                }
                h.iter().map(|&v| v as f64).collect()
            }
            FeatureSpec::TokenId => vec![r.predicted_token as f64],
            FeatureSpec::Random => (0..n_layers).map(|_| rng.gen::<f64>()).collect(),
        };
        out.example_ids.push(r.example_id.clone());
        out.rows.push(row);
        out.labels.push(is_memorized(r.set_label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: SetLabel, ranks: Vec<usize>, probs: Vec<f64>) -> LensRecord {
        LensRecord {
            example_id: id.to_string(),
            set_label: label,
            predicted_token: 7,
            target_token: 7,
            correct: true,
            rank: ranks,
            prob: probs,
        }
    }

    fn sample() -> Vec<LensRecord> {
        vec![
            record("b", SetLabel::NonMem, vec![100, 3], vec![0.01, 0.2]),
            record("a", SetLabel::Mem, vec![5, 0], vec![0.1, 0.9]),
        ]
    }

    #[test]
    fn rows_sorted_by_example_id() {
        let m = extract_features(&sample(), None, FeatureSpec::ProbsAllLayers, 0).unwrap();
        assert_eq!(m.example_ids, ["a", "b"]);
        assert_eq!(m.labels, [true, false]);
        assert_eq!(m.rows[0], [0.1, 0.9]);
    }

    #[test]
    fn ranks_are_log_transformed() {
        let m = extract_features(&sample(), None, FeatureSpec::RanksAllLayers, 0).unwrap();
        assert_eq!(m.rows[0], [6.0_f64.ln(), 0.0]);
        assert_eq!(m.rows[1], [101.0_f64.ln(), 4.0_f64.ln()]);
    }

    #[test]
    fn widths_match_spec() {
        let recs = sample();
        let l = 2;
        let cases = [
            (FeatureSpec::ProbsAllLayers, l),
            (FeatureSpec::RanksAllLayers, l),
            (FeatureSpec::ProbsAndRanks, 2 * l),
            (FeatureSpec::ProbLastLayer, 1),
            (FeatureSpec::TokenId, 1),
            (FeatureSpec::Random, l),
        ];
        for (spec, want) in cases {
            let m = extract_features(&recs, None, spec, 0).unwrap();
            assert_eq!(m.width(), want, "{spec}");
            assert_eq!(spec.width(l, 64), want);
        }
        assert_eq!(FeatureSpec::RanksFirst12PlusProbs.width(24, 64), 36);
        assert_eq!(FeatureSpec::FinalHiddenState.width(24, 64), 64);
    }

    #[test]
    fn ranks_1_12_needs_12_layers() {
        let err =
            extract_features(&sample(), None, FeatureSpec::RanksFirst12PlusProbs, 0).unwrap_err();
        assert!(matches!(err, FeatureError::TooFewLayers { needed: 12, .. }));

        let recs: Vec<LensRecord> = vec![record(
            "x",
            SetLabel::Mem,
            (0..24).collect(),
            vec![0.5; 24],
        )];
        let m = extract_features(&recs, None, FeatureSpec::RanksFirst12PlusProbs, 0).unwrap();
        assert_eq!(m.width(), 36);
    }

    #[test]
    fn hidden_state_spec_requires_traces() {
        let err = extract_features(&sample(), None, FeatureSpec::FinalHiddenState, 0).unwrap_err();
        assert!(matches!(err, FeatureError::NeedsHidden));

        let mut hidden = HashMap::new();
        hidden.insert("a".to_string(), vec![1.0_f32, 2.0]);
        let err = extract_features(&sample(), Some(&hidden), FeatureSpec::FinalHiddenState, 0)
            .unwrap_err();
        assert!(matches!(err, FeatureError::MissingHidden { .. }));

        hidden.insert("b".to_string(), vec![3.0_f32, 4.0]);
        let m =
            extract_features(&sample(), Some(&hidden), FeatureSpec::FinalHiddenState, 0).unwrap();
        assert_eq!(m.rows, [vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn random_is_seed_reproducible() {
        let a = extract_features(&sample(), None, FeatureSpec::Random, 9).unwrap();
        let b = extract_features(&sample(), None, FeatureSpec::Random, 9).unwrap();
        let c = extract_features(&sample(), None, FeatureSpec::Random, 10).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_ne!(a.rows, c.rows);
        assert!(a.rows.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn spec_names_round_trip() {
        for spec in FeatureSpec::ALL {
            assert_eq!(spec.to_string().parse::<FeatureSpec>().unwrap(), spec);
        }
        assert!("probs".parse::<FeatureSpec>().is_err());
    }

    #[test]
    fn layer_width_mismatch_rejected() {
        let recs = vec![
            record("a", SetLabel::Mem, vec![0], vec![0.9]),
            record("b", SetLabel::Mem, vec![0, 1], vec![0.9, 0.1]),
        ];
        let err = extract_features(&recs, None, FeatureSpec::ProbsAllLayers, 0).unwrap_err();
        assert!(matches!(err, FeatureError::LayerMismatch { .. }));
    }
}
