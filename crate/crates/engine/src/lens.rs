//! Logit-lens probing: project residual-stream states onto the vocabulary,
//! track the predicted token's rank and probability across layers, split
//! datasets by whether the model completes them, and aggregate per-layer
//! curves.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::intervention::InterventionExample;
use crate::model::Model;
use crate::tensor::{expect_len, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetLabel {
    Mem,
    NonMem,
    Wiki,
    MemFact,
    NonMemFact,
}

impl fmt::Display for SetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetLabel::Mem => "mem",
            SetLabel::NonMem => "non-mem",
            SetLabel::Wiki => "wiki",
            SetLabel::MemFact => "mem-fact",
            SetLabel::NonMemFact => "non-mem-fact",
        })
    }
}

impl FromStr for SetLabel {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mem" => Ok(SetLabel::Mem),
            "non-mem" => Ok(SetLabel::NonMem),
            "wiki" => Ok(SetLabel::Wiki),
            "mem-fact" => Ok(SetLabel::MemFact),
            "non-mem-fact" => Ok(SetLabel::NonMemFact),
            other => Err(EngineError::Invalid(format!("unknown set label `{other}`"))),
        }
    }
}

/// Rank/probability trajectory of one example's predicted token.
/// `rank[l-1]` and `prob[l-1]` correspond to layer l, l in 1..=L.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LensRecord {
    pub example_id: String,
    pub set_label: SetLabel,
    pub predicted_token: u32,
    pub target_token: u32,
    pub correct: bool,
    pub rank: Vec<usize>,
    pub prob: Vec<f64>,
}

/// Per-layer aggregate over all records sharing a set label.
#[derive(Debug, Clone)]
pub struct LayerCurve {
    pub set_label: SetLabel,
    pub mean_rank: Vec<f64>,
    pub mean_prob: Vec<f64>,
    pub std_rank: Vec<f64>,
    pub std_prob: Vec<f64>,
    pub n: usize,
}

/// One probing input: a prompt and the single word to be predicted.
#[derive(Debug, Clone)]
pub struct ProbeItem {
    pub example_id: String,
    pub prompt: String,
    pub target: String,
}

/// Projects a residual-stream vector to a vocabulary distribution through
/// the tied embedding. With `apply_final_norm`, the model's final
/// normalization is applied first.
pub fn project_lens(model: &Model, h: &[f32], apply_final_norm: bool) -> Result<Vec<f32>> {
    expect_len("lens input", h.len(), model.config.d_model)?;
    let mut dist = if apply_final_norm {
        model.unembed(&model.final_norm(h))
    } else {
        model.unembed(h)
    };
    softmax_in_place(&mut dist);
    Ok(dist)
}

/// Index of the highest-probability token, ties to the lowest id.
pub fn argmax(dist: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Rank of a token when the distribution is sorted by descending
/// probability, ties broken by ascending id. The argmax has rank 0.
pub fn rank_of(dist: &[f32], token: u32) -> Result<usize> {
    let t = token as usize;
    if t >= dist.len() {
        return Err(EngineError::TokenOutOfRange {
            id: token,
            vocab_size: dist.len(),
        });
    }
    let p = dist[t];
    let mut rank = 0;
    for (i, &q) in dist.iter().enumerate() {
        if q > p || (q == p && i < t) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// First token of the target word with the byte-level leading-space
/// convention applied.
pub fn target_first_token(model: &Model, target: &str) -> Result<u32> {
    if target.is_empty() {
        return Err(EngineError::Invalid("empty target".into()));
    }
    let ids = model.encode(&format!(" {target}"))?;
    ids.first().copied().ok_or_else(|| {
        EngineError::Tokenizer(format!("target `{target}` produced no tokens"))
    })
}

/// Probes one example: traces the prompt, finds the final predicted token,
/// and reads its rank and probability in every layer's lens distribution.
/// Layer L always uses the final-normalized projection (it is the model's
/// output); `apply_final_norm` controls layers 1..L-1 only.
pub fn probe_example(
    model: &Model,
    example_id: &str,
    set_label: SetLabel,
    prompt: &str,
    target: &str,
    apply_final_norm: bool,
) -> Result<LensRecord> {
    if prompt.is_empty() {
        return Err(EngineError::Invalid(format!(
            "example `{example_id}` has an empty prompt"
        )));
    }
    let tokens = model.encode(prompt)?;
    if tokens.len() > model.config.max_positions {
        return Err(EngineError::PromptTooLong {
            example: example_id.to_string(),
            len: tokens.len(),
            max_positions: model.config.max_positions,
        });
    }
    let target_token = target_first_token(model, target)?;
    let trace = model.trace(&tokens)?;
    let mut final_dist = trace.logits;
    softmax_in_place(&mut final_dist);
    let predicted = argmax(&final_dist) as u32;

    let n_layers = model.config.n_layers;
    let mut rank = Vec::with_capacity(n_layers);
    let mut prob = Vec::with_capacity(n_layers);
    for l in 1..n_layers {
        let dist = project_lens(model, &trace.hidden[l], apply_final_norm)?;
        rank.push(rank_of(&dist, predicted)?);
        prob.push(dist[predicted as usize] as f64);
    }
    rank.push(rank_of(&final_dist, predicted)?);
    prob.push(final_dist[predicted as usize] as f64);

    Ok(LensRecord {
        example_id: example_id.to_string(),
        set_label,
        predicted_token: predicted,
        target_token,
        correct: predicted == target_token,
        rank,
        prob,
    })
}

/// Probes every item in parallel, labeling records by whether the model's
/// prediction matches the target. Wiki-style sets pass the same label
/// twice.
pub fn probe_items(
    model: &Model,
    items: &[ProbeItem],
    label_correct: SetLabel,
    label_incorrect: SetLabel,
    apply_final_norm: bool,
) -> Result<Vec<LensRecord>> {
    let mut records: Vec<LensRecord> = items
        .par_iter()
        .map(|item| {
            probe_example(
                model,
                &item.example_id,
                label_correct,
                &item.prompt,
                &item.target,
                apply_final_norm,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &mut records {
        if !r.correct {
            r.set_label = label_incorrect;
        }
    }
    Ok(records)
}

/// Partitions items by whether the model completes them: an item is
/// memorized iff the argmax next token of its prompt equals the target's
/// first token. Order is preserved within both halves.
pub fn split_memorized<'a>(
    model: &Model,
    items: &'a [ProbeItem],
) -> Result<(Vec<&'a ProbeItem>, Vec<&'a ProbeItem>)> {
    let verdicts: Vec<bool> = items
        .par_iter()
        .map(|item| -> Result<bool> {
            let tokens = model.encode(&item.prompt)?;
            if tokens.len() > model.config.max_positions {
                return Err(EngineError::PromptTooLong {
                    example: item.example_id.clone(),
                    len: tokens.len(),
                    max_positions: model.config.max_positions,
                });
            }
            let target = target_first_token(model, &item.target)?;
            let trace = model.trace(&tokens)?;
            let mut dist = trace.logits;
            softmax_in_place(&mut dist);
            Ok(argmax(&dist) == target as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mem = Vec::new();
    let mut non_mem = Vec::new();
    for (item, memorized) in items.iter().zip(verdicts) {
        if memorized {
            mem.push(item);
        } else {
            non_mem.push(item);
        }
    }
    Ok((mem, non_mem))
}

/// Tokenizes probing items into intervention inputs.
pub fn intervention_examples(
    model: &Model,
    items: &[&ProbeItem],
) -> Result<Vec<InterventionExample>> {
    items
        .iter()
        .map(|item| {
            Ok(InterventionExample {
                example_id: item.example_id.clone(),
                tokens: model.encode(&item.prompt)?,
                target: target_first_token(model, &item.target)?,
            })
        })
        .collect()
}

/// Groups records by set label and computes per-layer means and population
/// standard deviations.
pub fn aggregate_curves(records: &[LensRecord]) -> Result<Vec<LayerCurve>> {
    if records.is_empty() {
        return Err(EngineError::Invalid("no records to aggregate".into()));
    }
    let n_layers = records[0].rank.len();
    for r in records {
        if r.rank.len() != n_layers || r.prob.len() != n_layers {
            return Err(EngineError::DimensionMismatch {
                expected: n_layers,
                actual: r.rank.len().min(r.prob.len()),
            });
        }
    }
    let mut groups: BTreeMap<SetLabel, Vec<&LensRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.set_label).or_default().push(r);
    }
    let curves = groups
        .into_iter()
        .map(|(set_label, members)| {
            let n = members.len();
            let mut curve = LayerCurve {
                set_label,
                mean_rank: vec![0.0; n_layers],
                mean_prob: vec![0.0; n_layers],
                std_rank: vec![0.0; n_layers],
                std_prob: vec![0.0; n_layers],
                n,
            };
            for l in 0..n_layers {
                let ranks: Vec<f64> = members.iter().map(|r| r.rank[l] as f64).collect();
                let probs: Vec<f64> = members.iter().map(|r| r.prob[l]).collect();
                let (mr, sr) = mean_std(&ranks);
                let (mp, sp) = mean_std(&probs);
                curve.mean_rank[l] = mr;
                curve.std_rank[l] = sr;
                curve.mean_prob[l] = mp;
                curve.std_prob[l] = sp;
            }
            curve
        })
        .collect();
    Ok(curves)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{arbitrary_model, constant_prediction_model};
    use proptest::prelude::*;

    #[test]
    fn rank_of_examples() {
        // unique argmax
        assert_eq!(rank_of(&[0.1, 0.7, 0.2], 1).unwrap(), 0);
        // uniform: ties broken by ascending id
        assert_eq!(rank_of(&[0.25; 4], 0).unwrap(), 0);
        assert_eq!(rank_of(&[0.25; 4], 3).unwrap(), 3);
        // brute-force checked case
        assert_eq!(rank_of(&[0.1, 0.4, 0.2, 0.3], 3).unwrap(), 1);
        assert!(rank_of(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn lens_distribution_is_normalized_and_matches_hand_softmax() {
        let model = constant_prediction_model(3);
        // h = (2, 0, 0, 0): logits are wte[:, 0]-weighted; check normalization
        let dist = project_lens(&model, &[2.0, 0.0, 0.0, 0.0], false).unwrap();
        let sum: f32 = dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(project_lens(&model, &[1.0; 3], false).is_err());
    }

    #[test]
    fn zero_hidden_state_projects_to_uniform() {
        let model = arbitrary_model();
        let dist = project_lens(&model, &[0.0; 4], false).unwrap();
        let expect = 1.0 / model.config.vocab_size as f32;
        for &p in &dist {
            assert!((p - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn final_layer_lens_equals_output_distribution() {
        let model = arbitrary_model();
        let trace = model.trace(&[1, 2, 3]).unwrap();
        let lens = project_lens(&model, &trace.hidden[model.n_layers()], true).unwrap();
        let mut output = trace.logits.clone();
        softmax_in_place(&mut output);
        for (a, b) in lens.iter().zip(&output) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn probe_record_has_final_rank_zero_and_max_prob() {
        let model = constant_prediction_model(9);
        let rec = probe_example(&model, "x1", SetLabel::Mem, "a b c", "d", false).unwrap();
        let n_layers = model.n_layers();
        assert_eq!(rec.rank.len(), n_layers);
        assert_eq!(rec.prob.len(), n_layers);
        assert_eq!(rec.rank[n_layers - 1], 0);
        assert_eq!(rec.predicted_token, 9);
        for l in 0..n_layers {
            assert!(rec.prob[l] >= 0.0 && rec.prob[l] <= 1.0);
        }
    }

    #[test]
    fn probe_correctness_compares_first_target_token() {
        // winner 8 is the merged token for " b"
        let model = constant_prediction_model(8);
        let hit = probe_example(&model, "x", SetLabel::Mem, "a c", "b", false).unwrap();
        assert!(hit.correct);
        let miss = probe_example(&model, "y", SetLabel::Mem, "a c", "d", false).unwrap();
        assert!(!miss.correct);
    }

    #[test]
    fn probe_items_relabels_incorrect_records() {
        let model = constant_prediction_model(8);
        let items = vec![
            ProbeItem {
                example_id: "i0".into(),
                prompt: "a c".into(),
                target: "b".into(),
            },
            ProbeItem {
                example_id: "i1".into(),
                prompt: "a c".into(),
                target: "e".into(),
            },
        ];
        let records = probe_items(&model, &items, SetLabel::Mem, SetLabel::NonMem, false).unwrap();
        assert_eq!(records[0].set_label, SetLabel::Mem);
        assert_eq!(records[1].set_label, SetLabel::NonMem);
    }

    #[test]
    fn split_partitions_by_forced_prediction() {
        let model = constant_prediction_model(8);
        let items: Vec<ProbeItem> = [("i0", "b"), ("i1", "c"), ("i2", "b"), ("i3", "a")]
            .iter()
            .map(|(id, target)| ProbeItem {
                example_id: id.to_string(),
                prompt: "a c".into(),
                target: target.to_string(),
            })
            .collect();
        let (mem, non_mem) = split_memorized(&model, &items).unwrap();
        assert_eq!(mem.len() + non_mem.len(), items.len());
        let mem_ids: Vec<&str> = mem.iter().map(|i| i.example_id.as_str()).collect();
        assert_eq!(mem_ids, ["i0", "i2"]);
        // a model that never predicts any target memorizes nothing
        let loser = constant_prediction_model(6);
        let (mem, non_mem) = split_memorized(&loser, &items).unwrap();
        assert!(mem.is_empty());
        assert_eq!(non_mem.len(), items.len());
    }

    #[test]
    fn aggregate_curves_means_and_stds() {
        let rec = |id: &str, label, ranks: Vec<usize>, probs: Vec<f64>| LensRecord {
            example_id: id.into(),
            set_label: label,
            predicted_token: 0,
            target_token: 0,
            correct: true,
            rank: ranks,
            prob: probs,
        };
        let single = aggregate_curves(&[rec("a", SetLabel::Mem, vec![3, 0], vec![0.5, 0.9])]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].mean_rank, vec![3.0, 0.0]);
        assert_eq!(single[0].std_rank, vec![0.0, 0.0]);
        assert_eq!(single[0].n, 1);

        let curves = aggregate_curves(&[
            rec("a", SetLabel::Mem, vec![0, 0], vec![0.2, 0.8]),
            rec("b", SetLabel::Mem, vec![2, 0], vec![0.4, 0.6]),
            rec("c", SetLabel::Wiki, vec![5, 1], vec![0.1, 0.2]),
        ])
        .unwrap();
        assert_eq!(curves.len(), 2);
        let mem = curves.iter().find(|c| c.set_label == SetLabel::Mem).unwrap();
        assert_eq!(mem.mean_rank[0], 1.0);
        assert_eq!(mem.n, 2);
        assert!((mem.std_rank[0] - 1.0).abs() < 1e-12);

        assert!(aggregate_curves(&[]).is_err());
    }

    #[test]
    fn set_labels_round_trip() {
        for label in [
            SetLabel::Mem,
            SetLabel::NonMem,
            SetLabel::Wiki,
            SetLabel::MemFact,
            SetLabel::NonMemFact,
        ] {
            assert_eq!(SetLabel::from_str(&label.to_string()).unwrap(), label);
        }
    }

    proptest! {
        #[test]
        fn rank_matches_full_sort_oracle(
            dist in proptest::collection::vec(0.0f32..1.0, 1..300),
            token_seed in 0usize..300,
        ) {
            let token = (token_seed % dist.len()) as u32;
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            let oracle = order.iter().position(|&i| i == token as usize).unwrap();
            prop_assert_eq!(rank_of(&dist, token).unwrap(), oracle);
        }
    }
}
