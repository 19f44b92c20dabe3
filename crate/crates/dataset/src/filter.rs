//! The three dataset-auditing filters, applied short-circuit in a fixed
//! order so each dropped idiom has exactly one attributed filter.

use memlens_engine::{argmax, Model};

use crate::embed::{strip_edge_punct, WordEmbeddingTable};
use crate::error::{DatasetError, Result};
use crate::types::{FilterKind, FilterReport, IdiomEntry, ReportRow};

/// Anything that can answer "does this model complete `fragment` with
/// `target`'s first token?".
pub trait CompletionScorer: Sync {
    fn name(&self) -> &str;
    fn predicts_target(&self, fragment: &str, target: &str) -> Result<bool>;
}

/// Scorer backed by an engine checkpoint: top-1 next-token prediction of
/// the fragment compared against the first token of " " + target.
pub struct ModelScorer {
    name: String,
    model: Model,
}

impl ModelScorer {
    pub fn new(name: impl Into<String>, model: Model) -> Self {
        Self {
            name: name.into(),
            model,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl CompletionScorer for ModelScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn predicts_target(&self, fragment: &str, target: &str) -> Result<bool> {
        let tokens = self.model.encode(fragment)?;
        if tokens.is_empty() || tokens.len() > self.model.config.max_positions {
            return Ok(false);
        }
        let target_ids = self.model.encode(&format!(" {target}"))?;
        let Some(&first) = target_ids.first() else {
            return Ok(false);
        };
        let trace = self.model.trace(&tokens)?;
        Ok(argmax(&trace.logits) == first as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop,
}

/// Drops idioms shorter than `min_words` words, target included.
pub fn filter_length(entry: &IdiomEntry, min_words: usize) -> Verdict {
    if entry.word_count() < min_words {
        Verdict::Drop
    } else {
        Verdict::Keep
    }
}

/// Drops idioms whose target leaks out of a prompt fragment: a scorer hits
/// when any contiguous n-gram of the prompt (1 ≤ n ≤ n_max) completes to
/// the target's first token, and the idiom is dropped when at least
/// `majority` scorers hit.
pub fn filter_predictable(
    entry: &IdiomEntry,
    scorers: &[&dyn CompletionScorer],
    n_max: usize,
    majority: usize,
) -> Result<Verdict> {
    if scorers.is_empty() {
        return Err(DatasetError::NoScorers);
    }
    let words = &entry.prompt_words;
    let mut fragments = Vec::new();
    for n in 1..=n_max.min(words.len()) {
        for start in 0..=words.len() - n {
            fragments.push(words[start..start + n].join(" "));
        }
    }
    let mut hits = 0;
    for scorer in scorers {
        let mut hit = false;
        for fragment in &fragments {
            if scorer.predicts_target(fragment, &entry.target_word)? {
                hit = true;
                break;
            }
        }
        if hit {
            hits += 1;
            if hits >= majority {
                return Ok(Verdict::Drop);
            }
        }
    }
    Ok(Verdict::Keep)
}

pub fn default_majority(n_scorers: usize) -> usize {
    (0.75 * n_scorers as f64).ceil() as usize
}

/// Drops idioms whose target is too close to a prompt word: max cosine
/// similarity over in-vocabulary prompt words, out-of-vocabulary target
/// keeps the idiom.
pub fn filter_similarity(
    entry: &IdiomEntry,
    table: &WordEmbeddingTable,
    threshold: f64,
) -> Verdict {
    let target = strip_edge_punct(&entry.target_word);
    if table.get(target).is_none() {
        return Verdict::Keep;
    }
    for word in &entry.prompt_words {
        let word = strip_edge_punct(word);
        if let Some(sim) = table.cosine(word, target) {
            if sim > threshold {
                return Verdict::Drop;
            }
        }
    }
    Verdict::Keep
}

#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    pub min_words: usize,
    pub n_max: usize,
    /// None = ceil(0.75 * number of scorers).
    pub majority: Option<usize>,
    pub sim_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_words: 4,
            n_max: 4,
            majority: None,
            sim_threshold: 0.75,
        }
    }
}

/// Runs the full pipeline: length, then predictable, then similarity,
/// short-circuiting at the first filter that fires. Passing no scorers and
/// no table disables those stages.
pub fn build_idiomem(
    entries: &[IdiomEntry],
    scorers: &[&dyn CompletionScorer],
    table: Option<&WordEmbeddingTable>,
    config: &FilterConfig,
) -> Result<(Vec<IdiomEntry>, FilterReport)> {
    let majority = config.majority.unwrap_or(default_majority(scorers.len()));
    let mut kept = Vec::new();
    let mut report = FilterReport::default();
    for entry in entries {
        let dropped_by = if filter_length(entry, config.min_words) == Verdict::Drop {
            Some(FilterKind::Length)
        } else if !scorers.is_empty()
            && filter_predictable(entry, scorers, config.n_max, majority)? == Verdict::Drop
        {
            Some(FilterKind::Predictable)
        } else {
            match table {
                Some(t) if filter_similarity(entry, t, config.sim_threshold) == Verdict::Drop => {
                    Some(FilterKind::Similarity)
                }
                _ => None,
            }
        };
        report.rows.push(ReportRow {
            idiom: entry.full_text(),
            source: entry.source,
            dropped_by,
        });
        if dropped_by.is_none() {
            kept.push(entry.clone());
        }
    }
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Source;
    use std::io::Write;

    fn idiom(text: &str) -> IdiomEntry {
        let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let (target, prompt) = words.split_last().unwrap();
        IdiomEntry {
            prompt_words: prompt.to_vec(),
            target_word: target.clone(),
            source: Source::Magpie,
        }
    }

    struct FixedScorer {
        /// fragments that complete to the paired target
        hits: Vec<(String, String)>,
    }

    impl CompletionScorer for FixedScorer {
        fn name(&self) -> &str {
            "fixed"
        }
        fn predicts_target(&self, fragment: &str, target: &str) -> Result<bool> {
            Ok(self
                .hits
                .iter()
                .any(|(f, t)| f == fragment && t == target))
        }
    }

    fn table(lines: &[&str]) -> WordEmbeddingTable {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        WordEmbeddingTable::load(&path).unwrap()
    }

    #[test]
    fn length_threshold_counts_target() {
        assert_eq!(filter_length(&idiom("break a leg"), 4), Verdict::Drop);
        assert_eq!(
            filter_length(&idiom("think outside the box"), 4),
            Verdict::Keep
        );
        assert_eq!(filter_length(&idiom("break a leg"), 0), Verdict::Keep);
    }

    #[test]
    fn predictable_scans_all_ngrams() {
        let scorer = FixedScorer {
            hits: vec![("the drawing".into(), "board".into())],
        };
        let entry = idiom("go back to the drawing board");
        let v = filter_predictable(&entry, &[&scorer], 4, 1).unwrap();
        assert_eq!(v, Verdict::Drop);
        // n_max = 1 misses the bigram
        let v = filter_predictable(&entry, &[&scorer], 1, 1).unwrap();
        assert_eq!(v, Verdict::Keep);
    }

    #[test]
    fn predictable_respects_majority() {
        let hit = FixedScorer {
            hits: vec![("drawing".into(), "board".into())],
        };
        let miss = FixedScorer { hits: vec![] };
        let entry = idiom("go back to the drawing board");
        let one_of_two =
            filter_predictable(&entry, &[&hit, &miss], 4, 2).unwrap();
        assert_eq!(one_of_two, Verdict::Keep);
        let one_of_one = filter_predictable(&entry, &[&hit], 4, 1).unwrap();
        assert_eq!(one_of_one, Verdict::Drop);
        assert!(filter_predictable(&entry, &[], 4, 1).is_err());
    }

    #[test]
    fn majority_matches_three_of_four() {
        assert_eq!(default_majority(4), 3);
        assert_eq!(default_majority(2), 2);
        assert_eq!(default_majority(1), 1);
    }

    #[test]
    fn similarity_drops_verbatim_repeat() {
        let t = table(&["boys 1.0 0.0", "will 0.0 1.0", "be 0.5 0.5"]);
        let v = filter_similarity(&idiom("boys will be boys"), &t, 0.75);
        assert_eq!(v, Verdict::Drop);
    }

    #[test]
    fn similarity_keeps_oov_target() {
        let t = table(&["think 1.0 0.0", "outside 0.0 1.0", "the 0.5 0.5"]);
        let v = filter_similarity(&idiom("think outside the box"), &t, 0.75);
        assert_eq!(v, Verdict::Keep);
    }

    #[test]
    fn similarity_near_synonym_drops() {
        let t = table(&["sofa 0.9 0.1 0.0", "couch 0.89 0.12 0.01", "a 0.0 0.0 1.0"]);
        let v = filter_similarity(&idiom("sitting on a couch sofa"), &t, 0.75);
        assert_eq!(v, Verdict::Drop);
    }

    #[test]
    fn pipeline_short_circuits_in_order() {
        // "take it or leave it": predictable fires before similarity gets
        // a chance, so attribution is unique
        let scorer = FixedScorer {
            hits: vec![("leave".into(), "it".into())],
        };
        let t = table(&["it 1.0 0.0", "take 0.0 1.0", "or 0.3 0.3", "leave 0.2 0.8"]);
        let entries = vec![
            idiom("break a leg"),
            idiom("take it or leave it"),
            idiom("think outside the box"),
        ];
        let (kept, report) =
            build_idiomem(&entries, &[&scorer], Some(&t), &FilterConfig::default()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].target_word, "box");
        assert_eq!(
            report.row_for("break a leg").unwrap().dropped_by,
            Some(FilterKind::Length)
        );
        assert_eq!(
            report.row_for("take it or leave it").unwrap().dropped_by,
            Some(FilterKind::Predictable)
        );
        assert_eq!(report.kept() + report.dropped_by(FilterKind::Length)
            + report.dropped_by(FilterKind::Predictable)
            + report.dropped_by(FilterKind::Similarity), report.total());
    }

    #[test]
    fn pipeline_is_a_fixed_point_on_its_output() {
        let scorer = FixedScorer {
            hits: vec![("leave".into(), "it".into())],
        };
        let t = table(&["it 1.0 0.0", "boys 0.0 1.0"]);
        let entries = vec![
            idiom("break a leg"),
            idiom("take it or leave it"),
            idiom("boys will be boys"),
            idiom("think outside the box"),
            idiom("make a mountain out of a molehill"),
        ];
        let cfg = FilterConfig::default();
        let (kept, _) = build_idiomem(&entries, &[&scorer], Some(&t), &cfg).unwrap();
        let (kept2, report2) = build_idiomem(&kept, &[&scorer], Some(&t), &cfg).unwrap();
        assert_eq!(kept, kept2);
        assert_eq!(report2.kept(), report2.total());
    }

    #[test]
    fn disabled_filters_keep_everything() {
        let entries = vec![idiom("break a leg"), idiom("boys will be boys")];
        let cfg = FilterConfig {
            min_words: 0,
            ..FilterConfig::default()
        };
        let (kept, _) = build_idiomem(&entries, &[], None, &cfg).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let (kept, report) =
            build_idiomem(&[], &[], None, &FilterConfig::default()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.total(), 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        const BANK: &[&str] = &["alpha", "beta", "gamma", "magic", "word", "stone", "river"];

        fn idiom_strategy() -> impl Strategy<Value = IdiomEntry> {
            prop::collection::vec(prop::sample::select(BANK), 2..7).prop_map(|words| {
                let (target, prompt) = words.split_last().unwrap();
                IdiomEntry {
                    prompt_words: prompt.iter().map(|w| w.to_string()).collect(),
                    target_word: target.to_string(),
                    source: Source::Magpie,
                }
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn pipeline_partitions_and_is_idempotent(
                entries in prop::collection::vec(idiom_strategy(), 0..24)
            ) {
                let scorer = FixedScorer {
                    hits: vec![("magic".into(), "word".into())],
                };
                let t = table(&["alpha 1.0 0.0", "beta 0.9 0.1", "gamma 0.0 1.0"]);
                let cfg = FilterConfig::default();
                let (kept, report) =
                    build_idiomem(&entries, &[&scorer], Some(&t), &cfg).unwrap();
                prop_assert_eq!(report.total(), entries.len());
                prop_assert_eq!(report.kept(), kept.len());
                let dropped: usize = [
                    FilterKind::Length,
                    FilterKind::Predictable,
                    FilterKind::Similarity,
                ]
                .iter()
                .map(|f| report.dropped_by(*f))
                .sum();
                prop_assert_eq!(report.kept() + dropped, report.total());
                // filtered output is a fixed point of the pipeline
                let (kept2, report2) =
                    build_idiomem(&kept, &[&scorer], Some(&t), &cfg).unwrap();
                prop_assert_eq!(&kept, &kept2);
                prop_assert_eq!(report2.kept(), report2.total());
            }
        }
    }
}
