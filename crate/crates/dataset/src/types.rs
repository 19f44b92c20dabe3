use serde::{Deserialize, Serialize};

/// Source corpus an idiom was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Magpie,
    Epie,
    Lidioms,
    Ef,
    Other,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Magpie => "magpie",
            Source::Epie => "epie",
            Source::Lidioms => "lidioms",
            Source::Ef => "ef",
            Source::Other => "other",
        })
    }
}

/// An idiom split into the prompt (all words but the last) and the target
/// (the final word).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdiomEntry {
    pub prompt_words: Vec<String>,
    pub target_word: String,
    pub source: Source,
}

impl IdiomEntry {
    pub fn full_text(&self) -> String {
        let mut s = self.prompt_words.join(" ");
        s.push(' ');
        s.push_str(&self.target_word);
        s
    }

    pub fn prompt_text(&self) -> String {
        self.prompt_words.join(" ")
    }

    pub fn word_count(&self) -> usize {
        self.prompt_words.len() + 1
    }
}

/// A cloze statement whose blank sits at the end, reduced to the text
/// before the blank and its single gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactEntry {
    pub prompt: String,
    pub target: String,
    pub relation: String,
}

/// The filter that removed a dropped idiom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Length,
    Predictable,
    Similarity,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Length => "length",
            FilterKind::Predictable => "predictable",
            FilterKind::Similarity => "similarity",
        })
    }
}

/// Per-idiom outcome of the filter pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub idiom: String,
    pub source: Source,
    /// None = kept; Some(f) = dropped by exactly this filter.
    pub dropped_by: Option<FilterKind>,
}

#[derive(Debug, Clone, Default)]
pub struct FilterReport {
    pub rows: Vec<ReportRow>,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.rows.len()
    }

    pub fn kept(&self) -> usize {
        self.rows.iter().filter(|r| r.dropped_by.is_none()).count()
    }

    pub fn dropped_by(&self, filter: FilterKind) -> usize {
        self.rows
            .iter()
            .filter(|r| r.dropped_by == Some(filter))
            .count()
    }

    /// Fraction of the input dropped by the given filter.
    pub fn drop_fraction(&self, filter: FilterKind) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.dropped_by(filter) as f64 / self.total() as f64
    }

    pub fn row_for(&self, idiom: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.idiom == idiom)
    }

    /// One row per audited idiom: idiom,source,verdict,filter. The filter
    /// column is empty for kept rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["idiom", "source", "verdict", "filter"])?;
        for row in &self.rows {
            let (verdict, filter) = match row.dropped_by {
                Some(kind) => ("dropped", kind.to_string()),
                None => ("kept", String::new()),
            };
            wtr.write_record([
                row.idiom.as_str(),
                &row.source.to_string(),
                verdict,
                &filter,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
