//! Word embedding table in the plain GloVe text format: one line per word,
//! the word followed by its vector components, space-separated.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{DatasetError, Result};

pub struct WordEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl WordEmbeddingTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DatasetError::io(path.display().to_string(), e))?;
        let mut vectors = HashMap::new();
        let mut dim = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| DatasetError::Embedding(format!("line {}: empty", lineno + 1)))?
                .to_lowercase();
            let vec: Vec<f32> = parts
                .map(|p| {
                    p.parse::<f32>().map_err(|_| {
                        DatasetError::Embedding(format!(
                            "line {}: bad component `{p}`",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if vec.is_empty() {
                return Err(DatasetError::Embedding(format!(
                    "line {}: no components",
                    lineno + 1
                )));
            }
            if dim == 0 {
                dim = vec.len();
            } else if vec.len() != dim {
                return Err(DatasetError::Embedding(format!(
                    "line {}: dimension {} != {}",
                    lineno + 1,
                    vec.len(),
                    dim
                )));
            }
            vectors.insert(word, vec);
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Case-folded lookup.
    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Cosine similarity between two words; None if either is missing or
    /// has a zero vector.
    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let va = self.get(a)?;
        let vb = self.get(b)?;
        let mut dot = 0f64;
        let mut na = 0f64;
        let mut nb = 0f64;
        for (x, y) in va.iter().zip(vb) {
            dot += *x as f64 * *y as f64;
            na += *x as f64 * *x as f64;
            nb += *y as f64 * *y as f64;
        }
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        Some(dot / (na.sqrt() * nb.sqrt()))
    }
}

/// Strips punctuation from both edges of a word, the tokenization used for
/// embedding lookups and scorer fragments.
pub fn strip_edge_punct(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

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
    fn loads_and_looks_up_case_folded() {
        let t = table(&["Boys 1.0 0.0", "will 0.0 1.0"]);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("boys"), Some(&[1.0, 0.0][..]));
        assert_eq!(t.get("BOYS"), Some(&[1.0, 0.0][..]));
        assert!(t.get("girls").is_none());
    }

    #[test]
    fn cosine_of_identical_words_is_one() {
        let t = table(&["boys 0.5 0.5 0.1", "will 0.1 -0.4 0.2"]);
        assert!((t.cosine("boys", "boys").unwrap() - 1.0).abs() < 1e-12);
        assert!(t.cosine("boys", "will").unwrap() < 1.0);
        assert!(t.cosine("boys", "missing").is_none());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "a 1.0 2.0\nb 1.0\n").unwrap();
        assert!(WordEmbeddingTable::load(&path).is_err());
    }

    #[test]
    fn edge_punct_stripped() {
        assert_eq!(strip_edge_punct("boys,"), "boys");
        assert_eq!(strip_edge_punct("\"quoted\""), "quoted");
        assert_eq!(strip_edge_punct("co-op"), "co-op");
        assert_eq!(strip_edge_punct("..."), "");
    }
}
