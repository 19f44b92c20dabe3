//! Length-matched control prompts drawn from a plain-text corpus.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DatasetError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WikiPrompt {
    pub prompt_words: Vec<String>,
    pub target_word: String,
}

impl WikiPrompt {
    pub fn prompt_text(&self) -> String {
        self.prompt_words.join(" ")
    }
}

/// Documents are blank-line separated; each document is a flat word list.
pub fn load_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::io(path.display().to_string(), e))?;
    Ok(split_documents(&text))
}

pub fn split_documents(text: &str) -> Vec<Vec<String>> {
    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.extend(line.split_whitespace().map(str::to_string));
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// Samples `n` prompts whose word lengths follow the empirical
/// distribution of `lengths`. Each draw picks a length from the multiset,
/// then a window uniformly over every (document, offset) position that
/// fits the window plus a one-word target. Windows are not reused.
pub fn sample_wiki_prompts(
    docs: &[Vec<String>],
    lengths: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<WikiPrompt>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if lengths.is_empty() {
        return Err(DatasetError::Invalid(
            "length multiset is empty".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = lengths[rng.gen_range(0..lengths.len())];
        if len == 0 {
            return Err(DatasetError::Invalid("zero-length prompt".to_string()));
        }
        let windows: Vec<(usize, usize)> = docs
            .iter()
            .enumerate()
            .flat_map(|(d, doc)| {
                // need len prompt words plus the target
                (0..doc.len().saturating_sub(len)).map(move |s| (d, s))
            })
            .filter(|&(d, s)| !used.contains(&(d, s, len)))
            .collect();
        if windows.is_empty() {
            return Err(DatasetError::CorpusExhausted { len });
        }
        let (d, s) = windows[rng.gen_range(0..windows.len())];
        used.insert((d, s, len));
        out.push(WikiPrompt {
            prompt_words: docs[d][s..s + len].to_vec(),
            target_word: docs[d][s + len].clone(),
        });
    }
    Ok(out)
}
