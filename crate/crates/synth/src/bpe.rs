//! Byte-pair tokenizer construction. Merge rules are trained on the
//! generated corpus the usual way, highest pair count first, then every
//! word the pipeline must see as a single token is completed by appending
//! the missing merges. Appended merges rank below all trained ones, so they
//! never change how an already-complete word encodes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::path::Path;

use memlens_engine::tokenizer::{byte_char_tables, pre_split};

use crate::data::DataSet;
use crate::words::WordBank;

const REQUIRED_WEIGHT: u64 = 50;
const MIN_PAIR_COUNT: u64 = 2;
const MAX_TRAINED_MERGES: usize = 8000;

/// Sentence-initial forms that appear bare, without the leading space.
const BARE_FORMS: &[&str] = &[
    "The", "A", "An", "In", "On", "It", "Most", "Many", "Some", "Every", "When", "Where",
    "There", "Near", "Under", "Over", "After", "Before", "make", "think", "there", "go", "take",
    "boys", "'s",
];

pub struct TokenizerFiles {
    /// Token strings in id order, byte-mapped alphabet.
    pub vocab: Vec<String>,
    pub merges: Vec<(String, String)>,
}

fn map_piece(piece: &str, table: &[char; 256]) -> String {
    piece.bytes().map(|b| table[b as usize]).collect()
}

/// Every surface form that must encode to exactly one token: the leading
/// space form of each inventory word, plus the bare sentence starters.
pub fn required_forms(bank: &WordBank) -> Vec<String> {
    let mut forms = BTreeSet::new();
    let space = |w: &str| format!(" {w}");
    for w in bank
        .rare
        .iter()
        .chain(bank.cues.iter())
        .chain(bank.cue_values.iter())
        .chain(bank.targets.iter())
        .chain(bank.names.iter())
        .chain(bank.capitals.iter())
        .chain(bank.rulers.iter())
    {
        forms.insert(space(w));
    }
    for (a, b) in &bank.synonym_pairs {
        forms.insert(space(a));
        forms.insert(space(b));
    }
    for w in WordBank::real_words() {
        forms.insert(space(w));
    }
    for w in BARE_FORMS {
        forms.insert((*w).to_string());
    }
    forms.into_iter().collect()
}

struct Trainer {
    words: Vec<Vec<String>>,
    weights: Vec<u64>,
    pair_counts: HashMap<(String, String), u64>,
    pair_words: HashMap<(String, String), BTreeSet<usize>>,
    heap: BinaryHeap<(u64, Reverse<(String, String)>)>,
}

impl Trainer {
    fn new(piece_counts: &BTreeMap<String, u64>) -> Self {
        let mut t = Trainer {
            words: Vec::new(),
            weights: Vec::new(),
            pair_counts: HashMap::new(),
            pair_words: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for (piece, &w) in piece_counts {
            let symbols: Vec<String> = piece.chars().map(|c| c.to_string()).collect();
            if symbols.len() < 2 {
                continue;
            }
            let idx = t.words.len();
            for win in symbols.windows(2) {
                let pair = (win[0].clone(), win[1].clone());
                *t.pair_counts.entry(pair.clone()).or_default() += w;
                t.pair_words.entry(pair).or_default().insert(idx);
            }
            t.words.push(symbols);
            t.weights.push(w);
        }
        for (pair, &c) in &t.pair_counts {
            t.heap.push((c, Reverse(pair.clone())));
        }
        t
    }

    fn pop_best(&mut self) -> Option<(String, String)> {
        while let Some((c, Reverse(pair))) = self.heap.pop() {
            if self.pair_counts.get(&pair) == Some(&c) {
                if c < MIN_PAIR_COUNT {
                    return None;
                }
                return Some(pair);
            }
        }
        None
    }

    fn bump(&mut self, pair: (String, String), delta: i64, word: usize) {
        let c = self.pair_counts.entry(pair.clone()).or_default();
        *c = (*c as i64 + delta) as u64;
        let c = *c;
        if delta > 0 {
            self.pair_words.entry(pair.clone()).or_default().insert(word);
            self.heap.push((c, Reverse(pair)));
        } else if c > 0 {
            self.heap.push((c, Reverse(pair)));
        }
    }

    fn apply(&mut self, best: &(String, String)) {
        let affected: Vec<usize> = self
            .pair_words
            .remove(best)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        self.pair_counts.remove(best);
        let merged_sym = format!("{}{}", best.0, best.1);
        for idx in affected {
            let old = self.words[idx].clone();
            let w = self.weights[idx];
            let mut new_word = Vec::with_capacity(old.len());
            let mut i = 0;
            let mut changed = false;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == best.0 && old[i + 1] == best.1 {
                    new_word.push(merged_sym.clone());
                    i += 2;
                    changed = true;
                } else {
                    new_word.push(old[i].clone());
                    i += 1;
                }
            }
            if !changed {
                continue;
            }
            for win in old.windows(2) {
                let pair = (win[0].clone(), win[1].clone());
                if pair != *best {
                    self.bump(pair, -(w as i64), idx);
                }
            }
            for win in new_word.windows(2) {
                let pair = (win[0].clone(), win[1].clone());
                self.bump(pair, w as i64, idx);
            }
            self.words[idx] = new_word;
        }
    }

    fn train(&mut self) -> Vec<(String, String)> {
        let mut merges = Vec::new();
        while merges.len() < MAX_TRAINED_MERGES {
            let Some(best) = self.pop_best() else { break };
            self.apply(&best);
            merges.push(best);
        }
        merges
    }
}

/// Mirror of the runtime merge application: lowest rank first, all
/// non-overlapping occurrences at once.
fn bpe_apply(ranks: &HashMap<(String, String), usize>, mapped: &str) -> Vec<String> {
    let mut word: Vec<String> = mapped.chars().map(|c| c.to_string()).collect();
    while word.len() >= 2 {
        let mut best: Option<(usize, (String, String))> = None;
        for win in word.windows(2) {
            let key = (win[0].clone(), win[1].clone());
            if let Some(&r) = ranks.get(&key) {
                if best.as_ref().map_or(true, |(br, _)| r < *br) {
                    best = Some((r, key));
                }
            }
        }
        let Some((_, (l, r))) = best else { break };
        let mut merged = Vec::with_capacity(word.len());
        let mut i = 0;
        while i < word.len() {
            if i + 1 < word.len() && word[i] == l && word[i + 1] == r {
                merged.push(format!("{l}{r}"));
                i += 2;
            } else {
                merged.push(word[i].clone());
                i += 1;
            }
        }
        word = merged;
    }
    word
}

pub fn build_tokenizer(ds: &DataSet) -> TokenizerFiles {
    let (table, _) = byte_char_tables();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    {
        let mut feed = |text: &str, w: u64| {
            for piece in pre_split(text) {
                *counts.entry(map_piece(&piece, &table)).or_default() += w;
            }
        };
        for doc in &ds.wiki_docs {
            feed(doc, 1);
        }
        for spec in &ds.idioms {
            feed(&spec.full_text(), 1);
        }
        for f in &ds.facts {
            feed(&format!("{} {}.", f.prompt, f.answer), 1);
        }
        for form in required_forms(&ds.bank) {
            feed(&form, REQUIRED_WEIGHT);
        }
    }

    let mut merges = Trainer::new(&counts).train();

    let mut ranks: HashMap<(String, String), usize> = merges
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, p)| (p, i))
        .collect();
    for form in required_forms(&ds.bank) {
        let mapped = map_piece(&form, &table);
        loop {
            let symbols = bpe_apply(&ranks, &mapped);
            if symbols.len() <= 1 {
                break;
            }
            let pair = (symbols[0].clone(), symbols[1].clone());
            ranks.insert(pair.clone(), merges.len());
            merges.push(pair);
        }
    }

    let mut vocab: Vec<String> = (0..=255u8).map(|b| table[b as usize].to_string()).collect();
    let mut present: BTreeSet<String> = vocab.iter().cloned().collect();
    for (l, r) in &merges {
        let s = format!("{l}{r}");
        if present.insert(s.clone()) {
            vocab.push(s);
        }
    }
    TokenizerFiles { vocab, merges }
}

impl TokenizerFiles {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let map: BTreeMap<&str, u32> = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        std::fs::write(
            dir.join("vocab.json"),
            serde_json::to_string(&map).expect("vocab serializes"),
        )?;
        let mut text = String::from("#version: 0.2\n");
        for (l, r) in &self.merges {
            text.push_str(l);
            text.push(' ');
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(dir.join("merges.txt"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use memlens_engine::Tokenizer;

    #[test]
    fn trained_tokenizer_loads_and_covers_required_words() {
        let ds = crate::data::generate(77);
        let files = build_tokenizer(&ds);
        let dir = tempfile::tempdir().unwrap();
        files.write(dir.path()).unwrap();
        let tok = Tokenizer::load(
            &dir.path().join("vocab.json"),
            &dir.path().join("merges.txt"),
        )
        .unwrap();
        assert_eq!(tok.vocab_size(), files.vocab.len());
        for form in required_forms(&ds.bank) {
            let ids = tok.encode(&form).unwrap();
            assert_eq!(ids.len(), 1, "`{form}` split into {} tokens", ids.len());
        }
        for spec in ds.idioms.iter().take(50) {
            let ids = tok.encode(&spec.prompt_text()).unwrap();
            assert!(!ids.is_empty());
            let back = tok.decode(&ids).unwrap();
            assert_eq!(back, spec.prompt_text());
        }
        let doc = &ds.wiki_docs[0];
        let back = tok.decode(&tok.encode(doc).unwrap()).unwrap();
        assert_eq!(&back, doc);
    }
}
