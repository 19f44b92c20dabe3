//! Byte-level BPE tokenizer (GPT-2 convention).
//!
//! Text is pre-split by a hand-rolled equivalent of the GPT-2 pattern
//! `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`
//! (the lookahead rules out the regex crate), each piece's bytes are mapped
//! to printable stand-in characters, and merges are applied lowest rank
//! first until no adjacent pair remains in the merge table.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{EngineError, Result};

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

#[derive(Debug)]
pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    id_to_token: Vec<String>,
    ranks: HashMap<(String, String), usize>,
    byte_to_char: [char; 256],
    char_to_byte: HashMap<char, u8>,
}

/// The GPT-2 byte-to-printable mapping: printable latin-1 bytes map to
/// themselves, everything else to consecutive codepoints from U+0100.
/// The byte-to-char mapping vocab files are written in: printable bytes map
/// to themselves, the rest to consecutive codepoints from U+0100.
pub fn byte_char_tables() -> ([char; 256], HashMap<char, u8>) {
    let mut byte_to_char = ['\0'; 256];
    let mut taken = [false; 256];
    let printable = (0x21..=0x7e).chain(0xa1..=0xac).chain(0xae..=0xff);
    for b in printable {
        byte_to_char[b] = char::from_u32(b as u32).unwrap();
        taken[b] = true;
    }
    let mut next = 0u32;
    for b in 0..256 {
        if !taken[b] {
            byte_to_char[b] = char::from_u32(256 + next).unwrap();
            next += 1;
        }
    }
    let mut char_to_byte = HashMap::with_capacity(256);
    for (b, &c) in byte_to_char.iter().enumerate() {
        char_to_byte.insert(c, b as u8);
    }
    (byte_to_char, char_to_byte)
}

fn is_letter(c: char) -> bool {
    c.is_alphabetic() && !c.is_numeric()
}

fn is_digit(c: char) -> bool {
    c.is_numeric()
}

fn is_other(c: char) -> bool {
    !c.is_whitespace() && !is_letter(c) && !is_digit(c)
}

/// Splits text into pre-tokenization pieces. Concatenating the pieces
/// reproduces the input exactly.
pub fn pre_split(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < n {
        if chars[i] == '\'' {
            for suffix in CONTRACTIONS {
                let sc: Vec<char> = suffix.chars().collect();
                if i + sc.len() <= n && chars[i..i + sc.len()] == sc[..] {
                    out.push(suffix.to_string());
                    i += sc.len();
                    continue 'outer;
                }
            }
        }
        let c = chars[i];
        if c == ' ' && i + 1 < n && !chars[i + 1].is_whitespace() {
            let class: fn(char) -> bool = if is_letter(chars[i + 1]) {
                is_letter
            } else if is_digit(chars[i + 1]) {
                is_digit
            } else {
                is_other
            };
            let mut j = i + 2;
            while j < n && class(chars[j]) {
                j += 1;
            }
            out.push(chars[i..j].iter().collect());
            i = j;
        } else if is_letter(c) || is_digit(c) || is_other(c) {
            let class: fn(char) -> bool = if is_letter(c) {
                is_letter
            } else if is_digit(c) {
                is_digit
            } else {
                is_other
            };
            let mut j = i + 1;
            while j < n && class(chars[j]) {
                j += 1;
            }
            out.push(chars[i..j].iter().collect());
            i = j;
        } else {
            // whitespace run: if followed by a non-space char, the last
            // whitespace character is left for the next piece
            let mut j = i + 1;
            while j < n && chars[j].is_whitespace() {
                j += 1;
            }
            let end = if j < n && j - i > 1 { j - 1 } else { j };
            out.push(chars[i..end].iter().collect());
            i = end;
        }
    }
    out
}

impl Tokenizer {
    pub fn load(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab_text = std::fs::read_to_string(vocab_path)
            .map_err(|e| EngineError::io(&vocab_path.display().to_string(), e))?;
        let vocab: HashMap<String, u32> = serde_json::from_str(&vocab_text)
            .map_err(|e| EngineError::Tokenizer(format!("vocab parse: {e}")))?;

        let mut id_to_token = vec![String::new(); vocab.len()];
        let mut seen = vec![false; vocab.len()];
        for (token, &id) in &vocab {
            let idx = id as usize;
            if idx >= vocab.len() || seen[idx] {
                return Err(EngineError::Tokenizer(format!(
                    "vocab ids are not dense: token `{token}` has id {id} in a vocab of {}",
                    vocab.len()
                )));
            }
            seen[idx] = true;
            id_to_token[idx] = token.clone();
        }

        let merges_text = std::fs::read_to_string(merges_path)
            .map_err(|e| EngineError::io(&merges_path.display().to_string(), e))?;
        let mut ranks = HashMap::new();
        let mut rank = 0usize;
        // symbols reachable from single characters plus earlier merges
        let mut derivable: std::collections::HashSet<String> = std::collections::HashSet::new();
        for (lineno, line) in merges_text.lines().enumerate() {
            if line.is_empty() || (lineno == 0 && line.starts_with('#')) {
                continue;
            }
            let (left, right) = line.split_once(' ').ok_or_else(|| {
                EngineError::Tokenizer(format!("merges line {} is not a pair: `{line}`", lineno + 1))
            })?;
            for side in [left, right] {
                if side.chars().count() > 1 && !derivable.contains(side) {
                    return Err(EngineError::Tokenizer(format!(
                        "merge `{left} {right}` (line {}) references `{side}` before any merge produces it",
                        lineno + 1
                    )));
                }
            }
            let merged = format!("{left}{right}");
            if !vocab.contains_key(&merged) {
                return Err(EngineError::Tokenizer(format!(
                    "merge `{left} {right}` produces `{merged}` which is missing from the vocab"
                )));
            }
            derivable.insert(merged);
            ranks.insert((left.to_string(), right.to_string()), rank);
            rank += 1;
        }

        let (byte_to_char, char_to_byte) = byte_char_tables();
        Ok(Self {
            vocab,
            id_to_token,
            ranks,
            byte_to_char,
            char_to_byte,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for piece in pre_split(text) {
            let mapped: String = piece.bytes().map(|b| self.byte_to_char[b as usize]).collect();
            for part in self.bpe(&mapped) {
                match self.vocab.get(&part) {
                    Some(&id) => ids.push(id),
                    None => {
                        return Err(EngineError::Tokenizer(format!(
                            "piece `{piece}` reduced to `{part}` which is not in the vocab"
                        )))
                    }
                }
            }
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let token = self.token_str(id)?;
            for c in token.chars() {
                match self.char_to_byte.get(&c) {
                    Some(&b) => bytes.push(b),
                    // chars outside the byte mapping pass through verbatim
                    None => bytes.extend_from_slice(c.to_string().as_bytes()),
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// The raw vocab entry for an id (byte-mapped form, not display text).
    pub fn token_str(&self, id: u32) -> Result<&str> {
        self.id_to_token
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(EngineError::TokenOutOfRange {
                id,
                vocab_size: self.id_to_token.len(),
            })
    }

    /// Applies merges to one byte-mapped piece, lowest rank first, merging
    /// every non-overlapping occurrence left to right.
    fn bpe(&self, mapped: &str) -> Vec<String> {
        let mut word: Vec<String> = mapped.chars().map(|c| c.to_string()).collect();
        if word.len() < 2 {
            return word;
        }
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..word.len() - 1 {
                let key = (word[i].clone(), word[i + 1].clone());
                if let Some(&rank) = self.ranks.get(&key) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, target)) = best else { break };
            let (first, second) = (word[target].clone(), word[target + 1].clone());
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(word[i].clone());
                    i += 1;
                }
            }
            word = merged;
            if word.len() == 1 {
                break;
            }
        }
        word
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn pre_split_words_and_spaces() {
        assert_eq!(pre_split("Hello world"), vec!["Hello", " world"]);
        assert_eq!(pre_split("a  b"), vec!["a", " ", " b"]);
        assert_eq!(pre_split("tail  "), vec!["tail", "  "]);
        assert_eq!(pre_split("a\nb"), vec!["a", "\n", "b"]);
        assert_eq!(pre_split("x \ny"), vec!["x", " ", "\n", "y"]);
    }

    #[test]
    fn pre_split_contractions_and_classes() {
        assert_eq!(pre_split("don't"), vec!["don", "'t"]);
        assert_eq!(pre_split("we'll've"), vec!["we", "'ll", "'ve"]);
        assert_eq!(pre_split("it's 42%!"), vec!["it", "'s", " 42", "%!"]);
        assert_eq!(pre_split("x=y+1"), vec!["x", "=", "y", "+", "1"]);
        assert_eq!(pre_split(" 'd"), vec![" '", "d"]);
    }

    #[test]
    fn pre_split_is_lossless() {
        for text in [
            "  leading and trailing  ",
            "tabs\t\tand\nnewlines\r\n",
            "naïve café ñ 北京 🙂",
            "",
            " ",
            "'s",
        ] {
            assert_eq!(pre_split(text).concat(), text);
        }
    }

    fn tiny_tokenizer(dir: &Path) -> Tokenizer {
        // bytes for "low", "er", " low" under the byte mapping: space -> Ġ.
        // `l o` outranks anything involving Ġ, so " low" reaches Ġ+low and
        // needs the late `Ġ low` merge, not a Ġl/Ġlo chain.
        let vocab = serde_json::json!({
            "l": 0, "o": 1, "w": 2, "e": 3, "r": 4, "\u{120}": 5,
            "lo": 6, "low": 7, "er": 8, "\u{120}low": 9
        });
        let vocab_path = dir.join("vocab.json");
        std::fs::write(&vocab_path, vocab.to_string()).unwrap();
        let merges_path = dir.join("merges.txt");
        let mut f = std::fs::File::create(&merges_path).unwrap();
        writeln!(f, "#version: 0.2").unwrap();
        for line in ["l o", "lo w", "e r", "\u{120} low"] {
            writeln!(f, "{line}").unwrap();
        }
        Tokenizer::load(&vocab_path, &merges_path).unwrap()
    }

    #[test]
    fn encode_decode_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tok = tiny_tokenizer(dir.path());
        let ids = tok.encode("lower low").unwrap();
        assert_eq!(ids, vec![7, 8, 9]);
        assert_eq!(tok.decode(&ids).unwrap(), "lower low");
    }

    #[test]
    fn merge_order_is_by_rank() {
        let dir = tempfile::tempdir().unwrap();
        let tok = tiny_tokenizer(dir.path());
        // "low" must come out as one token, not l + ow
        assert_eq!(tok.encode("low").unwrap(), vec![7]);
        assert_eq!(tok.encode("er").unwrap(), vec![8]);
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let dir = tempfile::tempdir().unwrap();
        let tok = tiny_tokenizer(dir.path());
        match tok.decode(&[999]) {
            Err(EngineError::TokenOutOfRange { id, vocab_size }) => {
                assert_eq!(id, 999);
                assert_eq!(vocab_size, 10);
            }
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn non_dense_vocab_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vocab_path = dir.path().join("vocab.json");
        std::fs::write(&vocab_path, r#"{"a": 0, "b": 5}"#).unwrap();
        let merges_path = dir.path().join("merges.txt");
        std::fs::write(&merges_path, "#version: 0.2\n").unwrap();
        assert!(Tokenizer::load(&vocab_path, &merges_path).is_err());
    }

    #[test]
    fn merge_result_must_exist_in_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let vocab_path = dir.path().join("vocab.json");
        std::fs::write(&vocab_path, r#"{"a": 0, "b": 1}"#).unwrap();
        let merges_path = dir.path().join("merges.txt");
        std::fs::write(&merges_path, "#version: 0.2\na b\n").unwrap();
        let err = Tokenizer::load(&vocab_path, &merges_path).unwrap_err();
        assert!(err.to_string().contains("ab"));
    }

    #[test]
    fn merge_operand_must_be_derivable() {
        let dir = tempfile::tempdir().unwrap();
        let vocab_path = dir.path().join("vocab.json");
        std::fs::write(&vocab_path, r#"{"a": 0, "b": 1, "ab": 2, "abb": 3}"#).unwrap();
        let merges_path = dir.path().join("merges.txt");
        // `ab b` appears before anything produces `ab`
        std::fs::write(&merges_path, "#version: 0.2\nab b\na b\n").unwrap();
        let err = Tokenizer::load(&vocab_path, &merges_path).unwrap_err();
        assert!(err.to_string().contains("before any merge"));
        // correct order is accepted
        std::fs::write(&merges_path, "#version: 0.2\na b\nab b\n").unwrap();
        assert!(Tokenizer::load(&vocab_path, &merges_path).is_ok());
    }

    #[test]
    fn byte_mapping_is_a_bijection() {
        let (enc, dec) = byte_char_tables();
        assert_eq!(dec.len(), 256);
        for b in 0..=255u8 {
            assert_eq!(dec[&enc[b as usize]], b);
        }
        assert_eq!(enc[b' ' as usize], '\u{120}');
    }
}
