//! JSONL loaders for idioms and cloze facts.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{DatasetError, Result};
use crate::types::{FactEntry, IdiomEntry, Source};

#[derive(Deserialize)]
struct RawIdiom {
    prompt: String,
    target: String,
    source: String,
}

fn parse_source(s: &str) -> Source {
    match s {
        "magpie" => Source::Magpie,
        "epie" => Source::Epie,
        "lidioms" => Source::Lidioms,
        "ef" => Source::Ef,
        _ => Source::Other,
    }
}

/// Loads idioms from one or more JSONL files, whitespace-tokenizing the
/// prompt and deduplicating on the case-folded full idiom. The first
/// occurrence wins, so file order decides source attribution for idioms
/// shared between sources.
pub fn load_idioms(paths: &[&Path]) -> Result<Vec<IdiomEntry>> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DatasetError::io(path.display().to_string(), e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawIdiom =
                serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            let prompt_words: Vec<String> =
                raw.prompt.split_whitespace().map(str::to_string).collect();
            let target_word = raw.target.trim().to_string();
            if prompt_words.is_empty() || target_word.is_empty() {
                return Err(DatasetError::Malformed {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: "empty prompt or target".into(),
                });
            }
            let entry = IdiomEntry {
                prompt_words,
                target_word,
                source: parse_source(&raw.source),
            };
            let key = entry.full_text().to_lowercase();
            if seen.insert(key) {
                out.push(entry);
            }
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawFact {
    statement: String,
    #[serde(default)]
    answer: serde_json::Value,
    #[serde(default)]
    relation: String,
}

const BLANK: &str = "___";

/// Loads end-blank cloze statements. A statement qualifies when exactly one
/// blank occurs and nothing but closing punctuation follows it, and when it
/// carries exactly one gold answer; everything else is skipped, not an
/// error. Malformed JSON is an error.
pub fn load_facts(path: &Path) -> Result<Vec<FactEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFact = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let answer = match &raw.answer {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Array(items) => match items.as_slice() {
                [serde_json::Value::String(s)] => Some(s.clone()),
                _ => None,
            },
            _ => None,
        };
        let Some(answer) = answer else { continue };
        if answer.trim().is_empty() {
            continue;
        }
        let Some(start) = raw.statement.find(BLANK) else {
            continue;
        };
        let after = &raw.statement[start + BLANK.len()..];
        let end_blank = after
            .chars()
            .all(|c| c.is_whitespace() || matches!(c, '.' | '!' | '?'));
        let single = raw.statement.matches(BLANK).count() == 1;
        if !end_blank || !single {
            continue;
        }
        let prompt = raw.statement[..start].trim_end().to_string();
        if prompt.is_empty() {
            continue;
        }
        out.push(FactEntry {
            prompt,
            target: answer.trim().to_string(),
            relation: raw.relation,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    #[test]
    fn idioms_load_split_and_dedupe() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_lines(
            dir.path(),
            "a.jsonl",
            &[
                r#"{"prompt": "think outside the", "target": "box", "source": "magpie"}"#,
                r#"{"prompt": "Think Outside The", "target": "Box", "source": "epie"}"#,
            ],
        );
        let b = write_lines(
            dir.path(),
            "b.jsonl",
            &[r#"{"prompt": "think outside the", "target": "box", "source": "lidioms"}"#],
        );
        let entries = load_idioms(&[&a, &b]).unwrap();
        // lines 2 and 3 are case-folded dupes of line 1; first wins
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].source, Source::Magpie);
        assert_eq!(entries[0].prompt_words, ["think", "outside", "the"]);
        assert_eq!(entries[0].target_word, "box");
    }

    #[test]
    fn distinct_idioms_from_later_files_survive() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_lines(
            dir.path(),
            "a.jsonl",
            &[r#"{"prompt": "think outside the", "target": "box", "source": "magpie"}"#],
        );
        let b = write_lines(
            dir.path(),
            "b.jsonl",
            &[r#"{"prompt": "break the", "target": "ice", "source": "ef"}"#],
        );
        let entries = load_idioms(&[&a, &b]).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].source, Source::Ef);
    }

    #[test]
    fn malformed_idiom_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), "bad.jsonl", &[r#"{"prompt": "x"}"#]);
        let err = load_idioms(&[&p]).unwrap_err();
        assert!(err.to_string().contains("bad.jsonl:1"));
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), "empty.jsonl", &[]);
        assert!(load_idioms(&[&p]).unwrap().is_empty());
    }

    #[test]
    fn facts_keep_only_end_blank_single_answer() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(
            dir.path(),
            "facts.jsonl",
            &[
                r#"{"statement": "The capital of Francia is ___.", "answer": "Lutetia", "relation": "capital"}"#,
                r#"{"statement": "Gordon Scholes is a member of the ___ political party.", "answer": "Labor", "relation": "party"}"#,
                r#"{"statement": "Two blanks ___ and ___.", "answer": "x", "relation": "r"}"#,
                r#"{"statement": "Multi answer ends with ___.", "answer": ["a", "b"], "relation": "r"}"#,
                r#"{"statement": "Single array answer ends with ___", "answer": ["only"], "relation": "r"}"#,
                r#"{"statement": "No blank at all.", "answer": "x", "relation": "r"}"#,
            ],
        );
        let facts = load_facts(&p).unwrap();
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[0].prompt, "The capital of Francia is");
        assert_eq!(facts[0].target, "Lutetia");
        assert_eq!(facts[1].target, "only");
    }
}
