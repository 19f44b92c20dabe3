//! Compares the engine against reference outputs captured by
//! scripts/make_reference_fixtures.py (torch implementation of the same
//! architecture, identical weights).

use std::path::{Path, PathBuf};

use memlens_engine::{argmax, Model, Tokenizer};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn checkpoint() -> Model {
    let root = repo_root();
    let dir = root.join("work/gpt2-small-synth");
    memlens_synth::gpt2::ensure_gpt2_small(
        &dir,
        &root.join("fixtures/tokenizer/gpt2-vocab.json"),
        &root.join("fixtures/tokenizer/gpt2-merges.txt"),
    )
    .unwrap();
    Model::load(&dir).unwrap()
}

#[test]
fn tokenizer_matches_reference_battery() {
    let root = repo_root();
    let tok = Tokenizer::load(
        &root.join("fixtures/tokenizer/gpt2-vocab.json"),
        &root.join("fixtures/tokenizer/gpt2-merges.txt"),
    )
    .unwrap();
    let raw = std::fs::read_to_string(root.join("fixtures/engine/tokenizer_cases.json")).unwrap();
    let cases: Vec<serde_json::Value> = serde_json::from_str(&raw).unwrap();
    assert!(cases.len() >= 25);
    for case in cases {
        let text = case["text"].as_str().unwrap();
        let expect: Vec<u32> = case["ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as u32)
            .collect();
        let got = tok.encode(text).unwrap();
        assert_eq!(got, expect, "encode mismatch on {text:?}");
        // byte-level BPE decodes losslessly for valid UTF-8 input
        assert_eq!(tok.decode(&got).unwrap(), text, "decode mismatch on {text:?}");
    }
}

#[test]
fn known_gpt2_encodings() {
    let root = repo_root();
    let tok = Tokenizer::load(
        &root.join("fixtures/tokenizer/gpt2-vocab.json"),
        &root.join("fixtures/tokenizer/gpt2-merges.txt"),
    )
    .unwrap();
    assert_eq!(tok.encode("Hello world").unwrap(), vec![15496, 995]);
    assert_eq!(tok.encode("think outside the").unwrap(), vec![14925, 2354, 262]);
    assert_eq!(tok.vocab_size(), 50257);
}

#[test]
fn logits_and_top_tokens_match_reference() {
    let root = repo_root();
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("fixtures/engine/reference_logits.json")).unwrap(),
    )
    .unwrap();
    let blob = std::fs::read(root.join("fixtures/engine/reference_logits.bin")).unwrap();
    let vocab = meta["vocab_size"].as_u64().unwrap() as usize;
    let prompts = meta["prompts"].as_array().unwrap();
    assert_eq!(blob.len(), prompts.len() * vocab * 4);

    let model = checkpoint();
    for (pi, rec) in prompts.iter().enumerate() {
        let prompt = rec["prompt"].as_str().unwrap();
        let expect_ids: Vec<u32> = rec["token_ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as u32)
            .collect();
        let ids = model.encode(prompt).unwrap();
        assert_eq!(ids, expect_ids, "token ids for {prompt:?}");

        let started = std::time::Instant::now();
        let trace = model.trace(&ids).unwrap();
        assert!(
            started.elapsed().as_secs_f64() < 5.0,
            "forward pass took {:?}",
            started.elapsed()
        );

        let reference: Vec<f32> = blob[pi * vocab * 4..(pi + 1) * vocab * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut worst = 0f32;
        for (a, b) in trace.logits.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-3, "max logit deviation {worst} on {prompt:?}");

        let top1 = rec["top1"].as_u64().unwrap() as usize;
        assert_eq!(argmax(&trace.logits), top1, "top-1 for {prompt:?}");

        let mut order: Vec<usize> = (0..vocab).collect();
        order.sort_by(|&a, &b| trace.logits[b].total_cmp(&trace.logits[a]).then(a.cmp(&b)));
        let top5: Vec<u64> = order[..5].iter().map(|&i| i as u64).collect();
        let expect5: Vec<u64> = rec["top5"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .collect();
        assert_eq!(top5, expect5, "top-5 for {prompt:?}");
    }
}
