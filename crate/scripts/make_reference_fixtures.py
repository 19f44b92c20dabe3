#!/usr/bin/env python3
"""Capture reference outputs for the engine fidelity tests.

Loads the synthetic GPT-2-small checkpoint with torch/transformers (the
reference implementation), runs the fixed fidelity prompts, and writes:

  fixtures/engine/reference_logits.json   top-1/top-5 ids + metadata
  fixtures/engine/reference_logits.bin    final-position logits, f32 LE,
                                          one row of vocab_size per prompt
  fixtures/engine/tokenizer_cases.json    encode battery for the tokenizer

Run from the repo root after generating the checkpoint:

  cargo run --release -p memlens-synth --bin synth-gpt2-small -- \
      work/gpt2-small-synth fixtures/tokenizer/gpt2-vocab.json \
      fixtures/tokenizer/gpt2-merges.txt
  python3 scripts/make_reference_fixtures.py work/gpt2-small-synth
"""

import hashlib
import json
import struct
import sys
from pathlib import Path

import torch
from safetensors.torch import load_file
from tokenizers import Tokenizer
from tokenizers.models import BPE
from tokenizers.pre_tokenizers import ByteLevel
from transformers import GPT2Config, GPT2LMHeadModel

PROMPTS = [
    "think outside the",
    "The quick brown fox jumps over the lazy",
    "Actions speak louder than words, and silence",
]

TOKENIZER_CASES = [
    "Hello world",
    "think outside the box",
    "  leading spaces",
    "trailing spaces  ",
    "don't can't won't it's I'll we're you've I'm he'd",
    "CamelCase and UPPER and lower",
    "numbers 123 456789 and mixed a1b2",
    "punctuation!?.,;:()[]{}\"'`~@#$%^&*-_=+<>/\\|",
    "tabs\tand\nnewlines\r\nmixed",
    "unicode: naïve café résumé 北京 🙂 emoji",
    "a  b   c    d",
    "word",
    " ",
    "   ",
    "e.g. etc. i.e. vs.",
    "hyphen-ated words co-operate",
    "1,000,000 dollars or $5.99",
    "quote \"inside\" and 'single'",
    "ends with space ",
    "ends with spaces   ",
    "\n\nparagraph breaks\n\n",
    "ALLCAPS SENTENCE HERE",
    "snake_case_identifiers and __dunder__",
    "http://example.com/path?q=1&r=2",
    "mixed   whitespace \t between",
    "Ümlauts and ß characters",
    "ellipsis... and dashes - between",
    "semi;colons and co:lons",
    "The 1990s saw 2.5% growth",
    "x",
]


def main() -> None:
    model_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "work/gpt2-small-synth")
    out_dir = Path("fixtures/engine")
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(model_dir / "config.json") as f:
        cfg = json.load(f)
    config = GPT2Config(
        vocab_size=cfg["vocab_size"],
        n_positions=cfg["max_positions"],
        n_embd=cfg["d_model"],
        n_layer=cfg["n_layers"],
        n_head=cfg["n_heads"],
        n_inner=cfg["d_ff"],
        activation_function="gelu_new",
        layer_norm_epsilon=1e-5,
    )
    model = GPT2LMHeadModel(config)
    raw = load_file(str(model_dir / "model.safetensors"))
    state = {f"transformer.{k}": v for k, v in raw.items()}
    state["lm_head.weight"] = raw["wte.weight"]
    missing, unexpected = model.load_state_dict(state, strict=False)
    # only non-persistent attention mask buffers may be absent
    assert not unexpected, unexpected
    assert all(".attn." in k for k in missing), missing
    model.eval()

    tok = Tokenizer(
        BPE.from_file(
            str(model_dir / "vocab.json"),
            str(model_dir / "merges.txt"),
        )
    )
    tok.pre_tokenizer = ByteLevel(add_prefix_space=False)

    records = []
    blob = bytearray()
    with torch.no_grad():
        for prompt in PROMPTS:
            ids = tok.encode(prompt).ids
            out = model(torch.tensor([ids]))
            logits = out.logits[0, -1].float()
            top = torch.argsort(logits, descending=True, stable=True)[:5].tolist()
            records.append(
                {
                    "prompt": prompt,
                    "token_ids": ids,
                    "top1": top[0],
                    "top5": top,
                    "max_logit": float(logits.max()),
                    "min_logit": float(logits.min()),
                }
            )
            blob += b"".join(struct.pack("<f", v) for v in logits.tolist())

    bin_path = out_dir / "reference_logits.bin"
    bin_path.write_bytes(bytes(blob))
    meta = {
        "model_dir": str(model_dir),
        "vocab_size": cfg["vocab_size"],
        "logits_sha256": hashlib.sha256(bytes(blob)).hexdigest(),
        "torch": torch.__version__,
        "prompts": records,
    }
    (out_dir / "reference_logits.json").write_text(json.dumps(meta, indent=1))

    cases = [{"text": t, "ids": tok.encode(t).ids} for t in TOKENIZER_CASES]
    (out_dir / "tokenizer_cases.json").write_text(json.dumps(cases, indent=1))

    for r in records:
        print(r["prompt"], "->", r["top5"], f"max={r['max_logit']:.3f}")
    print("byte size:", len(blob), "sha256:", meta["logits_sha256"])


if __name__ == "__main__":
    main()
