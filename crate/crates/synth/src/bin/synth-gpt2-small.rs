//! Regenerates the synthetic GPT-2-small fidelity checkpoint.
//! Usage: synth-gpt2-small <out-dir> <vocab.json> <merges.txt>

use std::path::PathBuf;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 3 {
        eprintln!("usage: synth-gpt2-small <out-dir> <vocab.json> <merges.txt>");
        std::process::exit(2);
    }
    let out = PathBuf::from(&args[0]);
    let vocab = PathBuf::from(&args[1]);
    let merges = PathBuf::from(&args[2]);
    if let Err(e) = memlens_synth::gpt2::ensure_gpt2_small(&out, &vocab, &merges) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("checkpoint ready at {}", out.display());
}
