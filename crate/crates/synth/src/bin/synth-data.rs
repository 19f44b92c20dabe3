//! Regenerates the committed corpus under data/.

use memlens_synth::bpe::build_tokenizer;
use memlens_synth::data::{generate, Route, DATA_SEED};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data".to_string());
    let ds = generate(DATA_SEED);
    ds.write_all(std::path::Path::new(&out)).expect("write data files");
    let kept = ds.idioms.iter().filter(|i| i.is_kept()).count();
    let mem = ds.idioms.iter().filter(|i| i.is_memorized()).count();
    let length = ds
        .idioms
        .iter()
        .filter(|i| i.route == Route::DropLength)
        .count();
    println!(
        "idioms: {} raw, {} kept, {} memorized, {} length-dropped",
        ds.idioms.len(),
        kept,
        mem,
        length
    );
    println!("facts: {}", ds.facts.len());
    println!("wiki docs: {}", ds.wiki_docs.len());
    println!("embedding rows: {}", ds.embeddings.len());
    let tok = build_tokenizer(&ds);
    println!("tokenizer: {} tokens, {} merges", tok.vocab.len(), tok.merges.len());
}
