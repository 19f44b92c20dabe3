//! Builds (or rebuilds) the probe/scorer model pair and prints its
//! verification summary.

use std::path::Path;

use memlens_synth::memorizer::build_model_pair;

fn main() {
    let root = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "work/pair".to_string());
    let (paths, stats) = build_model_pair(Path::new(&root)).expect("model pair build");
    println!("probe:  {}", paths.probe.display());
    println!("scorer: {}", paths.scorer.display());
    println!("{stats}");
}
