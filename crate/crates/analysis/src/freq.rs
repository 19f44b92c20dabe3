//! Corpus token frequencies over a model's own vocabulary.

/// Counts occurrences of each token id in a tokenized stream. Ids at or
/// beyond `vocab_size` panic: the stream must come from the same
/// tokenizer that defines the table.
pub fn token_counts(ids: &[u32], vocab_size: usize) -> Vec<u64> {
    let mut counts = vec![0_u64; vocab_size];
    for &id in ids {
        counts[id as usize] += 1;
    }
    counts
}

/// count / total per token; all zeros when the stream is empty.
pub fn token_frequencies(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Token ids of the `k` most frequent entries, ties to the lower id.
pub fn top_k(counts: &[u64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_stream_counts() {
        // "a a b" as ids 0 0 1
        let counts = token_counts(&[0, 0, 1], 3);
        assert_eq!(counts, [2, 1, 0]);
        let freq = token_frequencies(&counts);
        assert!((freq[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((freq[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(freq[2], 0.0);
    }

    #[test]
    fn counts_conserve_the_stream() {
        let ids = [3_u32, 1, 4, 1, 5, 1, 3];
        let counts = token_counts(&ids, 8);
        assert_eq!(counts.iter().sum::<u64>(), ids.len() as u64);
        let freq = token_frequencies(&counts);
        assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let a = token_counts(&[9, 2, 2, 7, 9, 9], 10);
        let b = token_counts(&[2, 9, 9, 9, 7, 2], 10);
        assert_eq!(a, b);
    }

    #[test]
    fn top_k_orders_by_count_then_id() {
        let counts = [5_u64, 9, 9, 1, 0];
        assert_eq!(top_k(&counts, 3), [1, 2, 0]);
        assert_eq!(top_k(&counts, 0), Vec::<usize>::new());
    }

    #[test]
    fn empty_stream_is_all_zero() {
        let freq = token_frequencies(&token_counts(&[], 4));
        assert_eq!(freq, [0.0; 4]);
    }
}
