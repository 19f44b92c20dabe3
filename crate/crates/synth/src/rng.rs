//! SplitMix64: closed-form keyed generator. Value i of a stream is a pure
//! function of (seed, i), so tensors can be rebuilt in any order or
//! language and still match bit for bit.

const GAMMA: u64 = 0x9E3779B97F4A7C15;

pub fn splitmix64(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add((i.wrapping_add(1)).wrapping_mul(GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) with 53-bit resolution.
pub fn unit_f64(seed: u64, i: u64) -> f64 {
    (splitmix64(seed, i) >> 11) as f64 / (1u64 << 53) as f64
}

/// Uniform in [-scale, scale).
pub fn symmetric_f32(seed: u64, i: u64, scale: f32) -> f32 {
    ((unit_f64(seed, i) * 2.0 - 1.0) as f32) * scale
}

/// Stable sub-seed for a named tensor within a model seed.
pub fn tensor_seed(model_seed: u64, name: &str) -> u64 {
    let mut h = model_seed ^ 0xCBF29CE484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_is_order_independent() {
        let a: Vec<u64> = (0..8).map(|i| splitmix64(42, i)).collect();
        let b: Vec<u64> = (0..8).rev().map(|i| splitmix64(42, i)).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn unit_values_stay_in_range() {
        for i in 0..1000 {
            let v = unit_f64(7, i);
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn tensor_seeds_differ_by_name() {
        assert_ne!(tensor_seed(1, "wte.weight"), tensor_seed(1, "wpe.weight"));
        assert_eq!(tensor_seed(1, "wte.weight"), tensor_seed(1, "wte.weight"));
    }
}
