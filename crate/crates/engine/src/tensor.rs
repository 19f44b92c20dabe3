//! Dense row-major f32 matrices and the small set of kernels the engine needs.
//!
//! Dot products accumulate in f64. This keeps a full forward pass bit-stable
//! regardless of how work is scheduled and costs little on modern CPUs.

use crate::error::{EngineError, Result};

/// Row-major matrix of f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Per-row Euclidean norms.
    pub fn row_norms(&self) -> Vec<f32> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt() as f32
            })
            .collect()
    }
}

/// Dot product with f64 accumulation.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += (*x as f64) * (*y as f64);
    }
    acc as f32
}

/// `out = x · w` for a row vector `x` (len = w.rows) against all columns of `w`.
///
/// `w` is stored input-major (rows = input dim, cols = output dim), matching
/// the GPT-2 checkpoint convention for projection weights.
pub fn vec_mat(x: &[f32], w: &Matrix, out: &mut [f32]) {
    assert_eq!(x.len(), w.rows, "vec_mat input dim");
    assert_eq!(out.len(), w.cols, "vec_mat output dim");
    let mut acc = vec![0.0f64; w.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let xi = xi as f64;
        let row = w.row(i);
        for (a, &wij) in acc.iter_mut().zip(row) {
            *a += xi * (wij as f64);
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

/// `out[r] = m.row(r) · x` — matrix acting on a column vector.
pub fn mat_vec(m: &Matrix, x: &[f32], out: &mut [f32]) {
    assert_eq!(x.len(), m.cols, "mat_vec input dim");
    assert_eq!(out.len(), m.rows, "mat_vec output dim");
    for r in 0..m.rows {
        out[r] = dot(m.row(r), x);
    }
}

/// Adds `b` into `a` elementwise.
#[inline]
pub fn add_assign(a: &mut [f32], b: &[f32]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += *y;
    }
}

///// Layer normalization: `gain ⊙ (x − μ)/√(σ² + ε) + bias`.
///
/// Statistics are computed in f64; epsilon matches the GPT-2 reference (1e-5).
pub fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32], out: &mut [f32]) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    for i in 0..x.len() {
        let norm = (x[i] as f64 - mean) * inv;
        out[i] = (norm * gain[i] as f64 + bias[i] as f64) as f32;
    }
}

/// Softmax over `x` in place, computed in f64 with max subtraction.
pub fn softmax_in_place(x: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    let mut buf: Vec<f64> = Vec::with_capacity(x.len());
    for &v in x.iter() {
        let e = ((v as f64) - max).exp();
        buf.push(e);
        sum += e;
    }
    for (o, e) in x.iter_mut().zip(buf) {
        *o = (e / sum) as f32;
    }
}

/// Checks that a slice has the expected length, reporting the offending name.
pub fn expect_len(name: &str, actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(EngineError::ShapeMismatch {
            name: name.to_string(),
            expected: vec![expected],
            actual: vec![actual],
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_mat_matches_naive() {
        let w = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = [1.0, -1.0, 0.5];
        let mut out = [0.0; 2];
        vec_mat(&x, &w, &mut out);
        // columns: (1,3,5) and (2,4,6)
        assert_eq!(out, [1.0 - 3.0 + 2.5, 2.0 - 4.0 + 3.0]);
    }

    #[test]
    fn layer_norm_zero_mean_unit_gain() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let gain = [1.0; 4];
        let bias = [0.0; 4];
        let mut out = [0.0; 4];
        layer_norm(&x, &gain, &bias, &mut out);
        let mean: f32 = out.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        let var: f32 = out.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = [2.0, 0.0, -1.0];
        softmax_in_place(&mut x);
        let s: f32 = x.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(x[0] > x[1] && x[1] > x[2]);
    }
}
