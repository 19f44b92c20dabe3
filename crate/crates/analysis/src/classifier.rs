//! L1-regularized logistic regression, fit by cyclic coordinate descent
//! with soft-thresholding, and a repeated random-split evaluator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    /// inverse regularization strength; the penalty is ||w||_1 / c
    pub c: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticL1 {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticL1 {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| x * w)
                .sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        self.decision(row) > 0.0
    }

    pub fn accuracy(&self, rows: &[Vec<f64>], labels: &[bool]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows
            .iter()
            .zip(labels)
            .filter(|(row, &y)| self.predict(row) == y)
            .count();
        hits as f64 / rows.len() as f64
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes C * sum_i log(1 + exp(-s_i f_i)) + ||w||_1 over (w, b), with
/// s in {-1,+1} and f = w.x + b; b is unpenalized. Each coordinate step is
/// a proximal update under the 1/4 curvature bound of the logistic loss,
/// so the objective never increases.
pub fn fit_l1_logistic(rows: &[Vec<f64>], labels: &[bool], cfg: &FitConfig) -> LogisticL1 {
    let n = rows.len();
    assert_eq!(n, labels.len());
    assert!(n > 0, "cannot fit on an empty set");
    let width = rows[0].len();
    let mut w = vec![0.0_f64; width];
    let mut b = 0.0_f64;
    // f_i maintained incrementally across coordinate updates
    let mut f = vec![0.0_f64; n];

    let lipschitz: Vec<f64> = (0..width)
        .map(|j| 0.25 * cfg.c * rows.iter().map(|r| r[j] * r[j]).sum::<f64>())
        .collect();
    let l_b = 0.25 * cfg.c * n as f64;

    for _ in 0..cfg.max_sweeps {
        let mut max_step = 0.0_f64;
        for j in 0..width {
            if lipschitz[j] == 0.0 {
                continue;
            }
            let mut grad = 0.0;
            for i in 0..n {
                let y = if labels[i] { 1.0 } else { 0.0 };
                grad += (sigmoid(f[i]) - y) * rows[i][j];
            }
            grad *= cfg.c;
            let new = soft_threshold(w[j] - grad / lipschitz[j], 1.0 / lipschitz[j]);
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                for i in 0..n {
                    f[i] += delta * rows[i][j];
                }
                max_step = max_step.max(delta.abs());
            }
        }
        let mut grad_b = 0.0;
        for i in 0..n {
            let y = if labels[i] { 1.0 } else { 0.0 };
            grad_b += sigmoid(f[i]) - y;
        }
        grad_b *= cfg.c;
        let delta_b = -grad_b / l_b;
        if delta_b != 0.0 {
            b += delta_b;
            for fi in f.iter_mut() {
                *fi += delta_b;
            }
            max_step = max_step.max(delta_b.abs());
        }
        if max_step < cfg.tol {
            break;
        }
    }
    LogisticL1 {
        weights: w,
        intercept: b,
    }
}

/// Per-column affine map fitted on the train split and reused on test.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len().max(1) as f64;
        let width = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; width];
        for r in rows {
            for j in 0..width {
                let d = r[j] - mean[j];
                var[j] += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, &v)| (v - self.mean[j]) / self.scale[j])
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CVResult {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub n_folds: usize,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CVError {
    #[error("need at least 2 examples of each class, got {pos} positive / {neg} negative")]
    TooFewExamples { pos: usize, neg: usize },
    #[error("could not draw a split with both classes on both sides after {retries} tries")]
    DegenerateSplits { retries: usize },
}

const MAX_RETRIES: u64 = 32;

/// Repeated seeded random splits: shuffle, cut at `train_frac`, standardize
/// on the train side, fit, then score on a test side balanced by
/// subsampling its larger class. A split that strands a class on one side
/// is redrawn from a fresh substream.
pub fn train_eval_classifier(
    x: &FeatureMatrix,
    folds: usize,
    train_frac: f64,
    seed: u64,
    cfg: &FitConfig,
) -> Result<CVResult, CVError> {
    let n = x.len();
    let pos = x.labels.iter().filter(|&&y| y).count();
    let neg = n - pos;
    if pos < 2 || neg < 2 {
        return Err(CVError::TooFewExamples { pos, neg });
    }
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);

    let mut accs = Vec::with_capacity(folds);
    for fold in 0..folds as u64 {
        let mut acc = None;
        for retry in 0..MAX_RETRIES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(fold * MAX_RETRIES + retry);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (train_idx, test_idx) = idx.split_at(n_train);

            let has_both = |ids: &[usize]| {
                ids.iter().any(|&i| x.labels[i]) && ids.iter().any(|&i| !x.labels[i])
            };
            if !has_both(train_idx) || !has_both(test_idx) {
                continue;
            }

            let mut test_pos: Vec<usize> =
                test_idx.iter().copied().filter(|&i| x.labels[i]).collect();
            let mut test_neg: Vec<usize> =
                test_idx.iter().copied().filter(|&i| !x.labels[i]).collect();
            test_pos.shuffle(&mut rng);
            test_neg.shuffle(&mut rng);
            let m = test_pos.len().min(test_neg.len());
            test_pos.truncate(m);
            test_neg.truncate(m);

            let gather = |ids: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
                (
                    ids.iter().map(|&i| x.rows[i].clone()).collect(),
                    ids.iter().map(|&i| x.labels[i]).collect(),
                )
            };
            let (train_rows, train_labels) = gather(train_idx);
            let balanced: Vec<usize> = test_pos.into_iter().chain(test_neg).collect();
            let (test_rows, test_labels) = gather(&balanced);

            let std = Standardizer::fit(&train_rows);
            let model = fit_l1_logistic(&std.apply(&train_rows), &train_labels, cfg);
            acc = Some(model.accuracy(&std.apply(&test_rows), &test_labels));
            break;
        }
        match acc {
            Some(a) => accs.push(a),
            None => {
                return Err(CVError::DegenerateSplits {
                    retries: MAX_RETRIES as usize,
                })
            }
        }
    }

    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(CVResult {
        mean_accuracy: mean,
        std_accuracy: std,
        n_folds: accs.len(),
        fold_accuracies: accs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSpec;
    use rand::Rng;

    fn matrix(rows: Vec<Vec<f64>>, labels: Vec<bool>) -> FeatureMatrix {
        let ids = (0..rows.len()).map(|i| format!("e{i:04}")).collect();
        FeatureMatrix {
            spec: FeatureSpec::ProbsAllLayers,
            example_ids: ids,
            rows,
            labels,
        }
    }

    fn two_clusters(n_per: usize, sep: f64, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let y = i % 2 == 0;
            let center = if y { sep } else { -sep };
            rows.push(vec![
                center + rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
            labels.push(y);
        }
        matrix(rows, labels)
    }

    #[test]
    fn separable_clusters_score_perfectly() {
        let x = two_clusters(40, 4.0, 3);
        let cv = train_eval_classifier(&x, 10, 0.8, 7, &FitConfig::default()).unwrap();
        assert_eq!(cv.n_folds, 10);
        assert_eq!(cv.mean_accuracy, 1.0);
        assert_eq!(cv.std_accuracy, 0.0);
    }

    #[test]
    fn fit_recovers_the_informative_direction() {
        let x = two_clusters(50, 3.0, 5);
        let model = fit_l1_logistic(&x.rows, &x.labels, &FitConfig::default());
        assert!(model.weights[0] > 0.5);
        assert!(model.weights[1].abs() < model.weights[0] / 4.0);
        assert_eq!(model.accuracy(&x.rows, &x.labels), 1.0);
    }

    #[test]
    fn random_labels_score_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..240)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<bool> = (0..240).map(|i| i % 2 == 0).collect();
        let x = matrix(rows, labels);
        let cv = train_eval_classifier(&x, 10, 0.8, 13, &FitConfig::default()).unwrap();
        assert!(
            (0.35..=0.65).contains(&cv.mean_accuracy),
            "chance run scored {}",
            cv.mean_accuracy
        );
    }

    #[test]
    fn heavy_regularization_zeroes_weights_and_scores_half() {
        let x = two_clusters(40, 4.0, 3);
        let cfg = FitConfig {
            c: 1e-6,
            ..FitConfig::default()
        };
        let model = fit_l1_logistic(&x.rows, &x.labels, &cfg);
        assert!(model.weights.iter().all(|&w| w == 0.0));
        let cv = train_eval_classifier(&x, 10, 0.8, 7, &cfg).unwrap();
        assert!((cv.mean_accuracy - 0.5).abs() < 1e-9);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let rows = vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 20.0]];
        let s = Standardizer::fit(&rows);
        let z = s.apply(&rows);
        for j in 0..2 {
            let mean: f64 = z.iter().map(|r| r[j]).sum::<f64>() / 3.0;
            let var: f64 = z.iter().map(|r| r[j] * r[j]).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        // constant columns map to zero, not NaN
        let s = Standardizer::fit(&[vec![2.0], vec![2.0]]);
        assert_eq!(s.apply(&[vec![2.0]]), [[0.0]]);
    }

    #[test]
    fn too_few_examples_rejected() {
        let x = matrix(vec![vec![0.0], vec![1.0], vec![2.0]], vec![true, false, false]);
        let err = train_eval_classifier(&x, 10, 0.8, 1, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, CVError::TooFewExamples { pos: 1, neg: 2 }));
    }

    #[test]
    fn imbalanced_classes_get_balanced_tests() {
        // 5:1 imbalance; majority-class predictor would score 0.5 on a
        // balanced test, not 5/6
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..240 {
            let y = i % 6 == 0;
            rows.push(vec![rng.gen_range(-1.0..1.0)]);
            labels.push(y);
        }
        let x = matrix(rows, labels);
        let cv = train_eval_classifier(&x, 10, 0.8, 19, &FitConfig::default()).unwrap();
        assert!(
            (0.3..=0.7).contains(&cv.mean_accuracy),
            "balanced test should hover near 0.5, got {}",
            cv.mean_accuracy
        );
    }

    #[test]
    fn same_seed_same_folds() {
        let x = two_clusters(30, 1.0, 8);
        let a = train_eval_classifier(&x, 10, 0.8, 21, &FitConfig::default()).unwrap();
        let b = train_eval_classifier(&x, 10, 0.8, 21, &FitConfig::default()).unwrap();
        assert_eq!(a.fold_accuracies, b.fold_accuracies);
    }
}
