//! Classifier and correlation analyses over probe records.

pub mod classifier;
pub mod features;
pub mod freq;
pub mod stats;

pub use classifier::{
    fit_l1_logistic, train_eval_classifier, CVError, CVResult, FitConfig, LogisticL1,
    Standardizer,
};
pub use features::{extract_features, FeatureError, FeatureMatrix, FeatureSpec};
pub use freq::{token_counts, token_frequencies, top_k};
pub use stats::{pearson, Correlation};
