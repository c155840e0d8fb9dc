//! Reference classifiers over binary fingerprints.

pub mod forest;
pub mod knn;

use serde::{Deserialize, Serialize};

pub use forest::{train_forest, ForestConfig, ForestModel, MaxFeatures};
pub use knn::{knn_predict, DEFAULT_K};

use crate::error::Result;
use crate::features::Fingerprint;

/// Classifier choice for the evaluation pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Forest(ForestConfig),
    Knn { k: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Forest(ForestConfig::default())
    }
}

impl ModelSpec {
    /// Same model with its seed replaced (kNN is seedless).
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            ModelSpec::Forest(c) => ModelSpec::Forest(ForestConfig { seed, ..c.clone() }),
            other => other.clone(),
        }
    }

    pub fn fit_predict(&self, train_x: &[Fingerprint], train_y: &[bool], test_x: &[Fingerprint]) -> Result<Vec<f64>> {
        match self {
            ModelSpec::Forest(c) => train_forest(train_x, train_y, c)?.predict_proba(test_x),
            ModelSpec::Knn { k } => knn_predict(train_x, train_y, test_x, *k),
        }
    }
}
