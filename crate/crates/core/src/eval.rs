//! Training and scoring a classifier over the folds of a protocol.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::features::Fingerprint;
use crate::metrics::{macro_auroc, pooled_auroc, score_fold, FoldPredictions, FoldScore};
use crate::model::ModelSpec;
use crate::splits::{Fold, FoldSet, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldEval {
    pub fold_key: String,
    /// Test positions, aligned with `probs`.
    pub test: Vec<usize>,
    pub probs: Vec<f64>,
    pub labels: Vec<bool>,
    pub score: FoldScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedFold {
    pub fold_key: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolEval {
    pub protocol: Protocol,
    pub seed: u64,
    pub folds: Vec<FoldEval>,
    pub skipped: Vec<SkippedFold>,
}

impl ProtocolEval {
    pub fn scores(&self) -> Vec<FoldScore> {
        self.folds.iter().map(|f| f.score.clone()).collect()
    }

    pub fn macro_auroc(&self) -> Result<f64> {
        macro_auroc(&self.scores())
    }

    pub fn pooled_auroc(&self) -> Result<f64> {
        let preds: Vec<FoldPredictions> = self
            .folds
            .iter()
            .map(|f| FoldPredictions {
                fold_key: f.fold_key.clone(),
                probs: f.probs.clone(),
                labels: f.labels.clone(),
            })
            .collect();
        pooled_auroc(&preds)
    }
}

fn gather<T: Clone>(src: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| src[i].clone()).collect()
}

/// Fit on `train` with the given training labels and predict `test`.
pub fn fit_predict(
    fps: &[Fingerprint],
    train: &[usize],
    train_labels: &[bool],
    test: &[usize],
    model: &ModelSpec,
) -> Result<Vec<f64>> {
    let x_train = gather(fps, train);
    let x_test = gather(fps, test);
    model.fit_predict(&x_train, train_labels, &x_test)
}

/// Evaluate one fold. `train_labels` overrides the cohort labels of the
/// training positions (used for label-noise studies).
pub fn evaluate_fold(
    cohort: &Cohort,
    fps: &[Fingerprint],
    fold: &Fold,
    train_labels: Option<&[bool]>,
    model: &ModelSpec,
    seed: u64,
) -> Result<FoldEval> {
    let labels = cohort.labels();
    let y_train = match train_labels {
        Some(l) => l.to_vec(),
        None => gather(&labels, &fold.train),
    };
    if fold.train.is_empty() {
        return Err(Error::EmptyTrain(fold.key.clone()));
    }
    let probs = fit_predict(fps, &fold.train, &y_train, &fold.test, &model.with_seed(seed))?;
    let y_test = gather(&labels, &fold.test);
    Ok(FoldEval {
        fold_key: fold.key.clone(),
        score: score_fold(&fold.key, &probs, &y_test, seed),
        test: fold.test.clone(),
        probs,
        labels: y_test,
    })
}

/// Evaluate every fold in parallel; folds whose training labels are
/// single-class are reported as skipped.
pub fn evaluate_foldset(
    cohort: &Cohort,
    fps: &[Fingerprint],
    fs: &FoldSet,
    model: &ModelSpec,
    seed: u64,
) -> Result<ProtocolEval> {
    evaluate_foldset_with(cohort, fps, fs, model, seed, |_| None)
}

/// As [`evaluate_foldset`], with per-fold training labels from `train_labels`.
pub fn evaluate_foldset_with<F>(
    cohort: &Cohort,
    fps: &[Fingerprint],
    fs: &FoldSet,
    model: &ModelSpec,
    seed: u64,
    train_labels: F,
) -> Result<ProtocolEval>
where
    F: Fn(&Fold) -> Option<Vec<bool>> + Sync,
{
    if fps.len() != cohort.len() {
        return Err(Error::invalid("fingerprints", "one fingerprint per record required"));
    }
    let results: Vec<Result<FoldEval>> = fs
        .folds
        .par_iter()
        .map(|fold| {
            let labels = train_labels(fold);
            evaluate_fold(cohort, fps, fold, labels.as_deref(), model, seed)
        })
        .collect();
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for (fold, r) in fs.folds.iter().zip(results) {
        match r {
            Ok(e) => folds.push(e),
            Err(Error::SingleClass) => skipped.push(SkippedFold {
                fold_key: fold.key.clone(),
                reason: "single_class_train",
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(ProtocolEval {
        protocol: fs.protocol,
        seed,
        folds,
        skipped,
    })
}
