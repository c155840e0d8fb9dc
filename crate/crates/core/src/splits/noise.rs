//! Training-label corruption models.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{BinarisationScheme, Cohort};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "level", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelNoise {
    /// Flip each label independently with probability `f`.
    UniformFlip(f64),
    /// Per target, exchange labels across `round(f * min(n_pos, n_neg))`
    /// disjoint positive/negative pairs; per-target positive counts are kept.
    TargetSwap(f64),
    /// Re-binarise after multiplying dc50 by `10^eps`, `eps ~ N(0, sigma^2)`.
    GaussianLogDc50(f64),
}

impl LabelNoise {
    pub fn level(&self) -> f64 {
        match *self {
            LabelNoise::UniformFlip(f) | LabelNoise::TargetSwap(f) | LabelNoise::GaussianLogDc50(f) => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NoisyLabels {
    /// Aligned with the `train` positions passed in.
    pub labels: Vec<bool>,
    pub n_changed: usize,
    /// Gaussian model only: rows without dc50 that kept their label.
    pub n_missing_dc50: usize,
}

/// Corrupt the labels of `train` positions; only training labels are touched.
pub fn apply_label_noise(
    cohort: &Cohort,
    train: &[usize],
    model: LabelNoise,
    scheme: &BinarisationScheme,
    seed: u64,
) -> Result<NoisyLabels> {
    let recs = cohort.records();
    let original: Vec<bool> = train.iter().map(|&i| recs[i].label).collect();
    let mut labels = original.clone();
    let mut n_missing_dc50 = 0;
    match model {
        LabelNoise::UniformFlip(f) | LabelNoise::TargetSwap(f) if !(0.0..=1.0).contains(&f) => {
            return Err(Error::invalid("f", "flip fraction must lie in [0, 1]"));
        }
        LabelNoise::GaussianLogDc50(s) if !(s >= 0.0) => {
            return Err(Error::invalid("sigma", "must be >= 0"));
        }
        LabelNoise::UniformFlip(f) => {
            let mut rng = rng::stream(seed, 1);
            for l in labels.iter_mut() {
                if rng.random::<f64>() < f {
                    *l = !*l;
                }
            }
        }
        LabelNoise::TargetSwap(f) => {
            let mut rng = rng::stream(seed, 2);
            let mut by_target: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
            for (slot, &i) in train.iter().enumerate() {
                let e = by_target.entry(recs[i].target_id.as_str()).or_default();
                if labels[slot] {
                    e.0.push(slot);
                } else {
                    e.1.push(slot);
                }
            }
            for (mut pos, mut neg) in by_target.into_values() {
                let m = (f * pos.len().min(neg.len()) as f64).round() as usize;
                pos.shuffle(&mut rng);
                neg.shuffle(&mut rng);
                for (&p, &q) in pos[..m].iter().zip(&neg[..m]) {
                    labels[p] = false;
                    labels[q] = true;
                }
            }
        }
        LabelNoise::GaussianLogDc50(sigma) => {
            let mut rng = rng::stream(seed, 3);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
            for (slot, &i) in train.iter().enumerate() {
                let r = &recs[i];
                match r.dc50_nm {
                    Some(dc50) => {
                        let eps = normal.sample(&mut rng);
                        if let Some(l) = scheme.label(Some(dc50 * 10f64.powf(eps)), r.dmax_pct) {
                            labels[slot] = l;
                        }
                    }
                    None => n_missing_dc50 += 1,
                }
            }
        }
    }
    let n_changed = labels.iter().zip(&original).filter(|(a, b)| a != b).count();
    Ok(NoisyLabels {
        labels,
        n_changed,
        n_missing_dc50,
    })
}
