//! Cluster bootstrap with percentile confidence intervals.
//!
//! Replicate `r` draws its clusters from [`crate::rng::stream`]`(seed, r)` and
//! replicate statistics are collected in index order, so the output is
//! bit-identical for any rayon pool size.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean, median, quantile};
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_REPLICATES: usize = 100;
/// Fraction of undefined replicates tolerated before the bootstrap fails.
pub const MAX_SKIPPED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub ci95: (f64, f64),
    pub replicates: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    Mean,
    Median,
}

impl Statistic {
    pub fn apply(&self, xs: &[f64]) -> Option<f64> {
        if xs.is_empty() {
            return None;
        }
        Some(match self {
            Statistic::Mean => mean(xs),
            Statistic::Median => median(xs),
        })
    }
}

/// Percentile interval of the per-replicate draws of `n_clusters` clusters.
///
/// `stat` receives the resampled cluster indices (with repetition, length
/// `n_clusters`) and returns `None` when the statistic is undefined on that
/// replicate. The point estimate uses the identity resample.
pub fn bootstrap_clusters<F>(n_clusters: usize, replicates: usize, seed: u64, stat: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_clusters < 2 {
        return Err(Error::invalid("clusters", "bootstrap needs at least two clusters"));
    }
    if replicates < MIN_REPLICATES {
        return Err(Error::invalid("replicates", format!("need at least {MIN_REPLICATES}")));
    }
    let identity: Vec<usize> = (0..n_clusters).collect();
    let point = stat(&identity).ok_or_else(|| Error::Degenerate("statistic undefined on the full sample".into()))?;
    let draws: Vec<Option<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r);
            let sample: Vec<usize> = (0..n_clusters).map(|_| rng.random_range(0..n_clusters)).collect();
            stat(&sample).filter(|v| v.is_finite())
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = replicates - values.len();
    if skipped as f64 > MAX_SKIPPED_FRACTION * replicates as f64 {
        return Err(Error::BootstrapFailure {
            skipped,
            total: replicates,
        });
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        point,
        ci95: (quantile(&values, 0.025), quantile(&values, 0.975)),
        replicates,
        skipped,
    })
}

/// Bootstrap of `statistic` over values grouped by cluster id; all values of a
/// drawn cluster enter the replicate together.
pub fn clustered_bootstrap(
    values: &[(String, f64)],
    replicates: usize,
    statistic: Statistic,
    seed: u64,
) -> Result<BootstrapResult> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (c, v) in values {
        groups.entry(c.as_str()).or_default().push(*v);
    }
    let clusters: Vec<Vec<f64>> = groups.into_values().collect();
    bootstrap_clusters(clusters.len(), replicates, seed, |sample| {
        let pooled: Vec<f64> = sample.iter().flat_map(|&c| clusters[c].iter().copied()).collect();
        statistic.apply(&pooled)
    })
}
