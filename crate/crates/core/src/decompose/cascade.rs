//! Within-target cross-lab cascade.
//!
//! On the cohort restricted to cross-lab-eligible targets, for every target:
//!
//! - random CV: AUROC of the target's out-of-fold predictions from a
//!   record-level k-fold over the restricted cohort;
//! - cross-lab: mean AUROC over the target's held-out-paper folds;
//! - LOTO: AUROC with the whole target held out.
//!
//! Per-target values are averaged over seeds. Macros use the targets where
//! all three are defined, so `interlab_bound = rcv_macro - crosslab_macro`
//! is also the mean paired difference, whose CI comes from a bootstrap over
//! targets.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{eligible_targets, Cohort, EligibilityRule};
use crate::error::{Error, Result};
use crate::eval::evaluate_foldset;
use crate::features::Fingerprint;
use crate::metrics::auroc;
use crate::model::ModelSpec;
use crate::splits::{crosslab_folds, loto_folds, random_kfold};
use crate::stats::{bootstrap_clusters, mean};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeResult {
    pub rcv_macro: f64,
    pub crosslab_macro: f64,
    pub loto_macro: f64,
    pub interlab_bound: f64,
    pub paired_n: usize,
    pub ci95: Option<(f64, f64)>,
}

impl CascadeResult {
    /// Cascade from already-computed macros (no CI).
    pub fn from_macros(rcv_macro: f64, crosslab_macro: f64, loto_macro: f64) -> Self {
        CascadeResult {
            rcv_macro,
            crosslab_macro,
            loto_macro,
            interlab_bound: rcv_macro - crosslab_macro,
            paired_n: 0,
            ci95: None,
        }
    }

    /// Strict ordering rcv > crosslab > loto.
    pub fn ordered(&self) -> bool {
        self.rcv_macro > self.crosslab_macro && self.crosslab_macro > self.loto_macro
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeTargetRow {
    pub target_id: String,
    pub rcv: Option<f64>,
    pub crosslab: Option<f64>,
    pub loto: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeReport {
    pub result: CascadeResult,
    pub targets: Vec<CascadeTargetRow>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CascadeOptions {
    pub rcv_k: usize,
    pub bootstrap_replicates: usize,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions {
            rcv_k: 5,
            bootstrap_replicates: 2000,
        }
    }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| mean(&d))
}

pub fn run_cascade(
    cohort: &Cohort,
    fps: &[Fingerprint],
    model: &ModelSpec,
    seeds: &[u64],
    opts: &CascadeOptions,
) -> Result<CascadeReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let targets = eligible_targets(cohort, EligibilityRule::CrossLab);
    if targets.len() < 2 {
        return Err(Error::NoEligibleTargets("cascade (need >= 2 cross-lab targets)".into()));
    }
    let keep: Vec<usize> = targets.iter().flat_map(|t| cohort.target_records(t).iter().copied()).collect();
    let mut keep_sorted = keep.clone();
    keep_sorted.sort_unstable();
    let sub = cohort.subset(&keep_sorted);
    let sub_fps: Vec<Fingerprint> = keep_sorted.iter().map(|&i| fps[i].clone()).collect();
    let labels = sub.labels();

    let mut per_seed: BTreeMap<&str, [Vec<Option<f64>>; 3]> = BTreeMap::new();
    for t in &targets {
        per_seed.insert(t.as_str(), Default::default());
    }
    for &seed in seeds {
        let rcv = evaluate_foldset(&sub, &sub_fps, &random_kfold(&sub, opts.rcv_k, seed)?, model, seed)?;
        let mut oof = vec![f64::NAN; sub.len()];
        for f in &rcv.folds {
            for (&i, &p) in f.test.iter().zip(&f.probs) {
                oof[i] = p;
            }
        }
        let cl = evaluate_foldset(&sub, &sub_fps, &crosslab_folds(&sub)?, model, seed)?;
        let loto = match loto_folds(&sub) {
            Ok(fs) => Some(evaluate_foldset(&sub, &sub_fps, &fs, model, seed)?),
            Err(Error::NoEligibleTargets(_)) => None,
            Err(e) => return Err(e),
        };
        for t in &targets {
            let idx: Vec<usize> = sub.target_records(t).iter().copied().filter(|&i| !oof[i].is_nan()).collect();
            let p: Vec<f64> = idx.iter().map(|&i| oof[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let prefix = format!("{t}::");
            let cl_vals: Vec<Option<f64>> = cl
                .folds
                .iter()
                .filter(|f| f.fold_key.starts_with(&prefix))
                .map(|f| f.score.auroc)
                .collect();
            let loto_val = loto
                .as_ref()
                .and_then(|e| e.folds.iter().find(|f| f.fold_key == *t))
                .and_then(|f| f.score.auroc);
            let slot = per_seed.get_mut(t.as_str()).unwrap();
            slot[0].push(auroc(&p, &l));
            slot[1].push(mean_defined(&cl_vals));
            slot[2].push(loto_val);
        }
    }
    let rows: Vec<CascadeTargetRow> = per_seed
        .iter()
        .map(|(t, v)| CascadeTargetRow {
            target_id: t.to_string(),
            rcv: mean_defined(&v[0]),
            crosslab: mean_defined(&v[1]),
            loto: mean_defined(&v[2]),
        })
        .collect();
    let paired: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.rcv?, r.crosslab?, r.loto?)))
        .collect();
    if paired.len() < 2 {
        return Err(Error::NoEligibleTargets("cascade (fewer than 2 fully scored targets)".into()));
    }
    let rcv_macro = mean(&paired.iter().map(|p| p.0).collect::<Vec<_>>());
    let crosslab_macro = mean(&paired.iter().map(|p| p.1).collect::<Vec<_>>());
    let loto_macro = mean(&paired.iter().map(|p| p.2).collect::<Vec<_>>());
    let deltas: Vec<f64> = paired.iter().map(|p| p.0 - p.1).collect();
    let ci = bootstrap_clusters(deltas.len(), opts.bootstrap_replicates, seeds[0], |s| {
        Some(s.iter().map(|&i| deltas[i]).sum::<f64>() / s.len() as f64)
    })?;
    Ok(CascadeReport {
        result: CascadeResult {
            rcv_macro,
            crosslab_macro,
            loto_macro,
            interlab_bound: rcv_macro - crosslab_macro,
            paired_n: paired.len(),
            ci95: Some(ci.ci95),
        },
        targets: rows,
        seeds: seeds.to_vec(),
    })
}
