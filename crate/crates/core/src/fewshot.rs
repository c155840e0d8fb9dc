//! Per-target few-shot recovery.
//!
//! A plan moves `k` held-out records into training. Stratified selection
//! sorts the test records by base probability (stable), cuts them into five
//! equal-count quintiles and allocates picks round-robin from the lowest
//! quintile. Pick `j` wants a positive when `j` is even and a negative when
//! it is odd; if the current quintile has no unpicked record of that label
//! the pick falls through to the next quintile (wrapping), and if the label
//! is exhausted everywhere the other label is taken from the current
//! quintile. Within a quintile records are visited in a seeded order.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::eval::fit_predict;
use crate::features::Fingerprint;
use crate::metrics::auroc;
use crate::model::ModelSpec;
use crate::rng::{derive_seed, stream};
use crate::splits::{Fold, FoldSet};
use crate::stats::{mean, sd};

pub const N_QUINTILES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Selection {
    StratifiedQuintile,
    Random,
}

impl Selection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Selection::StratifiedQuintile => "STRATIFIED_QUINTILE",
            Selection::Random => "RANDOM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "STRATIFIED_QUINTILE" | "STRATIFIED" | "QUINTILE" => Some(Selection::StratifiedQuintile),
            "RANDOM" => Some(Selection::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotPlan {
    pub fold_key: String,
    pub k: usize,
    pub selection: Selection,
    /// Record positions moved into training, in pick order.
    pub support: Vec<usize>,
    /// Remaining test positions, sorted.
    pub query: Vec<usize>,
    pub flags: Vec<String>,
}

impl FewShotPlan {
    pub fn degenerate(&self) -> bool {
        self.flags.iter().any(|f| f == "query_single_class")
    }
}

/// Build a plan for `fold`; `base_probs` and `labels` are aligned with
/// `fold.test`.
pub fn plan_fewshot(
    fold: &Fold,
    base_probs: &[f64],
    labels: &[bool],
    k: usize,
    selection: Selection,
    seed: u64,
) -> Result<FewShotPlan> {
    let n = fold.test.len();
    if base_probs.len() != n || labels.len() != n {
        return Err(Error::invalid("base_probs", "must be aligned with the fold's test records"));
    }
    if base_probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("base_probs", "non-finite probability"));
    }
    if k >= n && k > 0 {
        return Err(Error::KTooLarge { k, available: n, what: "test records (no query left)".into() });
    }
    let mut flags = Vec::new();
    let picked: Vec<usize> = match selection {
        Selection::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream(seed, 0));
            order.truncate(k);
            order
        }
        Selection::StratifiedQuintile => stratified_picks(base_probs, labels, k, seed, &mut flags),
    };
    let chosen: BTreeSet<usize> = picked.iter().copied().collect();
    let support: Vec<usize> = picked.iter().map(|&j| fold.test[j]).collect();
    let query: Vec<usize> = (0..n).filter(|j| !chosen.contains(j)).map(|j| fold.test[j]).collect();
    let q_pos = (0..n).filter(|j| !chosen.contains(j) && labels[*j]).count();
    if q_pos == 0 || q_pos == query.len() {
        flags.push("query_single_class".into());
    }
    Ok(FewShotPlan {
        fold_key: fold.key.clone(),
        k,
        selection,
        support,
        query,
        flags,
    })
}

fn stratified_picks(probs: &[f64], labels: &[bool], k: usize, seed: u64, flags: &mut Vec<String>) -> Vec<usize> {
    let n = probs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut quintiles: Vec<Vec<usize>> = vec![Vec::new(); N_QUINTILES];
    for (r, &j) in order.iter().enumerate() {
        quintiles[r * N_QUINTILES / n].push(j);
    }
    for (q, bucket) in quintiles.iter_mut().enumerate() {
        bucket.shuffle(&mut stream(seed, 1 + q as u64));
    }
    let mut taken = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    let find = |taken: &[bool], q: usize, want: Option<bool>| {
        quintiles[q]
            .iter()
            .copied()
            .find(|&j| !taken[j] && want.is_none_or(|w| labels[j] == w))
    };
    for p in 0..k {
        let home = p % N_QUINTILES;
        let want = p % 2 == 0;
        let hit = (0..N_QUINTILES)
            .map(|d| (home + d) % N_QUINTILES)
            .find_map(|q| find(&taken, q, Some(want)).map(|j| (q, j)));
        let j = match hit {
            Some((q, j)) => {
                if q != home && !flags.iter().any(|f| f == "waterfall") {
                    flags.push("waterfall".into());
                }
                j
            }
            None => {
                if !flags.iter().any(|f| f == "label_exhausted") {
                    flags.push("label_exhausted".into());
                }
                match (0..N_QUINTILES)
                    .map(|d| (home + d) % N_QUINTILES)
                    .find_map(|q| find(&taken, q, None))
                {
                    Some(j) => j,
                    None => break,
                }
            }
        };
        taken[j] = true;
        picks.push(j);
    }
    picks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotRow {
    pub fold_key: String,
    pub seed: u64,
    pub k: usize,
    pub selection: Selection,
    pub n_support: usize,
    pub n_query: usize,
    pub auroc: Option<f64>,
    /// Base model scored on this row's query set.
    pub baseline_query_auroc: Option<f64>,
    /// Base model scored on the full test fold.
    pub baseline_full_auroc: Option<f64>,
    pub degenerate: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub k: usize,
    pub selection: Selection,
    pub macro_mean: Option<f64>,
    pub sd: Option<f64>,
    pub baseline_query_macro_mean: Option<f64>,
    /// Per-seed macro AUROC, aligned with the report's seeds.
    pub per_seed: Vec<Option<f64>>,
    pub per_seed_baseline_query: Vec<Option<f64>>,
    /// Folds whose query set was single-class for at least one seed.
    pub n_folds_degenerate: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotReport {
    pub seeds: Vec<u64>,
    pub curve: Vec<CurveRow>,
    pub rows: Vec<FewShotRow>,
}

fn macro_of(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| mean(&d))
}

/// Learning curve over `k_list` (ascending). For each (fold, seed) the base
/// model is trained once; each `k > 0` retrains on train plus support and
/// scores the query set. Plan seeds depend on (seed, fold index, k) only.
pub fn evaluate_fewshot(
    cohort: &Cohort,
    fps: &[Fingerprint],
    fs: &FoldSet,
    model: &ModelSpec,
    k_list: &[usize],
    selection: Selection,
    seeds: &[u64],
) -> Result<FewShotReport> {
    if k_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("k_list", "must be strictly ascending"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    if fps.len() != cohort.len() {
        return Err(Error::invalid("fingerprints", "one fingerprint per record required"));
    }
    let labels = cohort.labels();
    let tasks: Vec<(usize, usize)> = (0..fs.folds.len())
        .flat_map(|f| (0..seeds.len()).map(move |s| (f, s)))
        .collect();
    let results: Vec<Result<Vec<FewShotRow>>> = tasks
        .par_iter()
        .map(|&(fi, si)| {
            let fold = &fs.folds[fi];
            let seed = seeds[si];
            let m = model.with_seed(seed);
            let y_train: Vec<bool> = fold.train.iter().map(|&i| labels[i]).collect();
            let y_test: Vec<bool> = fold.test.iter().map(|&i| labels[i]).collect();
            let base = fit_predict(fps, &fold.train, &y_train, &fold.test, &m)?;
            let base_full = auroc(&base, &y_test);
            let mut rows = Vec::new();
            for &k in k_list {
                let plan_seed = derive_seed(seed, &[fi as u64, k as u64]);
                let plan = plan_fewshot(fold, &base, &y_test, k, selection, plan_seed)?;
                let pos_of = |i: usize| fold.test.binary_search(&i).expect("query record in test");
                let q_labels: Vec<bool> = plan.query.iter().map(|&i| labels[i]).collect();
                let q_base: Vec<f64> = plan.query.iter().map(|&i| base[pos_of(i)]).collect();
                let baseline_query = auroc(&q_base, &q_labels);
                let score = if k == 0 {
                    baseline_query
                } else {
                    let mut train = fold.train.clone();
                    train.extend(&plan.support);
                    let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
                    let p = fit_predict(fps, &train, &y, &plan.query, &m)?;
                    auroc(&p, &q_labels)
                };
                rows.push(FewShotRow {
                    fold_key: fold.key.clone(),
                    seed,
                    k,
                    selection,
                    n_support: plan.support.len(),
                    n_query: plan.query.len(),
                    auroc: score,
                    baseline_query_auroc: baseline_query,
                    baseline_full_auroc: base_full,
                    degenerate: plan.degenerate(),
                    flags: plan.flags,
                });
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        match r {
            Ok(v) => rows.extend(v),
            Err(Error::SingleClass) => continue,
            Err(e) => return Err(e),
        }
    }
    let curve = k_list
        .iter()
        .map(|&k| {
            let at_k: Vec<&FewShotRow> = rows.iter().filter(|r| r.k == k).collect();
            let per_seed: Vec<Option<f64>> = seeds
                .iter()
                .map(|&s| macro_of(&at_k.iter().filter(|r| r.seed == s && !r.degenerate).map(|r| r.auroc).collect::<Vec<_>>()))
                .collect();
            let per_seed_baseline_query: Vec<Option<f64>> = seeds
                .iter()
                .map(|&s| {
                    macro_of(
                        &at_k
                            .iter()
                            .filter(|r| r.seed == s && !r.degenerate)
                            .map(|r| r.baseline_query_auroc)
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            let degenerate: BTreeSet<&str> = at_k.iter().filter(|r| r.degenerate).map(|r| r.fold_key.as_str()).collect();
            let defined: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let mut flags = Vec::new();
            if defined.is_empty() {
                flags.push("all_folds_degenerate".to_string());
            }
            CurveRow {
                k,
                selection,
                macro_mean: (!defined.is_empty()).then(|| mean(&defined)),
                sd: (defined.len() > 1).then(|| sd(&defined)),
                baseline_query_macro_mean: macro_of(&per_seed_baseline_query),
                per_seed,
                per_seed_baseline_query,
                n_folds_degenerate: degenerate.len(),
                flags,
            }
        })
        .collect();
    Ok(FewShotReport {
        seeds: seeds.to_vec(),
        curve,
        rows,
    })
}
