//! Evaluation protocols as explicit train/test index sets.
//!
//! Every constructor is a pure function of `(cohort, params, seed)`; indices
//! are record positions in the cohort, stored sorted ascending.

mod audit;
mod io;
mod noise;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use audit::{leakage_audit, AuditContext, AuditReport, Violation};
pub use io::{read_foldset, write_foldset};
pub use noise::{apply_label_noise, LabelNoise, NoisyLabels};

use crate::dataset::{eligible_targets, qualifying_papers, Cohort, EligibilityRule};
use crate::error::{Error, Result};
use crate::features::{tanimoto_unchecked, Fingerprint};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    RandomKfold,
    ScaffoldKfold,
    Loto,
    Lofo,
    Temporal,
    Crosslab,
    Spectra,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::RandomKfold,
        Protocol::ScaffoldKfold,
        Protocol::Loto,
        Protocol::Lofo,
        Protocol::Temporal,
        Protocol::Crosslab,
        Protocol::Spectra,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::RandomKfold => "RANDOM_KFOLD",
            Protocol::ScaffoldKfold => "SCAFFOLD_KFOLD",
            Protocol::Loto => "LOTO",
            Protocol::Lofo => "LOFO",
            Protocol::Temporal => "TEMPORAL",
            Protocol::Crosslab => "CROSSLAB",
            Protocol::Spectra => "SPECTRA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Protocol::ALL.into_iter().find(|p| p.as_str() == norm)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub key: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    fn new(key: impl Into<String>, mut train: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        test.sort_unstable();
        Fold {
            key: key.into(),
            train,
            test,
        }
    }

    /// Complement split: test = `test`, train = every other position.
    fn holdout(key: impl Into<String>, n: usize, test: Vec<usize>) -> Self {
        let held: BTreeSet<usize> = test.iter().copied().collect();
        let train = (0..n).filter(|i| !held.contains(i)).collect();
        Fold::new(key, train, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedFold {
    pub key: String,
    pub reason: String,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSet {
    pub protocol: Protocol,
    pub folds: Vec<Fold>,
    pub params: BTreeMap<String, String>,
    pub dropped: Vec<DroppedFold>,
}

impl FoldSet {
    fn new(protocol: Protocol, folds: Vec<Fold>, params: &[(&str, String)]) -> Self {
        FoldSet {
            protocol,
            folds,
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            dropped: Vec::new(),
        }
    }

    pub fn keys(&self) -> Vec<&str> {
        self.folds.iter().map(|f| f.key.as_str()).collect()
    }

    pub fn fold(&self, key: &str) -> Option<&Fold> {
        self.folds.iter().find(|f| f.key == key)
    }
}

/// One fold per LOTO-eligible target; test = all of its records.
pub fn loto_folds(cohort: &Cohort) -> Result<FoldSet> {
    let targets = eligible_targets(cohort, EligibilityRule::Loto);
    if targets.is_empty() {
        return Err(Error::NoEligibleTargets("LOTO".into()));
    }
    let folds = targets
        .iter()
        .map(|t| Fold::holdout(t.clone(), cohort.len(), cohort.target_records(t).to_vec()))
        .collect();
    Ok(FoldSet::new(Protocol::Loto, folds, &[]))
}

/// `target -> family` map from the records' own family column.
pub fn family_map_from_cohort(cohort: &Cohort) -> BTreeMap<String, String> {
    cohort
        .records()
        .iter()
        .filter_map(|r| r.family_id.as_ref().map(|f| (r.target_id.clone(), f.clone())))
        .collect()
}

/// One fold per family holding at least one LOTO-eligible target. The test
/// block is every record of the family's targets; unmapped targets are never
/// tested and stay in training unless `drop_unmapped` is set.
pub fn lofo_folds(cohort: &Cohort, family_map: &BTreeMap<String, String>, drop_unmapped: bool) -> Result<FoldSet> {
    if family_map.is_empty() {
        return Err(Error::invalid("family_map", "empty family map"));
    }
    let eligible: BTreeSet<String> = eligible_targets(cohort, EligibilityRule::Loto).into_iter().collect();
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (t, f) in family_map {
        if !cohort.target_records(t).is_empty() {
            members.entry(f.as_str()).or_default().push(t.as_str());
        }
    }
    let unmapped: BTreeSet<usize> = if drop_unmapped {
        cohort
            .by_target()
            .iter()
            .filter(|(t, _)| !family_map.contains_key(*t))
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect()
    } else {
        BTreeSet::new()
    };
    let mut folds = Vec::new();
    let mut tested = 0;
    for (family, targets) in &members {
        let n_eligible = targets.iter().filter(|t| eligible.contains(**t)).count();
        if n_eligible == 0 {
            continue;
        }
        tested += n_eligible;
        let test: Vec<usize> = targets.iter().flat_map(|t| cohort.target_records(t).iter().copied()).collect();
        let mut fold = Fold::holdout(family.to_string(), cohort.len(), test);
        fold.train.retain(|i| !unmapped.contains(i));
        folds.push(fold);
    }
    if folds.is_empty() {
        return Err(Error::NoEligibleTargets("LOFO".into()));
    }
    Ok(FoldSet::new(
        Protocol::Lofo,
        folds,
        &[
            ("tested_targets", tested.to_string()),
            ("drop_unmapped", drop_unmapped.to_string()),
        ],
    ))
}

/// Key of a cross-lab fold.
pub fn crosslab_key(target: &str, doi: &str) -> String {
    format!("{target}::{doi}")
}

/// One fold per (eligible target, qualifying DOI): test = that block, train =
/// everything else, including the target's other papers.
pub fn crosslab_folds(cohort: &Cohort) -> Result<FoldSet> {
    let targets = eligible_targets(cohort, EligibilityRule::CrossLab);
    if targets.is_empty() {
        return Err(Error::NoEligibleTargets("CROSSLAB".into()));
    }
    let mut folds = Vec::new();
    for t in &targets {
        let papers = cohort.papers_of(t);
        for doi in qualifying_papers(cohort, t) {
            folds.push(Fold::holdout(crosslab_key(t, doi), cohort.len(), papers[doi].clone()));
        }
    }
    Ok(FoldSet::new(Protocol::Crosslab, folds, &[]))
}

/// Train on years `< train_before`, test on `== test_year`.
pub fn temporal_split(cohort: &Cohort, train_before: i32, test_year: i32) -> Result<FoldSet> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in cohort.records().iter().enumerate() {
        if r.year < train_before {
            train.push(i);
        } else if r.year == test_year {
            test.push(i);
        }
    }
    if test.is_empty() {
        return Err(Error::invalid("test_year", format!("no records from {test_year}")));
    }
    let key = format!("{train_before}->{test_year}");
    if train.is_empty() {
        return Err(Error::EmptyTrain(key));
    }
    Ok(FoldSet::new(
        Protocol::Temporal,
        vec![Fold::new(key, train, test)],
        &[
            ("train_before", train_before.to_string()),
            ("test_year", test_year.to_string()),
        ],
    ))
}

fn kfold_from_assignment(n: usize, assignment: &[usize], k: usize) -> Vec<Fold> {
    (0..k)
        .map(|f| {
            let test = (0..n).filter(|&i| assignment[i] == f).collect();
            Fold::holdout(format!("fold{f}"), n, test)
        })
        .collect()
}

/// Record-level shuffled partition into `k` folds (sizes differ by at most one).
pub fn random_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldSet> {
    let n = cohort.len();
    if k < 2 {
        return Err(Error::invalid("k", "need k >= 2"));
    }
    if k > n {
        return Err(Error::KTooLarge {
            k,
            available: n,
            what: "records".into(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut assignment = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        assignment[i] = slot % k;
    }
    Ok(FoldSet::new(
        Protocol::RandomKfold,
        kfold_from_assignment(n, &assignment, k),
        &[("k", k.to_string()), ("seed", seed.to_string())],
    ))
}

/// Group k-fold: groups in seeded order, then largest first, each into the
/// currently smallest fold (lowest index on ties).
pub fn scaffold_kfold(cohort: &Cohort, scaffold_keys: &BTreeMap<String, String>, k: usize, seed: u64) -> Result<FoldSet> {
    if k < 2 {
        return Err(Error::invalid("k", "need k >= 2"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in cohort.records().iter().enumerate() {
        let key = scaffold_keys
            .get(&r.compound_id)
            .ok_or_else(|| Error::invalid("scaffold_keys", format!("no key for compound {}", r.compound_id)))?;
        groups.entry(key.as_str()).or_default().push(i);
    }
    if k > groups.len() {
        return Err(Error::KTooLarge {
            k,
            available: groups.len(),
            what: "scaffold groups".into(),
        });
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    order.shuffle(&mut rng::stream(seed, 0));
    order.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let mut sizes = vec![0usize; k];
    let mut assignment = vec![0; cohort.len()];
    for g in &order {
        let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[f] += g.len();
        for &i in g {
            assignment[i] = f;
        }
    }
    Ok(FoldSet::new(
        Protocol::ScaffoldKfold,
        kfold_from_assignment(cohort.len(), &assignment, k),
        &[("k", k.to_string()), ("seed", seed.to_string())],
    ))
}

/// Per fold, the maximum train-set Tanimoto of every test record (test order).
pub fn test_max_similarity(base: &FoldSet, fps: &[Fingerprint]) -> Result<Vec<Vec<f64>>> {
    if let Some(w) = fps.first().map(Fingerprint::width) {
        if let Some(bad) = fps.iter().find(|f| f.width() != w) {
            return Err(Error::WidthMismatch {
                expected: w,
                found: bad.width(),
            });
        }
    }
    base.folds
        .iter()
        .map(|fold| {
            if fold.train.is_empty() {
                return Err(Error::EmptyTrain(fold.key.clone()));
            }
            Ok(fold
                .test
                .par_iter()
                .map(|&i| {
                    fold.train
                        .iter()
                        .map(|&j| tanimoto_unchecked(&fps[i], &fps[j]))
                        .fold(0.0, f64::max)
                })
                .collect())
        })
        .collect()
}

fn filter_with_similarity(base: &FoldSet, s: f64, sims: &[Vec<f64>], cohort: &Cohort) -> Result<FoldSet> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::invalid("s", "threshold must lie in (0, 1]"));
    }
    let mut out = FoldSet {
        protocol: Protocol::Spectra,
        folds: Vec::new(),
        params: base.params.clone(),
        dropped: base.dropped.clone(),
    };
    out.params.insert("base_protocol".into(), base.protocol.to_string());
    out.params.insert("s".into(), format!("{s}"));
    out.params.insert("filter_side".into(), "test".into());
    for (fold, sim) in base.folds.iter().zip(sims) {
        let test: Vec<usize> = fold
            .test
            .iter()
            .zip(sim)
            .filter(|(_, &m)| m <= s)
            .map(|(&i, _)| i)
            .collect();
        let pos = test.iter().filter(|&&i| cohort.records()[i].label).count();
        let reason = if test.is_empty() {
            Some("empty")
        } else if pos == 0 || pos == test.len() {
            Some("single_class")
        } else {
            None
        };
        match reason {
            Some(r) => out.dropped.push(DroppedFold {
                key: fold.key.clone(),
                reason: r.into(),
                n_test: test.len(),
            }),
            None => out.folds.push(Fold::new(fold.key.clone(), fold.train.clone(), test)),
        }
    }
    if out.folds.is_empty() {
        let report = out
            .dropped
            .iter()
            .map(|d| format!("{}:{}", d.key, d.reason))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::AllFoldsDropped(report));
    }
    Ok(out)
}

/// Remove test records whose maximum train similarity exceeds `s`; drop
/// folds left empty or single-class.
pub fn spectra_filter(base: &FoldSet, s: f64, fps: &[Fingerprint], cohort: &Cohort) -> Result<FoldSet> {
    let sims = test_max_similarity(base, fps)?;
    filter_with_similarity(base, s, &sims, cohort)
}

/// [`spectra_filter`] at several thresholds, computing similarities once.
pub fn spectra_sweep(
    base: &FoldSet,
    thresholds: &[f64],
    fps: &[Fingerprint],
    cohort: &Cohort,
) -> Result<Vec<(f64, Result<FoldSet>)>> {
    let sims = test_max_similarity(base, fps)?;
    Ok(thresholds
        .iter()
        .map(|&s| (s, filter_with_similarity(base, s, &sims, cohort)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DedupOutcome {
    pub fold: Fold,
    pub removed: usize,
}

/// Drop train records whose dedup key matches any test record's key.
/// `keys` holds one key per cohort record.
pub fn dedup_train(fold: &Fold, keys: &[String]) -> Result<DedupOutcome> {
    let test_keys: BTreeSet<&str> = fold.test.iter().map(|&i| keys[i].as_str()).collect();
    let train: Vec<usize> = fold
        .train
        .iter()
        .copied()
        .filter(|&i| !test_keys.contains(keys[i].as_str()))
        .collect();
    if train.is_empty() {
        return Err(Error::EmptyTrain(fold.key.clone()));
    }
    Ok(DedupOutcome {
        removed: fold.train.len() - train.len(),
        fold: Fold {
            key: fold.key.clone(),
            train,
            test: fold.test.clone(),
        },
    })
}
