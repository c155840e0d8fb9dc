//! Protocol-key leakage audit.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{FoldSet, Protocol};
use crate::dataset::Cohort;

/// Optional key maps the audit needs for some protocols.
#[derive(Debug, Clone, Default)]
pub struct AuditContext<'a> {
    /// `target -> family`; falls back to the records' family column.
    pub family_map: Option<&'a BTreeMap<String, String>>,
    /// `compound_id -> scaffold key`.
    pub scaffold_keys: Option<&'a BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub fold_key: String,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub protocol: Protocol,
    pub n_folds: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that no protocol key crosses train/test in any fold.
pub fn leakage_audit(fs: &FoldSet, cohort: &Cohort, ctx: &AuditContext) -> AuditReport {
    let recs = cohort.records();
    let mut violations = Vec::new();
    let protocol = match fs.protocol {
        Protocol::Spectra => fs
            .params
            .get("base_protocol")
            .and_then(|p| Protocol::parse(p))
            .unwrap_or(Protocol::Spectra),
        p => p,
    };
    let family_of = |i: usize| -> Option<String> {
        let r = &recs[i];
        match ctx.family_map {
            Some(m) => m.get(&r.target_id).cloned(),
            None => r.family_id.clone(),
        }
    };
    for fold in &fs.folds {
        let mut push = |kind: &str, detail: String| {
            violations.push(Violation {
                fold_key: fold.key.clone(),
                kind: kind.into(),
                detail,
            })
        };
        if let Some(&bad) = fold.train.iter().chain(&fold.test).find(|&&i| i >= recs.len()) {
            push("index_out_of_range", bad.to_string());
            continue;
        }
        let train: BTreeSet<usize> = fold.train.iter().copied().collect();
        for &i in &fold.test {
            if train.contains(&i) {
                push("record_overlap", i.to_string());
            }
        }
        let crossing = |key: &dyn Fn(usize) -> Option<String>| -> Vec<String> {
            let test_keys: BTreeSet<String> = fold.test.iter().filter_map(|&i| key(i)).collect();
            let shared: BTreeSet<String> = fold
                .train
                .iter()
                .filter_map(|&i| key(i))
                .filter(|k| test_keys.contains(k))
                .collect();
            shared.into_iter().collect()
        };
        match protocol {
            Protocol::Loto => {
                for k in crossing(&|i| Some(recs[i].target_id.clone())) {
                    push("target_crosses", k);
                }
            }
            Protocol::Lofo => {
                for k in crossing(&family_of) {
                    push("family_crosses", k);
                }
            }
            Protocol::Crosslab => {
                let blocks: BTreeSet<(String, String)> = fold
                    .test
                    .iter()
                    .map(|&i| (recs[i].target_id.clone(), recs[i].doi.clone()))
                    .collect();
                if blocks.len() > 1 {
                    push("multiple_test_blocks", format!("{}", blocks.len()));
                }
                for k in crossing(&|i| Some(format!("{}::{}", recs[i].target_id, recs[i].doi))) {
                    push("paper_block_crosses", k);
                }
            }
            Protocol::Temporal => {
                let before: Option<i32> = fs.params.get("train_before").and_then(|v| v.parse().ok());
                let year: Option<i32> = fs.params.get("test_year").and_then(|v| v.parse().ok());
                if let (Some(before), Some(year)) = (before, year) {
                    for &i in &fold.train {
                        if recs[i].year >= before {
                            push("train_year", recs[i].year.to_string());
                        }
                    }
                    for &i in &fold.test {
                        if recs[i].year != year {
                            push("test_year", recs[i].year.to_string());
                        }
                    }
                } else {
                    push("missing_params", "train_before/test_year".into());
                }
            }
            Protocol::ScaffoldKfold => match ctx.scaffold_keys {
                Some(keys) => {
                    for k in crossing(&|i| keys.get(&recs[i].compound_id).cloned()) {
                        push("scaffold_crosses", k);
                    }
                }
                None => push("missing_context", "scaffold keys".into()),
            },
            Protocol::RandomKfold | Protocol::Spectra => {}
        }
    }
    AuditReport {
        protocol: fs.protocol,
        n_folds: fs.folds.len(),
        violations,
    }
}
