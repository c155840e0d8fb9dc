#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeMap;

use coldbench::dataset::Cohort;
use coldbench::features::{featurize_cohort, Fingerprint, NgramParams};
use coldbench::model::{ForestConfig, ModelSpec};
use coldbench::splits::{
    crosslab_folds, family_map_from_cohort, lofo_folds, loto_folds, random_kfold, scaffold_kfold, spectra_filter,
    temporal_split, FoldSet,
};
use coldbench::synth::{generate_cohort, SynthSpec};

pub const WIDTH: usize = 512;

pub fn cohort(spec: &SynthSpec) -> (Cohort, Vec<Fingerprint>) {
    let c = generate_cohort(spec).unwrap();
    let fps = featurize_cohort(&c, &NgramParams { width: WIDTH, ..Default::default() }).unwrap();
    (c, fps)
}

pub fn forest(n_trees: usize) -> ModelSpec {
    ModelSpec::Forest(ForestConfig { n_trees, ..Default::default() })
}

/// Scaffold key of a synthetic compound: its target core plus series motif.
pub fn scaffold_keys(c: &Cohort) -> BTreeMap<String, String> {
    c.records().iter().map(|r| (r.compound_id.clone(), r.structure[..18].to_string())).collect()
}

/// One fold set per protocol plus similarity-filtered variants.
pub fn all_foldsets(c: &Cohort, fps: &[Fingerprint], seed: u64) -> Vec<FoldSet> {
    let keys = scaffold_keys(c);
    let loto = loto_folds(c).unwrap();
    let rcv = random_kfold(c, 5, seed).unwrap();
    let mut out = vec![
        lofo_folds(c, &family_map_from_cohort(c), true).unwrap(),
        temporal_split(c, 2022, 2023).unwrap(),
        crosslab_folds(c).unwrap(),
        scaffold_kfold(c, &keys, 5, seed).unwrap(),
    ];
    for base in [&loto, &rcv] {
        if let Ok(fs) = spectra_filter(base, 0.5, fps, c) {
            out.push(fs);
        }
    }
    out.push(loto);
    out.push(rcv);
    out
}
