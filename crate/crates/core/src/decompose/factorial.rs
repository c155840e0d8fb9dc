//! Marginals of a 2^4 factorial design against an anchored reference.
//!
//! Cell keys are four `0`/`1` characters, one per factor in [`FACTOR_NAMES`]
//! order. With the anchor bit fixed at 1, the marginal of factor `F` is the
//! mean over the four pairs (other two bits free) of `cell(F=1) - cell(F=0)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::bootstrap_clusters;

pub const FACTOR_NAMES: [&str; 4] = ["M", "W", "A", "K"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean: f64,
    #[serde(default)]
    pub sd: Option<f64>,
    /// Per-target values keyed by target id.
    #[serde(default)]
    pub per_target: Option<BTreeMap<String, f64>>,
}

impl CellSummary {
    pub fn from_mean(mean: f64) -> Self {
        CellSummary { mean, sd: None, per_target: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorMarginal {
    pub factor: String,
    pub bit: usize,
    pub marginal: f64,
    pub ci95: Option<(f64, f64)>,
    /// `(cell with factor = 1, cell with factor = 0)`.
    pub pairs: Vec<(String, String)>,
}

fn key(bits: [bool; 4]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn anchored_pairs(anchor: usize, factor: usize) -> Vec<(String, String)> {
    let free: Vec<usize> = (0..4).filter(|&i| i != anchor && i != factor).collect();
    let mut out = Vec::new();
    for combo in (0..4u8).rev() {
        let mut bits = [false; 4];
        bits[anchor] = true;
        bits[free[0]] = combo & 2 != 0;
        bits[free[1]] = combo & 1 != 0;
        bits[factor] = true;
        let hi = key(bits);
        bits[factor] = false;
        out.push((hi, key(bits)));
    }
    out
}

/// Marginals of the three non-anchor factors. A target-clustered bootstrap
/// CI is attached when every cell used carries per-target values.
pub fn factorial_marginals(
    cells: &BTreeMap<String, CellSummary>,
    anchor_bit: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<FactorMarginal>> {
    if anchor_bit >= 4 {
        return Err(Error::invalid("anchor_bit", "must be in 0..4"));
    }
    for k in cells.keys() {
        if k.len() != 4 || !k.chars().all(|c| c == '0' || c == '1') {
            return Err(Error::invalid("cells", format!("bad cell key {k}")));
        }
    }
    let factors: Vec<usize> = (0..4).filter(|&i| i != anchor_bit).collect();
    let missing: BTreeSet<String> = factors
        .iter()
        .flat_map(|&f| anchored_pairs(anchor_bit, f))
        .flat_map(|(a, b)| [a, b])
        .filter(|k| !cells.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing.into_iter().collect()));
    }
    factors
        .iter()
        .map(|&f| {
            let pairs = anchored_pairs(anchor_bit, f);
            let marginal = pairs.iter().map(|(a, b)| cells[a].mean - cells[b].mean).sum::<f64>() / pairs.len() as f64;
            let ci95 = per_target_deltas(cells, &pairs)
                .map(|d| {
                    bootstrap_clusters(d.len(), replicates, seed, |s| {
                        Some(s.iter().map(|&i| d[i]).sum::<f64>() / s.len() as f64)
                    })
                    .map(|b| b.ci95)
                })
                .transpose()?;
            Ok(FactorMarginal {
                factor: FACTOR_NAMES[f].to_string(),
                bit: f,
                marginal,
                ci95,
                pairs,
            })
        })
        .collect()
}

/// Per-target marginal over the targets present in every cell of `pairs`.
fn per_target_deltas(cells: &BTreeMap<String, CellSummary>, pairs: &[(String, String)]) -> Option<Vec<f64>> {
    let maps: Vec<(&BTreeMap<String, f64>, &BTreeMap<String, f64>)> = pairs
        .iter()
        .map(|(a, b)| Some((cells[a].per_target.as_ref()?, cells[b].per_target.as_ref()?)))
        .collect::<Option<_>>()?;
    let targets: Vec<&String> = maps[0]
        .0
        .keys()
        .filter(|t| maps.iter().all(|(a, b)| a.contains_key(*t) && b.contains_key(*t)))
        .collect();
    if targets.len() < 2 {
        return None;
    }
    Some(
        targets
            .iter()
            .map(|t| maps.iter().map(|(a, b)| a[*t] - b[*t]).sum::<f64>() / maps.len() as f64)
            .collect(),
    )
}
