//! Selection-bias audit of hyperparameter-search trial tables.
//!
//! The expected maximum of `N` IID draws with SD `sigma` above their mean is
//! approximated by `sqrt(2 ln N) sigma`. Per-dimension variance shares are
//! one-way omega-squared on random-phase trials, an approximation to a
//! functional ANOVA. Numeric dimensions with more than
//! [`MAX_CATEGORICAL_LEVELS`] distinct values are binned into
//! [`NUMERIC_BINS`] equal-count bins first.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, oneway_anova, sd, spearman};

pub const MAX_CATEGORICAL_LEVELS: usize = 10;
pub const NUMERIC_BINS: usize = 5;

/// `sqrt(2 ln n) * sigma`.
pub fn expected_max(n: usize, sigma: f64) -> f64 {
    (2.0 * (n as f64).ln()).sqrt() * sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Random,
    Guided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub trial_id: String,
    pub phase: Phase,
    pub seed: u64,
    pub objective: f64,
    /// Values by dimension, aligned with [`TrialTable::dimensions`].
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialTable {
    pub dimensions: Vec<String>,
    pub trials: Vec<Trial>,
}

impl TrialTable {
    pub fn new(dimensions: Vec<String>, trials: Vec<Trial>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &trials {
            if !t.objective.is_finite() {
                return Err(Error::invalid("objective", format!("non-finite objective in {}", t.trial_id)));
            }
            if t.values.len() != dimensions.len() {
                return Err(Error::invalid("dimensions", format!("trial {} has {} values", t.trial_id, t.values.len())));
            }
            if !seen.insert(t.trial_id.as_str()) {
                return Err(Error::invalid("trial_id", format!("duplicate {}", t.trial_id)));
            }
        }
        if trials.is_empty() {
            return Err(Error::invalid("trials", "table is empty"));
        }
        Ok(TrialTable { dimensions, trials })
    }

    /// Trials sorted by objective, best first (ties by trial id).
    pub fn ranked(&self) -> Vec<&Trial> {
        let mut v: Vec<&Trial> = self.trials.iter().collect();
        v.sort_by(|a, b| b.objective.total_cmp(&a.objective).then_with(|| a.trial_id.cmp(&b.trial_id)));
        v
    }
}

const FIXED_COLUMNS: [&str; 4] = ["trial_id", "phase", "seed", "objective"];

/// CSV with columns `trial_id,phase,seed,objective` followed by one column
/// per dimension.
pub fn read_trial_table<R: Read>(reader: R) -> Result<TrialTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[..4] != FIXED_COLUMNS {
        return Err(Error::MissingHeader {
            path: "<trial table>".into(),
            expected: FIXED_COLUMNS.join(","),
        });
    }
    let dimensions = header[4..].to_vec();
    let mut trials = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let phase = match &row[1] {
            "random" => Phase::Random,
            "guided" => Phase::Guided,
            p => return Err(Error::invalid("phase", format!("unknown phase {p}"))),
        };
        let seed = row[2].parse().map_err(|_| Error::invalid("seed", row[2].to_string()))?;
        let objective = row[3].parse().map_err(|_| Error::invalid("objective", row[3].to_string()))?;
        trials.push(Trial {
            trial_id: row[0].to_string(),
            phase,
            seed,
            objective,
            values: row.iter().skip(4).map(str::to_string).collect(),
        });
    }
    TrialTable::new(dimensions, trials)
}

pub fn write_trial_table<W: Write>(writer: W, table: &TrialTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(table.dimensions.iter().map(String::as_str));
    w.write_record(&header)?;
    for t in &table.trials {
        let phase = match t.phase {
            Phase::Random => "random",
            Phase::Guided => "guided",
        };
        let mut row = vec![t.trial_id.clone(), phase.to_string(), t.seed.to_string(), t.objective.to_string()];
        row.extend(t.values.iter().cloned());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revalidation {
    pub mean: f64,
    pub sd: f64,
    pub n_seeds: usize,
}

/// CSV `trial_id,mean,sd,n_seeds`.
pub fn read_revalidation<R: Read>(reader: R) -> Result<BTreeMap<String, Revalidation>> {
    #[derive(Deserialize)]
    struct Row {
        trial_id: String,
        mean: f64,
        sd: f64,
        n_seeds: usize,
    }
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let r: Row = row?;
        out.insert(r.trial_id, Revalidation { mean: r.mean, sd: r.sd, n_seeds: r.n_seeds });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRegression {
    pub rank: usize,
    pub trial_id: String,
    pub objective: f64,
    pub validated_mean: f64,
    pub validated_sd: f64,
    pub regression: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionShare {
    pub dimension: String,
    pub n_levels: usize,
    pub binned: bool,
    pub eta_sq: f64,
    pub omega_sq: f64,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxComparison {
    pub n_trials: usize,
    pub random_mean: f64,
    pub random_sd: f64,
    pub observed_excess: f64,
    pub expected_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAudit {
    pub top_k: usize,
    pub regressions: Vec<RankRegression>,
    pub spearman_top_k: Option<f64>,
    pub spearman_2_to_k: Option<f64>,
    pub shares: Vec<DimensionShare>,
    pub max_comparison: Option<MaxComparison>,
}

fn level_labels(values: &[&str]) -> (Vec<String>, bool) {
    let distinct: BTreeSet<&str> = values.iter().copied().collect();
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    match numeric {
        Some(x) if distinct.len() > MAX_CATEGORICAL_LEVELS => {
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
            let mut labels = vec![String::new(); x.len()];
            for (rank, &i) in order.iter().enumerate() {
                labels[i] = format!("bin{}", rank * NUMERIC_BINS / x.len());
            }
            (labels, true)
        }
        _ => (values.iter().map(|v| v.to_string()).collect(), false),
    }
}

pub fn audit_trials(
    table: &TrialTable,
    top_k: usize,
    revalidated: &BTreeMap<String, Revalidation>,
) -> Result<TrialAudit> {
    if top_k == 0 || top_k > table.trials.len() {
        return Err(Error::KTooLarge { k: top_k, available: table.trials.len(), what: "trials".into() });
    }
    let ranked = table.ranked();
    let top = &ranked[..top_k];
    let missing: Vec<String> = top
        .iter()
        .filter(|t| !revalidated.contains_key(&t.trial_id))
        .map(|t| t.trial_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingRevalidation(missing));
    }
    let regressions: Vec<RankRegression> = top
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let r = &revalidated[&t.trial_id];
            RankRegression {
                rank: i + 1,
                trial_id: t.trial_id.clone(),
                objective: t.objective,
                validated_mean: r.mean,
                validated_sd: r.sd,
                regression: t.objective - r.mean,
            }
        })
        .collect();
    let obj: Vec<f64> = regressions.iter().map(|r| r.objective).collect();
    let val: Vec<f64> = regressions.iter().map(|r| r.validated_mean).collect();
    let spearman_top_k = if top_k >= 3 { spearman(&obj, &val)? } else { None };
    let spearman_2_to_k = if top_k >= 4 { spearman(&obj[1..], &val[1..])? } else { None };

    let random: Vec<&Trial> = table.trials.iter().filter(|t| t.phase == Phase::Random).collect();
    let mut shares = Vec::new();
    if random.len() >= 3 {
        let y: Vec<f64> = random.iter().map(|t| t.objective).collect();
        for (d, name) in table.dimensions.iter().enumerate() {
            let vals: Vec<&str> = random.iter().map(|t| t.values[d].as_str()).collect();
            let (labels, binned) = level_labels(&vals);
            let n_levels = labels.iter().collect::<BTreeSet<_>>().len();
            if n_levels < 2 {
                continue;
            }
            match oneway_anova(&y, &labels) {
                Ok(a) => shares.push(DimensionShare {
                    dimension: name.clone(),
                    n_levels,
                    binned,
                    eta_sq: a.eta_sq,
                    omega_sq: a.omega_sq,
                    p: a.p,
                }),
                Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    let max_comparison = (random.len() >= 2).then(|| {
        let y: Vec<f64> = random.iter().map(|t| t.objective).collect();
        let (m, s) = (mean(&y), sd(&y));
        MaxComparison {
            n_trials: table.trials.len(),
            random_mean: m,
            random_sd: s,
            observed_excess: ranked[0].objective - m,
            expected_excess: expected_max(table.trials.len(), s),
        }
    });
    Ok(TrialAudit {
        top_k,
        regressions,
        spearman_top_k,
        spearman_2_to_k,
        shares,
        max_comparison,
    })
}
