//! Measurement records, binarisation schemes, cohort indices and CSV ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile;

/// Column order of the cohort CSV.
pub const CSV_HEADER: [&str; 11] = [
    "compound_id",
    "smiles",
    "target_uniprot",
    "family",
    "e3",
    "doi",
    "year",
    "dc50_nM",
    "dmax_pct",
    "cell_line",
    "label",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum E3Ligase {
    Crbn,
    Vhl,
    Other,
}

impl E3Ligase {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "CRBN" => E3Ligase::Crbn,
            "VHL" => E3Ligase::Vhl,
            _ => E3Ligase::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            E3Ligase::Crbn => "CRBN",
            E3Ligase::Vhl => "VHL",
            E3Ligase::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combinator {
    Or,
    And,
}

/// Threshold rule turning continuous readouts into an activity label.
///
/// An arm passes when `dc50 < dc50_threshold_nm` or `dmax > dmax_threshold_pct`.
/// Missing readouts are ignored: `Or` is true when any present arm passes,
/// `And` is true when every present arm passes. With no readouts the label is
/// undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarisationScheme {
    pub name: String,
    pub dc50_threshold_nm: f64,
    pub dmax_threshold_pct: f64,
    pub combinator: Combinator,
}

impl BinarisationScheme {
    pub fn new(
        name: impl Into<String>,
        dc50_threshold_nm: f64,
        dmax_threshold_pct: f64,
        combinator: Combinator,
    ) -> Result<Self> {
        if !(dc50_threshold_nm > 0.0 && dc50_threshold_nm.is_finite()) {
            return Err(Error::invalid("dc50_threshold_nM", "must be positive"));
        }
        if !(dmax_threshold_pct > 0.0 && dmax_threshold_pct <= 100.0) {
            return Err(Error::invalid("dmax_threshold_pct", "must lie in (0, 100]"));
        }
        Ok(Self {
            name: name.into(),
            dc50_threshold_nm,
            dmax_threshold_pct,
            combinator,
        })
    }

    /// The default scheme: DC50 < 1 uM OR Dmax > 50 %.
    pub fn default_or() -> Self {
        Self::new("or_1000nM_50pct", 1000.0, 50.0, Combinator::Or).unwrap()
    }

    /// The stricter variant: DC50 < 100 nM AND Dmax > 80 %.
    pub fn strict_and() -> Self {
        Self::new("and_100nM_80pct", 100.0, 80.0, Combinator::And).unwrap()
    }

    /// The four shipped schemes.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::default_or(),
            Self::strict_and(),
            Self::new("or_100nM_80pct", 100.0, 80.0, Combinator::Or).unwrap(),
            Self::new("and_1000nM_50pct", 1000.0, 50.0, Combinator::And).unwrap(),
        ]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::standard_set().into_iter().find(|s| s.name == name)
    }

    pub fn label(&self, dc50_nm: Option<f64>, dmax_pct: Option<f64>) -> Option<bool> {
        let arms = [
            dc50_nm.map(|v| v < self.dc50_threshold_nm),
            dmax_pct.map(|v| v > self.dmax_threshold_pct),
        ];
        let mut present = arms.iter().flatten().peekable();
        present.peek()?;
        Some(match self.combinator {
            Combinator::Or => present.any(|&a| a),
            Combinator::And => present.all(|&a| a),
        })
    }
}

/// One degradation measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub compound_id: String,
    pub structure: String,
    pub target_id: String,
    pub family_id: Option<String>,
    pub e3: E3Ligase,
    pub doi: String,
    pub year: i32,
    pub dc50_nm: Option<f64>,
    pub dmax_pct: Option<f64>,
    pub cell_line: Option<String>,
    pub label: bool,
    /// Whether `label` came from an explicit label column rather than binarisation.
    pub explicit_label: bool,
}

/// Immutable record collection with per-key position indices.
#[derive(Debug, Clone)]
pub struct Cohort {
    records: Vec<Record>,
    by_target: BTreeMap<String, Vec<usize>>,
    by_doi: BTreeMap<String, Vec<usize>>,
    by_family: BTreeMap<String, Vec<usize>>,
}

impl Cohort {
    pub fn new(records: Vec<Record>) -> Self {
        let mut by_target: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_doi: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_family: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_target.entry(r.target_id.clone()).or_default().push(i);
            by_doi.entry(r.doi.clone()).or_default().push(i);
            if let Some(f) = &r.family_id {
                by_family.entry(f.clone()).or_default().push(i);
            }
        }
        Self {
            records,
            by_target,
            by_doi,
            by_family,
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn by_target(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_target
    }

    pub fn by_doi(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_doi
    }

    pub fn by_family(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_family
    }

    pub fn target_records(&self, target: &str) -> &[usize] {
        self.by_target.get(target).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Records of `target`, grouped by DOI (sorted by DOI).
    pub fn papers_of(&self, target: &str) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in self.target_records(target) {
            out.entry(self.records[i].doi.as_str()).or_default().push(i);
        }
        out
    }

    /// New cohort containing `positions` (in the given order).
    pub fn subset(&self, positions: &[usize]) -> Cohort {
        Cohort::new(positions.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Re-derive every label from continuous readouts under `scheme`.
    /// Records lacking both readouts keep their label.
    pub fn relabel(&self, scheme: &BinarisationScheme) -> Cohort {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(l) = scheme.label(r.dc50_nm, r.dmax_pct) {
                    r.label = l;
                    r.explicit_label = false;
                }
                r
            })
            .collect();
        Cohort::new(records)
    }
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line_number: u64,
    pub reason_code: &'static str,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RejectionReport {
    pub rejections: Vec<Rejection>,
}

impl RejectionReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["line_number", "reason_code"])?;
        for r in &self.rejections {
            w.write_record([r.line_number.to_string(), r.reason_code.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn opt(s: &str) -> Option<&str> {
    let s = s.trim();
    (!s.is_empty()).then_some(s)
}

fn parse_row(row: &csv::StringRecord, scheme: &BinarisationScheme) -> Result<Record, &'static str> {
    if row.len() != CSV_HEADER.len() {
        return Err("field_count");
    }
    let field = |i: usize| row.get(i).unwrap_or("");
    let compound_id = opt(field(0)).ok_or("missing_compound_id")?.to_string();
    let target_id = opt(field(2)).ok_or("missing_target")?.to_string();
    let doi = opt(field(5)).ok_or("missing_doi")?.to_string();
    let year: i32 = field(6).trim().parse().map_err(|_| "bad_year")?;
    if !(1000..=9999).contains(&year) {
        return Err("bad_year");
    }
    let dc50_nm = match opt(field(7)) {
        None => None,
        Some(s) => {
            let v: f64 = s.parse().map_err(|_| "bad_dc50")?;
            if !(v > 0.0 && v.is_finite()) {
                return Err("bad_dc50");
            }
            Some(v)
        }
    };
    let dmax_pct = match opt(field(8)) {
        None => None,
        Some(s) => {
            let v: f64 = s.parse().map_err(|_| "bad_dmax")?;
            if !(0.0..=100.0).contains(&v) {
                return Err("bad_dmax");
            }
            Some(v)
        }
    };
    let explicit = match field(10).trim() {
        "" => None,
        "0" => Some(false),
        "1" => Some(true),
        _ => return Err("bad_label"),
    };
    let (label, explicit_label) = match explicit {
        Some(l) => (l, true),
        None => (scheme.label(dc50_nm, dmax_pct).ok_or("no_measurement")?, false),
    };
    Ok(Record {
        compound_id,
        structure: field(1).to_string(),
        target_id,
        family_id: opt(field(3)).map(str::to_string),
        e3: E3Ligase::parse(field(4)),
        doi,
        year,
        dc50_nm,
        dmax_pct,
        cell_line: opt(field(9)).map(str::to_string),
        label,
        explicit_label,
    })
}

/// Read a cohort CSV. Row-level failures are collected in the rejection report.
pub fn load_cohort(path: &Path, scheme: &BinarisationScheme) -> Result<(Cohort, RejectionReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows = reader.records();
    let header = rows.next().transpose()?;
    let header_ok = header
        .as_ref()
        .map(|h| h.iter().map(str::trim).eq(CSV_HEADER.iter().copied()))
        .unwrap_or(false);
    if !header_ok {
        return Err(Error::MissingHeader {
            path: path.to_path_buf(),
            expected: CSV_HEADER.join(","),
        });
    }
    let mut records = Vec::new();
    let mut report = RejectionReport::default();
    for (i, row) in rows.enumerate() {
        let line_number = i as u64 + 2;
        let parsed = match row {
            Ok(row) => parse_row(&row, scheme),
            Err(_) => Err("unreadable"),
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(reason_code) => {
                log::warn!("{}:{line_number}: rejected ({reason_code})", path.display());
                report.rejections.push(Rejection {
                    line_number,
                    reason_code,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::NoValidRows(path.to_path_buf()));
    }
    Ok((Cohort::new(records), report))
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a cohort in the ingestion schema, always emitting the label column.
pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in cohort.records() {
        w.write_record([
            r.compound_id.as_str(),
            r.structure.as_str(),
            r.target_id.as_str(),
            r.family_id.as_deref().unwrap_or(""),
            r.e3.as_str(),
            r.doi.as_str(),
            &r.year.to_string(),
            &fmt_opt_f64(r.dc50_nm),
            &fmt_opt_f64(r.dmax_pct),
            r.cell_line.as_deref().unwrap_or(""),
            if r.label { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EligibilityRule {
    /// n >= 10 records and positive rate within [0.1, 0.9].
    Loto,
    /// At least 3 publications with at least 5 records each.
    CrossLab,
}

pub const LOTO_MIN_RECORDS: usize = 10;
pub const LOTO_POS_RATE: (f64, f64) = (0.1, 0.9);
pub const CROSSLAB_MIN_PAPERS: usize = 3;
pub const CROSSLAB_MIN_PER_PAPER: usize = 5;

/// DOIs of `target` holding at least the cross-lab minimum of records.
pub fn qualifying_papers<'a>(cohort: &'a Cohort, target: &str) -> Vec<&'a str> {
    cohort
        .papers_of(target)
        .into_iter()
        .filter(|(_, idx)| idx.len() >= CROSSLAB_MIN_PER_PAPER)
        .map(|(doi, _)| doi)
        .collect()
}

pub fn is_eligible(cohort: &Cohort, target: &str, rule: EligibilityRule) -> bool {
    let idx = cohort.target_records(target);
    match rule {
        EligibilityRule::Loto => {
            if idx.len() < LOTO_MIN_RECORDS {
                return false;
            }
            let pos = idx.iter().filter(|&&i| cohort.records()[i].label).count();
            let rate = pos as f64 / idx.len() as f64;
            rate >= LOTO_POS_RATE.0 && rate <= LOTO_POS_RATE.1
        }
        EligibilityRule::CrossLab => qualifying_papers(cohort, target).len() >= CROSSLAB_MIN_PAPERS,
    }
}

/// Sorted target ids satisfying `rule`.
pub fn eligible_targets(cohort: &Cohort, rule: EligibilityRule) -> Vec<String> {
    cohort
        .by_target()
        .keys()
        .filter(|t| is_eligible(cohort, t, rule))
        .cloned()
        .collect()
}

impl fmt::Display for EligibilityRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EligibilityRule::Loto => f.write_str("LOTO"),
            EligibilityRule::CrossLab => f.write_str("CROSSLAB"),
        }
    }
}

/// Distribution summary of absolute log10 fold changes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldChangeRow {
    pub target_id: String,
    pub n_pairs: usize,
    pub median_abs_log10: f64,
    pub q25_abs_log10: f64,
    pub q75_abs_log10: f64,
    pub p95_abs_log10: f64,
}

impl FoldChangeRow {
    pub fn median_fold_change(&self) -> f64 {
        10f64.powf(self.median_abs_log10)
    }

    pub fn iqr_fold_change(&self) -> (f64, f64) {
        (10f64.powf(self.q25_abs_log10), 10f64.powf(self.q75_abs_log10))
    }

    pub fn p95_fold_change(&self) -> f64 {
        10f64.powf(self.p95_abs_log10)
    }

    fn from_values(target_id: String, values: &mut [f64]) -> Self {
        values.sort_by(f64::total_cmp);
        Self {
            target_id,
            n_pairs: values.len(),
            median_abs_log10: quantile(values, 0.5),
            q25_abs_log10: quantile(values, 0.25),
            q75_abs_log10: quantile(values, 0.75),
            p95_abs_log10: quantile(values, 0.95),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldChangeTable {
    pub rows: Vec<FoldChangeRow>,
    pub aggregate: Option<FoldChangeRow>,
    /// Same-compound cross-DOI comparisons skipped because a DC50 was missing.
    pub skipped_missing_dc50: usize,
}

/// Cross-publication DC50 reproducibility on identical compounds.
///
/// For every target and compound, each unordered pair of DOIs that both
/// measured the compound contributes one fold change. When a DOI holds several
/// measurements of the same compound their geometric mean DC50 is used.
pub fn fold_change_anchor(cohort: &Cohort) -> FoldChangeTable {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    let mut skipped = 0usize;
    for (target, idx) in cohort.by_target() {
        // compound -> doi -> (sum log10 dc50, count, any missing)
        let mut per: BTreeMap<&str, BTreeMap<&str, (f64, usize, bool)>> = BTreeMap::new();
        for &i in idx {
            let r = &cohort.records()[i];
            let e = per
                .entry(r.compound_id.as_str())
                .or_default()
                .entry(r.doi.as_str())
                .or_insert((0.0, 0, false));
            match r.dc50_nm {
                Some(v) => {
                    e.0 += v.log10();
                    e.1 += 1;
                }
                None => e.2 = true,
            }
        }
        let mut values = Vec::new();
        for dois in per.values() {
            let entries: Vec<_> = dois.values().collect();
            for a in 0..entries.len() {
                for b in a + 1..entries.len() {
                    let (sa, na, _) = *entries[a];
                    let (sb, nb, _) = *entries[b];
                    if na == 0 || nb == 0 {
                        skipped += 1;
                        continue;
                    }
                    values.push((sa / na as f64 - sb / nb as f64).abs());
                }
            }
        }
        if !values.is_empty() {
            all.extend_from_slice(&values);
            rows.push(FoldChangeRow::from_values(target.clone(), &mut values));
        }
    }
    if all.is_empty() {
        log::warn!("no same-compound cross-publication DC50 pairs found");
    }
    let aggregate = (!all.is_empty()).then(|| FoldChangeRow::from_values("aggregate".into(), &mut all));
    FoldChangeTable {
        rows,
        aggregate,
        skipped_missing_dc50: skipped,
    }
}
