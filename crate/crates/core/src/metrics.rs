//! Scoring functions and fold aggregation.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// Number of seeded tie-shuffles averaged by [`auprc`].
pub const AUPRC_TIE_SHUFFLES: u64 = 10;
pub const DEFAULT_COVERAGES: [f64; 8] = [1.0, 0.9, 0.8, 0.7, 0.5, 0.3, 0.1, 0.05];

fn check_lengths(scores: &[f64], labels: &[bool]) {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
}

/// Mann-Whitney AUROC, ties counted as one half. `None` for single-class input.
///
/// Computed from doubled mid-ranks in integer arithmetic, so the value is the
/// correctly rounded `(concordant + 0.5 * tied) / (n_pos * n_neg)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    check_lengths(scores, labels);
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, doubled mid-rank = i + j + 2
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum2 += pos_in_group * (i + j + 2) as u64;
        i = j + 1;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Some(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Average precision of labels already in ranked order.
pub fn average_precision_ranked(ranked_labels: &[bool]) -> Option<f64> {
    let n_pos = ranked_labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranked_labels.iter().enumerate() {
        if l {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApEstimate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Step-wise average precision averaged over seeded random orderings of tied
/// scores; `min`/`max` expose the tie spread.
pub fn auprc(scores: &[f64], labels: &[bool], seed: u64) -> Option<ApEstimate> {
    check_lengths(scores, labels);
    if !labels.iter().any(|&l| l) {
        return None;
    }
    let values: Vec<f64> = (0..AUPRC_TIE_SHUFFLES)
        .map(|r| {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.shuffle(&mut rng::stream(seed, r));
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let ranked: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
            average_precision_ranked(&ranked).unwrap()
        })
        .collect();
    Some(ApEstimate {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn brier(probs: &[f64], labels: &[bool]) -> f64 {
    check_lengths(probs, labels);
    if probs.is_empty() {
        return 0.0;
    }
    probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| (p - if l { 1.0 } else { 0.0 }).powi(2))
        .sum::<f64>()
        / probs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean_prob: f64,
    pub mean_label: f64,
}

/// Bin index for ten equal-width bins `[i/10, (i+1)/10)`, the last closed.
fn bin_of(p: f64) -> usize {
    ((p * 10.0).floor() as usize).min(9)
}

pub fn reliability_table(probs: &[f64], labels: &[bool]) -> Vec<ReliabilityBin> {
    check_lengths(probs, labels);
    let mut n = [0usize; 10];
    let mut sp = [0f64; 10];
    let mut sl = [0f64; 10];
    for (&p, &l) in probs.iter().zip(labels) {
        let b = bin_of(p);
        n[b] += 1;
        sp[b] += p;
        sl[b] += if l { 1.0 } else { 0.0 };
    }
    (0..10)
        .map(|b| ReliabilityBin {
            lo: b as f64 / 10.0,
            hi: (b + 1) as f64 / 10.0,
            n: n[b],
            mean_prob: if n[b] > 0 { sp[b] / n[b] as f64 } else { 0.0 },
            mean_label: if n[b] > 0 { sl[b] / n[b] as f64 } else { 0.0 },
        })
        .collect()
}

/// Expected calibration error over ten equal-width bins.
pub fn ece10(probs: &[f64], labels: &[bool]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total = probs.len() as f64;
    reliability_table(probs, labels)
        .iter()
        .filter(|b| b.n > 0)
        .map(|b| b.n as f64 / total * (b.mean_label - b.mean_prob).abs())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveragePoint {
    pub coverage: f64,
    pub n_kept: usize,
    /// `None` when the retained set is single-class.
    pub auroc: Option<f64>,
}

/// AUROC on the `ceil(c * n)` most confident predictions, confidence being
/// `max(p, 1 - p)`; equal confidences keep input order.
pub fn risk_coverage(probs: &[f64], labels: &[bool], coverages: &[f64]) -> Result<Vec<CoveragePoint>> {
    check_lengths(probs, labels);
    if let Some(c) = coverages.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
        return Err(Error::invalid("coverages", format!("{c} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let conf = |i: usize| probs[i].max(1.0 - probs[i]);
    order.sort_by(|&a, &b| conf(b).total_cmp(&conf(a)));
    Ok(coverages
        .iter()
        .map(|&c| {
            let keep = ((c * probs.len() as f64).ceil() as usize).min(probs.len());
            let kept = &order[..keep];
            let p: Vec<f64> = kept.iter().map(|&i| probs[i]).collect();
            let l: Vec<bool> = kept.iter().map(|&i| labels[i]).collect();
            CoveragePoint {
                coverage: c,
                n_kept: keep,
                auroc: auroc(&p, &l),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldScore {
    pub fold_key: String,
    pub n: usize,
    pub pos_rate: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub brier: f64,
    pub ece10: f64,
    pub degenerate: bool,
}

pub fn score_fold(fold_key: &str, probs: &[f64], labels: &[bool], seed: u64) -> FoldScore {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l).count();
    let auc = auroc(probs, labels);
    FoldScore {
        fold_key: fold_key.to_string(),
        n,
        pos_rate: if n > 0 { pos as f64 / n as f64 } else { 0.0 },
        auroc: auc,
        auprc: auprc(probs, labels, seed).map(|a| a.mean),
        brier: brier(probs, labels),
        ece10: ece10(probs, labels),
        degenerate: auc.is_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Aggregation {
    MacroMean,
    Pooled,
}

/// Raw predictions of one fold, for pooled aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPredictions {
    pub fold_key: String,
    pub probs: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Unweighted mean AUROC over non-degenerate folds.
pub fn macro_auroc(scores: &[FoldScore]) -> Result<f64> {
    let v: Vec<f64> = scores.iter().filter_map(|s| s.auroc).collect();
    if v.is_empty() {
        return Err(Error::AllDegenerate);
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// AUROC on the concatenation of every fold's predictions.
pub fn pooled_auroc(folds: &[FoldPredictions]) -> Result<f64> {
    let probs: Vec<f64> = folds.iter().flat_map(|f| f.probs.iter().copied()).collect();
    let labels: Vec<bool> = folds.iter().flat_map(|f| f.labels.iter().copied()).collect();
    auroc(&probs, &labels).ok_or(Error::AllDegenerate)
}

pub fn aggregate(folds: &[FoldPredictions], mode: Aggregation) -> Result<f64> {
    match mode {
        Aggregation::MacroMean => {
            let scores: Vec<FoldScore> = folds
                .iter()
                .map(|f| score_fold(&f.fold_key, &f.probs, &f.labels, 0))
                .collect();
            macro_auroc(&scores)
        }
        Aggregation::Pooled => pooled_auroc(folds),
    }
}

/// Normalised trapezoidal area under an `(s, auroc)` curve over `[lo, hi]`,
/// interpolating linearly at range edges that fall between points.
pub fn auspc(points: &[(f64, f64)], lo: f64, hi: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("points", "need at least two points"));
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::invalid("points", "s must be strictly increasing"));
    }
    if !(hi > lo) || lo < points[0].0 || hi > points[points.len() - 1].0 {
        return Err(Error::invalid("range", "range not covered by points"));
    }
    let interp = |s: f64| -> f64 {
        let k = points.windows(2).position(|w| s >= w[0].0 && s <= w[1].0).unwrap();
        let (a, b) = (points[k], points[k + 1]);
        a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
    };
    let mut xs = vec![(lo, interp(lo))];
    xs.extend(points.iter().copied().filter(|p| p.0 > lo && p.0 < hi));
    xs.push((hi, interp(hi)));
    let area: f64 = xs.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    Ok(area / (hi - lo))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV header `protocol,fold_key,n,pos_rate,auroc,auprc,brier,ece10,degenerate`.
pub fn write_fold_scores<W: Write>(out: W, protocol: &str, scores: &[FoldScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["protocol", "fold_key", "n", "pos_rate", "auroc", "auprc", "brier", "ece10", "degenerate"])?;
    for s in scores {
        w.write_record([
            protocol.to_string(),
            s.fold_key.clone(),
            s.n.to_string(),
            format!("{:.6}", s.pos_rate),
            opt(s.auroc),
            opt(s.auprc),
            format!("{:.6}", s.brier),
            format!("{:.6}", s.ece10),
            s.degenerate.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod unit {
    use super::*;

    #[test]
    fn auroc_basics() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(auroc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn ap_ranked_first() {
        let a = auprc(&[0.9, 0.8, 0.1], &[true, true, false], 1).unwrap();
        assert_eq!(a.mean, 1.0);
        assert!(auprc(&[0.1], &[false], 1).is_none());
    }

    #[test]
    fn brier_ece_simple() {
        let l = [true, false, true, false];
        assert_eq!(brier(&[1.0, 0.0, 1.0, 0.0], &l), 0.0);
        assert_eq!(ece10(&[1.0, 0.0, 1.0, 0.0], &l), 0.0);
        assert_eq!(brier(&[0.5; 4], &l), 0.25);
        assert_eq!(ece10(&[0.5; 4], &l), 0.0);
    }

    #[test]
    fn ece_hand_bins() {
        // bin 0: p 0.05 0.05 labels 0 1 -> |0.5-0.05| * 2/20
        // bin 9: p 1.0 x 8, labels 6 true -> |0.75-1| * 8/20
        // bin 5: p 0.55 x 10, labels 5 true -> |0.5-0.55| * 10/20
        let mut p = vec![0.05, 0.05];
        let mut l = vec![false, true];
        p.extend([1.0; 8]);
        l.extend([true, true, true, true, true, true, false, false]);
        p.extend([0.55; 10]);
        l.extend((0..10).map(|i| i < 5));
        let expect = 0.45 * 2.0 / 20.0 + 0.25 * 8.0 / 20.0 + 0.05 * 10.0 / 20.0;
        assert!((ece10(&p, &l) - expect).abs() < 1e-12);
    }

    #[test]
    fn coverage_full_and_degenerate() {
        let p = [0.99, 0.01, 0.6, 0.4, 0.55];
        let l = [true, false, false, true, true];
        let rc = risk_coverage(&p, &l, &[1.0, 0.2]).unwrap();
        assert_eq!(rc[0].auroc, auroc(&p, &l));
        assert_eq!(rc[1].n_kept, 1);
        assert_eq!(rc[1].auroc, None);
        assert!(risk_coverage(&p, &l, &[0.0]).is_err());
    }

    #[test]
    fn macro_of_two() {
        let mk = |a| FoldScore {
            fold_key: String::new(),
            n: 1,
            pos_rate: 0.5,
            auroc: a,
            auprc: None,
            brier: 0.0,
            ece10: 0.0,
            degenerate: a.is_none(),
        };
        assert!((macro_auroc(&[mk(Some(0.6)), mk(Some(0.8)), mk(None)]).unwrap() - 0.7).abs() < 1e-12);
        assert!(matches!(macro_auroc(&[mk(None)]), Err(Error::AllDegenerate)));
    }

    #[test]
    fn auspc_closed_forms() {
        assert!((auspc(&[(0.0, 0.7), (1.0, 0.7)], 0.0, 1.0).unwrap() - 0.7).abs() < 1e-12);
        assert!((auspc(&[(0.0, 0.5), (1.0, 1.0)], 0.0, 1.0).unwrap() - 0.75).abs() < 1e-12);
        // edge interpolation: line 0.5 + 0.5 s over [0.2, 0.6] -> value at 0.4
        assert!((auspc(&[(0.0, 0.5), (1.0, 1.0)], 0.2, 0.6).unwrap() - 0.7).abs() < 1e-12);
        assert!(auspc(&[(1.0, 0.5), (0.0, 1.0)], 0.0, 1.0).is_err());
        assert!(auspc(&[(0.0, 0.5), (1.0, 1.0)], 0.0, 1.5).is_err());
    }
}
