//! Post-hoc probability calibration and the target-disjoint calibration
//! protocol.
//!
//! Both maps act on `x = logit(clip(p))` with `clip` to `[1e-6, 1 - 1e-6]`:
//! Platt returns `sigmoid(a x + b)`, temperature returns `sigmoid(x / t)`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::eval::fit_predict;
use crate::features::Fingerprint;
use crate::metrics::{auroc, brier, ece10};
use crate::model::ModelSpec;
use crate::rng;
use crate::splits::FoldSet;

pub const CLIP_EPS: f64 = 1e-6;
pub const NEWTON_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 100;
pub const SLOPE_CAP: f64 = 50.0;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
pub const GOLDEN_TOL: f64 = 1e-6;
pub const MIN_CALIBRATION_TARGETS: usize = 5;

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(CLIP_EPS, 1.0 - CLIP_EPS);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub const IDENTITY: PlattParams = PlattParams { a: 1.0, b: 0.0 };

    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.a * logit(p) + self.b)
    }

    pub fn apply_all(&self, ps: &[f64]) -> Vec<f64> {
        ps.iter().map(|&p| self.apply(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlattFit {
    pub params: PlattParams,
    pub iterations: usize,
    pub converged: bool,
    /// `|a|` hit the cap (separable data).
    pub capped: bool,
}

fn check_fit_input(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("labels", "length differs from scores"));
    }
    if scores.len() < 10 {
        return Err(Error::invalid("scores", "calibration needs at least 10 points"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Logistic regression of labels on `logit(p)` by damped Newton iteration.
///
/// With `smoothing`, targets become `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`.
pub fn fit_platt(scores: &[f64], labels: &[bool], smoothing: bool) -> Result<PlattFit> {
    check_fit_input(scores, labels)?;
    let x: Vec<f64> = scores.iter().map(|&p| logit(p)).collect();
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let (hi, lo) = if smoothing {
        ((n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    } else {
        (1.0, 0.0)
    };
    let t: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    let nll = |a: f64, b: f64| -> f64 {
        x.iter()
            .zip(&t)
            .map(|(&xi, &ti)| {
                let z = a * xi + b;
                // log(1 + e^z) - t z, stable
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - ti * z
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((n_pos + 1.0) / (n_neg + 1.0)).ln());
    let mut f = nll(a, b);
    let mut converged = false;
    let mut capped = false;
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &ti) in x.iter().zip(&t) {
            let p = sigmoid(a * xi + b);
            let d = p - ti;
            let w = p * (1.0 - p);
            g0 += d * xi;
            g1 += d;
            h00 += w * xi * xi;
            h01 += w * xi;
            h11 += w;
        }
        h00 += 1e-12;
        h11 += 1e-12;
        let det = h00 * h11 - h01 * h01;
        let (da, db) = if det > 0.0 {
            ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
        } else {
            (g0, g1)
        };
        let mut step = 1.0;
        let (mut na, mut nb, mut nf);
        loop {
            na = a - step * da;
            nb = b - step * db;
            nf = nll(na, nb);
            if nf <= f || step < 1e-10 {
                break;
            }
            step /= 2.0;
        }
        let moved = (na - a).abs().max((nb - b).abs());
        a = na;
        b = nb;
        f = nf;
        if a.abs() > SLOPE_CAP {
            a = SLOPE_CAP.copysign(a);
            capped = true;
            break;
        }
        if moved < NEWTON_TOL {
            converged = true;
            break;
        }
    }
    Ok(PlattFit {
        params: PlattParams { a, b },
        iterations,
        converged,
        capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParam {
    pub t: f64,
}

impl TemperatureParam {
    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(logit(p) / self.t)
    }

    pub fn apply_all(&self, ps: &[f64]) -> Vec<f64> {
        ps.iter().map(|&p| self.apply(p)).collect()
    }
}

/// Golden-section minimisation of the NLL of `sigmoid(logit(p) / t)` over
/// `t` in `[0.05, 20]`.
pub fn fit_temperature(scores: &[f64], labels: &[bool]) -> Result<TemperatureParam> {
    check_fit_input(scores, labels)?;
    let x: Vec<f64> = scores.iter().map(|&p| logit(p)).collect();
    let nll = |t: f64| -> f64 {
        x.iter()
            .zip(labels)
            .map(|(&xi, &l)| {
                let z = xi / t;
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - if l { z } else { 0.0 }
            })
            .sum()
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = TEMPERATURE_RANGE;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (nll(c), nll(d));
    while hi - lo > GOLDEN_TOL {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = nll(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = nll(d);
        }
    }
    Ok(TemperatureParam { t: (lo + hi) / 2.0 })
}

/// Per-fold partition of the training side into a model-fit block and a
/// target-disjoint calibration block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CalibrationSplit {
    pub fold_key: String,
    pub fit: Vec<usize>,
    pub calibration: Vec<usize>,
    pub calibration_targets: Vec<String>,
    pub test: Vec<usize>,
}

pub fn target_disjoint_calibration(cohort: &Cohort, fs: &FoldSet, frac: f64, seed: u64) -> Result<Vec<CalibrationSplit>> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid("frac", "must lie in (0, 1)"));
    }
    let recs = cohort.records();
    fs.folds
        .iter()
        .enumerate()
        .map(|(fi, fold)| {
            let test_targets: BTreeSet<&str> = fold.test.iter().map(|&i| recs[i].target_id.as_str()).collect();
            let mut pool: Vec<&str> = fold
                .train
                .iter()
                .map(|&i| recs[i].target_id.as_str())
                .filter(|t| !test_targets.contains(t))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if pool.len() < MIN_CALIBRATION_TARGETS {
                return Err(Error::invalid(
                    "fold",
                    format!("fold {} has {} non-test targets, need {MIN_CALIBRATION_TARGETS}", fold.key, pool.len()),
                ));
            }
            let n_cal = (frac * pool.len() as f64).ceil() as usize;
            pool.shuffle(&mut rng::stream(seed, fi as u64));
            let mut chosen: Vec<String> = pool[..n_cal].iter().map(|s| s.to_string()).collect();
            chosen.sort();
            let cal: BTreeSet<&str> = chosen.iter().map(String::as_str).collect();
            let (calibration, fit): (Vec<usize>, Vec<usize>) = fold
                .train
                .iter()
                .filter(|&&i| !test_targets.contains(recs[i].target_id.as_str()))
                .partition(|&&i| cal.contains(recs[i].target_id.as_str()));
            Ok(CalibrationSplit {
                fold_key: fold.key.clone(),
                fit,
                calibration,
                calibration_targets: chosen,
                test: fold.test.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub fold_key: String,
    pub ece_raw: f64,
    pub ece_platt: f64,
    pub ece_temp: f64,
    pub brier_raw: f64,
    pub brier_platt: f64,
    pub auroc_raw: Option<f64>,
    pub auroc_platt: Option<f64>,
    pub auroc_temp: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub flags: Vec<String>,
}

/// Raw, Platt and temperature metrics on calibrator-fitted probabilities.
pub fn calibration_row(fold_key: &str, cal_probs: &[f64], cal_labels: &[bool], test_probs: &[f64], test_labels: &[bool], smoothing: bool) -> CalibrationRow {
    let mut flags = Vec::new();
    let fitted = match (fit_platt(cal_probs, cal_labels, smoothing), fit_temperature(cal_probs, cal_labels)) {
        (Ok(p), Ok(t)) => {
            if p.capped {
                flags.push("slope_capped".to_string());
            }
            if !p.converged && !p.capped {
                flags.push("not_converged".to_string());
            }
            if p.params.a <= 0.0 {
                flags.push("non_positive_slope".to_string());
            }
            Some((p.params, t))
        }
        (Err(e), _) | (_, Err(e)) => {
            flags.push(match e {
                Error::SingleClass => "calibration_single_class".to_string(),
                other => format!("calibration_{}", other.code()),
            });
            None
        }
    };
    // A failed fit passes raw probabilities through.
    let (platt, temp) = fitted.unwrap_or((PlattParams::IDENTITY, TemperatureParam { t: 1.0 }));
    let (p_platt, p_temp) = match fitted {
        Some(_) => (platt.apply_all(test_probs), temp.apply_all(test_probs)),
        None => (test_probs.to_vec(), test_probs.to_vec()),
    };
    CalibrationRow {
        fold_key: fold_key.to_string(),
        ece_raw: ece10(test_probs, test_labels),
        ece_platt: ece10(&p_platt, test_labels),
        ece_temp: ece10(&p_temp, test_labels),
        brier_raw: brier(test_probs, test_labels),
        brier_platt: brier(&p_platt, test_labels),
        auroc_raw: auroc(test_probs, test_labels),
        auroc_platt: auroc(&p_platt, test_labels),
        auroc_temp: auroc(&p_temp, test_labels),
        a: platt.a,
        b: platt.b,
        t: temp.t,
        flags,
    }
}

/// Train on the fit block, calibrate on the calibration block, score on test.
pub fn run_calibration(
    cohort: &Cohort,
    fps: &[Fingerprint],
    fs: &FoldSet,
    model: &ModelSpec,
    frac: f64,
    smoothing: bool,
    seed: u64,
) -> Result<Vec<CalibrationRow>> {
    let splits = target_disjoint_calibration(cohort, fs, frac, seed)?;
    let labels = cohort.labels();
    let pick = |idx: &[usize]| -> Vec<bool> { idx.iter().map(|&i| labels[i]).collect() };
    let model = model.with_seed(seed);
    splits
        .par_iter()
        .map(|s| {
            let y_fit = pick(&s.fit);
            let mut both = s.calibration.clone();
            both.extend(&s.test);
            let probs = fit_predict(fps, &s.fit, &y_fit, &both, &model)?;
            let (cal, test) = probs.split_at(s.calibration.len());
            Ok(calibration_row(&s.fold_key, cal, &pick(&s.calibration), test, &pick(&s.test), smoothing))
        })
        .collect()
}
