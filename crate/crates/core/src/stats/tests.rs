//! Paired and rank-based tests.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{average_ranks, pearson};
use crate::error::{Error, Result};

/// Sample sizes up to this use the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// min(W+, W-)
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    /// P(T+ >= W+) under the null: evidence that deltas tend to be positive.
    pub p_greater: f64,
    /// P(T+ <= W+) under the null.
    pub p_less: f64,
    pub n_effective: usize,
    pub exact: bool,
}

/// Wilcoxon signed-rank test on paired differences.
///
/// Zero deltas are dropped, tied magnitudes receive averaged ranks. For
/// `n_effective <= 25` p-values come from the exact permutation distribution
/// of the (possibly tied) ranks; beyond that a normal approximation with the
/// tie-corrected variance and no continuity correction is used.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<WilcoxonResult> {
    let nz: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Degenerate("all paired deltas are zero".into()));
    }
    let n = nz.len();
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);

    let (p_two_sided, p_greater, p_less, exact) = if n <= WILCOXON_EXACT_MAX_N {
        // Averaged ranks are half-integers; work with doubled ranks.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max_sum + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &d in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] > 0.0 {
                    counts[s + d] += counts[s];
                }
            }
            reach += d;
        }
        let denom = 2f64.powi(n as i32);
        let cdf = |x: f64| -> f64 {
            let lim = (x * 2.0).round() as usize;
            counts[..=lim.min(max_sum)].iter().sum::<f64>() / denom
        };
        let wp2 = (w_plus * 2.0).round() as usize;
        let greater = counts[wp2..].iter().sum::<f64>() / denom;
        let less = cdf(w_plus);
        ((2.0 * cdf(w)).min(1.0), greater, less, true)
    } else {
        let mu = total / 2.0;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let nf = n as f64;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mu) / var.sqrt();
        let norm = Normal::standard();
        let upper = 1.0 - norm.cdf(z);
        let lower = norm.cdf(z);
        ((2.0 * upper.min(lower)).min(1.0), upper, lower, false)
    };

    Ok(WilcoxonResult {
        w,
        w_plus,
        w_minus,
        p_two_sided,
        p_greater,
        p_less,
        n_effective: n,
        exact,
    })
}

/// Spearman rank correlation (Pearson on averaged ranks).
///
/// Returns `Ok(None)` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid("y", "length differs from x"));
    }
    if x.len() < 3 {
        return Err(Error::invalid("x", "spearman needs at least 3 pairs"));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolmResult {
    /// Per hypothesis, in input order.
    pub reject: Vec<bool>,
    /// Holm threshold alpha / (m - i + 1) at each hypothesis' sorted position.
    pub thresholds: Vec<f64>,
    /// Holm-adjusted p-values (monotone, capped at 1).
    pub adjusted: Vec<f64>,
}

/// Holm step-down multiplicity correction.
pub fn holm(p_values: &[f64], alpha: f64) -> HolmResult {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut reject = vec![false; m];
    let mut thresholds = vec![0.0; m];
    let mut adjusted = vec![0.0; m];
    let mut still_rejecting = true;
    let mut running = 0f64;
    for (i, &h) in order.iter().enumerate() {
        let factor = (m - i) as f64;
        thresholds[h] = alpha / factor;
        if still_rejecting && p_values[h] <= thresholds[h] {
            reject[h] = true;
        } else {
            still_rejecting = false;
        }
        running = running.max((p_values[h] * factor).min(1.0));
        adjusted[h] = running;
    }
    HolmResult {
        reject,
        thresholds,
        adjusted,
    }
}

#[cfg(test)]
mod unit {
    use super::*;

    #[test]
    fn all_same_sign_ten() {
        let d: Vec<f64> = (1..=10).map(|i| -(i as f64) * 0.01).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(r.w, 0.0);
        assert!((r.p_two_sided - 2.0 / 1024.0).abs() < 1e-15);
        assert!((r.p_less - 1.0 / 1024.0).abs() < 1e-15);
        assert!(r.exact);
    }

    #[test]
    fn symmetric_pair() {
        let r = wilcoxon_signed_rank(&[0.3, -0.3]).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn zeros_dropped_and_all_zero_rejected() {
        let r = wilcoxon_signed_rank(&[0.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(r.n_effective, 2);
        assert!(wilcoxon_signed_rank(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn normal_approximation_kicks_in() {
        let d: Vec<f64> = (1..=40).map(|i| if i % 5 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(!r.exact);
        assert!(r.p_two_sided > 0.0 && r.p_two_sided < 0.05);
        assert!((r.p_greater + r.p_less - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_identity_and_constant() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 4]).unwrap(), None);
        assert!(spearman(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn holm_eight_hypotheses() {
        let p = [0.047, 0.2, 0.001, 0.5, 0.03, 0.9, 0.006, 0.3];
        let r = holm(&p, 0.05);
        assert_eq!(r.thresholds[2], 0.05 / 8.0);
        assert_eq!(r.thresholds[2], 0.00625);
        assert!(r.reject[2]);
        assert!(r.reject[6]); // 0.006 <= 0.05/7
        assert!(!r.reject[4]); // 0.03 > 0.05/6
        assert!(!r.reject[0]);
        assert!((r.adjusted[2] - 0.008).abs() < 1e-12);
    }
}
