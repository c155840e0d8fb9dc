//! ANOVA decompositions and bias-corrected effect sizes.
//!
//! Effect sizes follow Hays. With `SS_T` the total sum of squares:
//!
//! - one-way: `omega2 = (SS_b - df_b * MS_w) / (SS_T + MS_w)`
//! - two-way Type-II, per term `X` in {A, B, AxB}:
//!   `omega2_X = (SS_X - df_X * MS_res) / (SS_T + MS_res)`
//! - nested (target / paper-within-target / replicate):
//!   `omega2_target = (SS_t - df_t * MS_lab) / (SS_T + MS_lab)` and
//!   `omega2_lab = (SS_lab - df_lab * MS_res) / (SS_T + MS_res)`
//!
//! `eta2_X = SS_X / SS_T` throughout. Negative omega-squared values are
//! reported raw.
//!
//! Type-II sums of squares for two factors come from model comparison:
//! `SS_A = RSS(B) - RSS(A + B)`, `SS_B = RSS(A) - RSS(A + B)`,
//! `SS_AB = RSS(A + B) - RSS(A * B)`, `SS_res = RSS(A * B)`. For balanced
//! designs these add up to `SS_T`; for unbalanced designs they do not.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::bootstrap::bootstrap_clusters;
use super::linalg::least_squares_rss;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTerm {
    pub name: String,
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    pub eta_sq: f64,
    pub omega_sq: f64,
    pub f: Option<f64>,
    pub p: Option<f64>,
    pub ci95: Option<(f64, f64)>,
}

fn f_test(ms: f64, df: usize, ms_den: f64, df_den: usize) -> (Option<f64>, Option<f64>) {
    if ms_den <= 0.0 || df_den == 0 || df == 0 {
        return (None, None);
    }
    let f = ms / ms_den;
    let p = FisherSnedecor::new(df as f64, df_den as f64)
        .ok()
        .map(|d| 1.0 - d.cdf(f));
    (Some(f), p)
}

fn omega(ss: f64, df: usize, ms_den: f64, ss_total: f64) -> f64 {
    (ss - df as f64 * ms_den) / (ss_total + ms_den)
}

fn ratio(ss: f64, ss_total: f64) -> f64 {
    if ss_total > 0.0 {
        ss / ss_total
    } else {
        0.0
    }
}

/// Integer codes for the distinct values of `keys`, in sorted key order.
fn encode<S: AsRef<str>>(keys: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut levels: BTreeMap<&str, usize> = BTreeMap::new();
    for k in keys {
        levels.entry(k.as_ref()).or_insert(0);
    }
    for (i, v) in levels.values_mut().enumerate() {
        *v = i;
    }
    let codes = keys.iter().map(|k| levels[k.as_ref()]).collect();
    (codes, levels.into_keys().map(str::to_string).collect())
}

fn grand_mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

fn total_ss(y: &[f64]) -> f64 {
    let m = grand_mean(y);
    y.iter().map(|v| (v - m).powi(2)).sum()
}

/// Residual SS around per-group means.
fn within_ss(y: &[f64], codes: &[usize], n_levels: usize) -> f64 {
    let mut sum = vec![0.0; n_levels];
    let mut cnt = vec![0usize; n_levels];
    for (v, &c) in y.iter().zip(codes) {
        sum[c] += v;
        cnt[c] += 1;
    }
    y.iter()
        .zip(codes)
        .map(|(v, &c)| (v - sum[c] / cnt[c] as f64).powi(2))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneWayAnova {
    pub f: Option<f64>,
    pub df_between: usize,
    pub df_within: usize,
    pub p: Option<f64>,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ss_total: f64,
    pub eta_sq: f64,
    pub omega_sq: f64,
    /// No variance at all: F and p are undefined.
    pub degenerate: bool,
}

pub fn oneway_anova<S: AsRef<str>>(y: &[f64], groups: &[S]) -> Result<OneWayAnova> {
    if y.len() != groups.len() {
        return Err(Error::invalid("groups", "length differs from y"));
    }
    let (codes, levels) = encode(groups);
    let k = levels.len();
    if k < 2 {
        return Err(Error::invalid("groups", "need at least two groups"));
    }
    if y.len() <= k {
        return Err(Error::invalid("y", "need more observations than groups"));
    }
    let ss_total = total_ss(y);
    let ss_within = within_ss(y, &codes, k);
    let ss_between = (ss_total - ss_within).max(0.0);
    let df_between = k - 1;
    let df_within = y.len() - k;
    let ms_within = ss_within / df_within as f64;
    let degenerate = ss_total == 0.0;
    let (f, p) = if degenerate {
        (None, None)
    } else if ms_within == 0.0 {
        (Some(f64::INFINITY), Some(0.0))
    } else {
        f_test(ss_between / df_between as f64, df_between, ms_within, df_within)
    };
    Ok(OneWayAnova {
        f,
        df_between,
        df_within,
        p,
        ss_between,
        ss_within,
        ss_total,
        eta_sq: ratio(ss_between, ss_total),
        omega_sq: if degenerate { 0.0 } else { omega(ss_between, df_between, ms_within, ss_total) },
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoWayAnova {
    /// A, B, AxB, Residual.
    pub terms: Vec<AnovaTerm>,
    pub ss_total: f64,
    pub balanced: bool,
}

impl TwoWayAnova {
    pub fn term(&self, name: &str) -> Option<&AnovaTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

fn dummy_columns(codes: &[usize], n_levels: usize) -> Vec<Vec<f64>> {
    (1..n_levels)
        .map(|l| codes.iter().map(|&c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn twoway_from_codes(y: &[f64], a: &[usize], na: usize, b: &[usize], nb: usize) -> Result<TwoWayAnova> {
    let n = y.len();
    let mut cell_counts = vec![0usize; na * nb];
    for (&i, &j) in a.iter().zip(b) {
        cell_counts[i * nb + j] += 1;
    }
    let empty: Vec<String> = (0..na * nb)
        .filter(|&c| cell_counts[c] == 0)
        .map(|c| format!("({}, {})", c / nb, c % nb))
        .collect();
    if !empty.is_empty() {
        return Err(Error::RankDeficient(empty));
    }
    if n <= na * nb {
        return Err(Error::Degenerate("no residual degrees of freedom".into()));
    }
    let cells: Vec<usize> = a.iter().zip(b).map(|(&i, &j)| i * nb + j).collect();
    let ss_total = total_ss(y);
    let rss_a = within_ss(y, a, na);
    let rss_b = within_ss(y, b, nb);
    let rss_cells = within_ss(y, &cells, na * nb);
    let mut design = vec![vec![1.0; n]];
    design.extend(dummy_columns(a, na));
    design.extend(dummy_columns(b, nb));
    let rss_add = least_squares_rss(&design, y)
        .ok_or_else(|| Error::RankDeficient(vec!["additive design".into()]))?;

    let df_a = na - 1;
    let df_b = nb - 1;
    let df_ab = df_a * df_b;
    let df_res = n - na * nb;
    let ss_a = (rss_b - rss_add).max(0.0);
    let ss_b = (rss_a - rss_add).max(0.0);
    let ss_ab = (rss_add - rss_cells).max(0.0);
    let ss_res = rss_cells;
    let ms_res = ss_res / df_res as f64;
    let term = |name: &str, ss: f64, df: usize| {
        let ms = ss / df as f64;
        let (f, p) = f_test(ms, df, ms_res, df_res);
        AnovaTerm {
            name: name.into(),
            ss,
            df,
            ms,
            eta_sq: ratio(ss, ss_total),
            omega_sq: omega(ss, df, ms_res, ss_total),
            f,
            p,
            ci95: None,
        }
    };
    let terms = vec![
        term("A", ss_a, df_a),
        term("B", ss_b, df_b),
        term("AxB", ss_ab, df_ab),
        AnovaTerm {
            name: "Residual".into(),
            ss: ss_res,
            df: df_res,
            ms: ms_res,
            eta_sq: ratio(ss_res, ss_total),
            omega_sq: ratio(ss_res, ss_total),
            f: None,
            p: None,
            ci95: None,
        },
    ];
    let balanced = cell_counts.iter().all(|&c| c == cell_counts[0]);
    Ok(TwoWayAnova {
        terms,
        ss_total,
        balanced,
    })
}

/// Two-way ANOVA with Type-II sums of squares; the design may be unbalanced
/// but every cell must be populated.
pub fn twoway_type2_anova<S: AsRef<str>, T: AsRef<str>>(y: &[f64], factor_a: &[S], factor_b: &[T]) -> Result<TwoWayAnova> {
    if y.len() != factor_a.len() || y.len() != factor_b.len() {
        return Err(Error::invalid("factors", "length differs from y"));
    }
    let (a, la) = encode(factor_a);
    let (b, lb) = encode(factor_b);
    if la.len() < 2 || lb.len() < 2 {
        return Err(Error::invalid("factors", "each factor needs at least two levels"));
    }
    twoway_from_codes(y, &a, la.len(), &b, lb.len()).map_err(|e| match e {
        Error::RankDeficient(cells) if cells.first().map(|c| c.starts_with('(')).unwrap_or(false) => {
            let named = cells
                .iter()
                .map(|c| {
                    let inner = c.trim_matches(|ch| ch == '(' || ch == ')');
                    let mut it = inner.split(", ").map(|s| s.parse::<usize>().unwrap());
                    let (i, j) = (it.next().unwrap(), it.next().unwrap());
                    format!("{}|{}", la[i], lb[j])
                })
                .collect();
            Error::RankDeficient(named)
        }
        e => e,
    })
}

/// Type-II ANOVA with omega-squared CIs from a bootstrap over levels of
/// factor A; each replicate recomputes the full decomposition, with repeated
/// A levels treated as distinct levels.
pub fn twoway_type2_anova_bootstrap<S: AsRef<str>, T: AsRef<str>>(
    y: &[f64],
    factor_a: &[S],
    factor_b: &[T],
    replicates: usize,
    seed: u64,
) -> Result<TwoWayAnova> {
    let mut table = twoway_type2_anova(y, factor_a, factor_b)?;
    let (a, la) = encode(factor_a);
    let (b, lb) = encode(factor_b);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); la.len()];
    for (i, &c) in a.iter().enumerate() {
        members[c].push(i);
    }
    let replicate = |sample: &[usize]| -> Option<[f64; 3]> {
        let mut ys = Vec::new();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        for (slot, &lvl) in sample.iter().enumerate() {
            for &i in &members[lvl] {
                ys.push(y[i]);
                ca.push(slot);
                cb.push(b[i]);
            }
        }
        let t = twoway_from_codes(&ys, &ca, sample.len(), &cb, lb.len()).ok()?;
        Some([t.terms[0].omega_sq, t.terms[1].omega_sq, t.terms[2].omega_sq])
    };
    for k in 0..3 {
        let r = bootstrap_clusters(la.len(), replicates, seed, |s| replicate(s).map(|v| v[k]))?;
        table.terms[k].ci95 = Some(r.ci95);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestedAnova {
    /// target, lab|target, residual.
    pub terms: Vec<AnovaTerm>,
    pub ss_total: f64,
    pub n: usize,
    pub n_targets: usize,
    pub n_papers: usize,
    /// sqrt(eta2_lab * SS_T / (N - 1)).
    pub implied_lab_sd: f64,
    /// Method-of-moments variance components from the expected mean squares.
    pub sigma2_lab: f64,
    pub sigma2_target: f64,
    pub sigma2_residual: f64,
}

impl NestedAnova {
    pub fn target(&self) -> &AnovaTerm {
        &self.terms[0]
    }
    pub fn lab(&self) -> &AnovaTerm {
        &self.terms[1]
    }
    pub fn residual(&self) -> &AnovaTerm {
        &self.terms[2]
    }
}

/// Hierarchical ANOVA: papers nested in targets, replicate observations
/// nested in papers.
///
/// Expected mean squares (unbalanced, random effects):
/// `E[MS_res] = s2_e`, `E[MS_lab] = s2_e + n0 * s2_l` with
/// `n0 = (N - sum_t sum_{p in t} n_p^2 / n_t) / (P - T)`, and
/// `E[MS_target] = s2_e + n0' * s2_l + n0'' * s2_t` with
/// `n0' = (sum_t sum_{p in t} n_p^2 / n_t - sum_p n_p^2 / N) / (T - 1)` and
/// `n0'' = (N - sum_t n_t^2 / N) / (T - 1)`.
pub fn nested_anova<S: AsRef<str>, P: AsRef<str>>(y: &[f64], target: &[S], paper: &[P]) -> Result<NestedAnova> {
    let n = y.len();
    if target.len() != n || paper.len() != n {
        return Err(Error::invalid("factors", "length differs from y"));
    }
    let mut paper_target: BTreeMap<&str, &str> = BTreeMap::new();
    for (p, t) in paper.iter().zip(target) {
        match paper_target.insert(p.as_ref(), t.as_ref()) {
            Some(prev) if prev != t.as_ref() => return Err(Error::NonNested(p.as_ref().to_string())),
            _ => {}
        }
    }
    let (tc, tl) = encode(target);
    let (pc, pl) = encode(paper);
    let (nt, np) = (tl.len(), pl.len());
    if nt < 2 {
        return Err(Error::invalid("target", "need at least two targets"));
    }
    if np == nt {
        return Err(Error::Degenerate("every target has a single paper: lab term has 0 df".into()));
    }
    if n == np {
        return Err(Error::Degenerate("no paper has replicate observations".into()));
    }
    let ss_total = total_ss(y);
    let ss_within_target = within_ss(y, &tc, nt);
    let ss_res = within_ss(y, &pc, np);
    let ss_target = (ss_total - ss_within_target).max(0.0);
    let ss_lab = (ss_within_target - ss_res).max(0.0);
    let df_t = nt - 1;
    let df_l = np - nt;
    let df_r = n - np;
    let ms_t = ss_target / df_t as f64;
    let ms_l = ss_lab / df_l as f64;
    let ms_r = ss_res / df_r as f64;
    let (f_t, p_t) = f_test(ms_t, df_t, ms_l, df_l);
    let (f_l, p_l) = f_test(ms_l, df_l, ms_r, df_r);
    let term = |name: &str, ss: f64, df: usize, ms: f64, omega_sq: f64, f, p| AnovaTerm {
        name: name.into(),
        ss,
        df,
        ms,
        eta_sq: ratio(ss, ss_total),
        omega_sq,
        f,
        p,
        ci95: None,
    };
    let terms = vec![
        term("target", ss_target, df_t, ms_t, omega(ss_target, df_t, ms_l, ss_total), f_t, p_t),
        term("lab|target", ss_lab, df_l, ms_l, omega(ss_lab, df_l, ms_r, ss_total), f_l, p_l),
        term("residual", ss_res, df_r, ms_r, ratio(ss_res, ss_total), None, None),
    ];

    // EMS coefficients.
    let mut n_p = vec![0f64; np];
    let mut n_t = vec![0f64; nt];
    for (&p, &t) in pc.iter().zip(&tc) {
        n_p[p] += 1.0;
        n_t[t] += 1.0;
    }
    let mut sum_np2_over_nt = vec![0f64; nt];
    for (pi, &cnt) in n_p.iter().enumerate() {
        let t = tc[pc.iter().position(|&x| x == pi).unwrap()];
        sum_np2_over_nt[t] += cnt * cnt;
    }
    let k1: f64 = sum_np2_over_nt.iter().zip(&n_t).map(|(s, nt_)| s / nt_).sum();
    let nf = n as f64;
    let n0 = (nf - k1) / df_l as f64;
    let k2: f64 = n_p.iter().map(|c| c * c).sum::<f64>() / nf;
    let n0p = (k1 - k2) / df_t as f64;
    let n0pp = (nf - n_t.iter().map(|c| c * c).sum::<f64>() / nf) / df_t as f64;
    let sigma2_residual = ms_r;
    let sigma2_lab = (ms_l - ms_r) / n0;
    let sigma2_target = (ms_t - ms_r - n0p * sigma2_lab) / n0pp;

    let total_var = if n > 1 { ss_total / (n - 1) as f64 } else { 0.0 };
    Ok(NestedAnova {
        implied_lab_sd: (ratio(ss_lab, ss_total) * total_var).sqrt(),
        terms,
        ss_total,
        n,
        n_targets: nt,
        n_papers: np,
        sigma2_lab,
        sigma2_target,
        sigma2_residual,
    })
}

#[cfg(test)]
mod unit {
    use super::*;

    #[test]
    fn oneway_two_groups_matches_t_squared() {
        let y = [1.0, 2.0, 3.0, 2.5, 4.0, 5.0, 6.5];
        let g = ["a", "a", "a", "b", "b", "b", "b"];
        let r = oneway_anova(&y, &g).unwrap();
        // pooled two-sample t
        let (a, b) = (&y[..3], &y[3..]);
        let ma = a.iter().sum::<f64>() / 3.0;
        let mb = b.iter().sum::<f64>() / 4.0;
        let ssa: f64 = a.iter().map(|v| (v - ma).powi(2)).sum();
        let ssb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
        let sp2 = (ssa + ssb) / 5.0;
        let t = (ma - mb) / (sp2 * (1.0 / 3.0 + 1.0 / 4.0)).sqrt();
        assert!((r.f.unwrap() - t * t).abs() < 1e-10);
        assert!(r.omega_sq <= r.eta_sq);
    }

    #[test]
    fn oneway_degenerate() {
        let r = oneway_anova(&[1.0, 1.0, 1.0, 1.0], &["a", "a", "b", "b"]).unwrap();
        assert!(r.degenerate && r.f.is_none());
        assert!(oneway_anova(&[1.0, 2.0], &["a", "a"]).is_err());
    }

    #[test]
    fn oneway_null_omega_nonpositive() {
        let r = oneway_anova(&[1.0, 3.0, 1.0, 3.0], &["a", "a", "b", "b"]).unwrap();
        assert_eq!(r.ss_between, 0.0);
        assert!(r.omega_sq < 0.0);
    }

    #[test]
    fn twoway_empty_cell_is_named() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let a = ["x", "x", "y", "y", "y"];
        let b = ["p", "q", "p", "p", "p"];
        match twoway_type2_anova(&y, &a, &b) {
            Err(Error::RankDeficient(cells)) => assert_eq!(cells, ["y|q"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_errors() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            nested_anova(&y, &["a", "a", "b", "b"], &["p", "p", "p", "q"]),
            Err(Error::NonNested(p)) if p == "p"
        ));
        assert!(matches!(
            nested_anova(&y, &["a", "a", "b", "b"], &["p", "p", "q", "q"]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn nested_balanced_ems() {
        // 2 targets x 2 papers x 2 reps, hand decomposition.
        let y = [1.0, 2.0, 4.0, 5.0, 10.0, 12.0, 9.0, 11.0];
        let t = ["a", "a", "a", "a", "b", "b", "b", "b"];
        let p = ["a1", "a1", "a2", "a2", "b1", "b1", "b2", "b2"];
        let r = nested_anova(&y, &t, &p).unwrap();
        // grand 6.75; target means 3, 10.5; paper means 1.5 4.5 11 10
        assert!((r.target().ss - 112.5).abs() < 1e-9);
        assert!((r.lab().ss - (2.0 * (2.25 + 2.25) + 2.0 * (0.25 + 0.25))).abs() < 1e-9);
        assert!((r.residual().ss - (0.5 + 0.5 + 2.0 + 2.0)).abs() < 1e-9);
        let sum: f64 = r.terms.iter().map(|t| t.ss).sum();
        assert!((sum - r.ss_total).abs() < 1e-9);
        // balanced: n0 = reps = 2
        assert!((r.sigma2_lab - (r.lab().ms - r.residual().ms) / 2.0).abs() < 1e-12);
    }
}
