//! Brute-force reference implementations shared by the oracle and
//! acceptance suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_instance(r: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    loop {
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

pub fn brute_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Groups of tied scores, best first: (size, positives).
pub fn tie_groups(s: &[f64], y: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        if s[i] != last {
            out.push((0, 0));
            last = s[i];
        }
        let g = out.last_mut().unwrap();
        g.0 += 1;
        g.1 += y[i] as usize;
    }
    out
}

/// Expected AP over uniformly random orders within tie groups.
pub fn expected_ap(s: &[f64], y: &[bool]) -> f64 {
    let total_pos = y.iter().filter(|&&l| l).count() as f64;
    let (mut ahead, mut ahead_pos, mut sum) = (0.0, 0.0, 0.0);
    for (g, q) in tie_groups(s, y) {
        let (gf, qf) = (g as f64, q as f64);
        if q > 0 {
            let mut e = 0.0;
            for m in 0..g {
                let others_pos = if g > 1 { m as f64 * (qf - 1.0) / (gf - 1.0) } else { 0.0 };
                e += (ahead_pos + 1.0 + others_pos) / (ahead + 1.0 + m as f64);
            }
            sum += qf * e / gf;
        }
        ahead += gf;
        ahead_pos += qf;
    }
    sum / total_pos
}

/// Worst and best AP over tie orders, by walking the full PR sequence.
pub fn ap_bounds(s: &[f64], y: &[bool]) -> (f64, f64) {
    let ranked = |pos_first: bool| {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(if pos_first { y[b].cmp(&y[a]) } else { y[a].cmp(&y[b]) }));
        order.iter().map(|&i| y[i]).collect::<Vec<bool>>()
    };
    let exhaustive_ap = |labels: &[bool]| {
        let (mut tp, mut sum) = (0.0, 0.0);
        let p = labels.iter().filter(|&&l| l).count() as f64;
        for (i, &l) in labels.iter().enumerate() {
            if l {
                tp += 1.0;
                sum += tp / (i + 1) as f64;
            }
        }
        sum / p
    };
    (exhaustive_ap(&ranked(false)), exhaustive_ap(&ranked(true)))
}

/// Random small-integer deltas for signed-rank checks, ties included.
pub fn random_deltas(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = r.random_range(1..=6) as f64;
            if r.random_bool(0.6) { m } else { -m }
        })
        .collect()
}

/// Exact signed-rank p-values by enumerating all 2^n sign patterns:
/// (two-sided, greater).
pub fn signed_rank_enumeration(d: &[f64]) -> (f64, f64) {
    let n = d.len();
    let a: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = a
        .iter()
        .map(|&x| {
            let below = a.iter().filter(|&&v| v < x).count() as f64;
            let eq = a.iter().filter(|&&v| v == x).count() as f64;
            below + (eq + 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = w_plus.min(total - w_plus);
    let (mut le_w, mut ge_wp) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let t: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        le_w += (t <= w + 1e-9) as u64;
        ge_wp += (t >= w_plus - 1e-9) as u64;
    }
    let denom = (1u64 << n) as f64;
    ((2.0 * le_w as f64 / denom).min(1.0), ge_wp as f64 / denom)
}

fn rss_normal_equations(cols: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let beta = xtx.lu().solve(&(x.transpose() * &yv)).expect("full rank design");
    (yv - x * beta).norm_squared()
}

fn dummies(levels: &[usize], k: usize) -> Vec<Vec<f64>> {
    (1..k).map(|l| levels.iter().map(|&v| (v == l) as u8 as f64).collect()).collect()
}

/// Unbalanced 4x3 design with 1 to 5 observations per cell.
pub fn unbalanced_design(r: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..4 {
        for j in 0..3 {
            for _ in 0..r.random_range(1..=5) {
                a.push(i);
                b.push(j);
                y.push(0.3 * i as f64 - 0.2 * j as f64 + r.random_range(-1.0..1.0));
            }
        }
    }
    (a, b, y)
}

/// Type-II sums of squares from least-squares fits of nested dummy-coded
/// models: [A, B, AxB, Residual].
pub fn type2_projection(a: &[usize], ka: usize, b: &[usize], kb: usize, y: &[f64]) -> [f64; 4] {
    let one = vec![1.0; y.len()];
    let da = dummies(a, ka);
    let db = dummies(b, kb);
    let cell: Vec<usize> = a.iter().zip(b).map(|(i, j)| i * kb + j).collect();
    let dc = dummies(&cell, ka * kb);
    let with = |parts: &[&Vec<Vec<f64>>]| {
        let mut c = vec![one.clone()];
        for p in parts {
            c.extend(p.iter().cloned());
        }
        rss_normal_equations(&c, y)
    };
    let (rss_a, rss_b, rss_ab, rss_cell) = (with(&[&da]), with(&[&db]), with(&[&da, &db]), with(&[&dc]));
    [rss_b - rss_ab, rss_a - rss_ab, rss_ab - rss_cell, rss_cell]
}
