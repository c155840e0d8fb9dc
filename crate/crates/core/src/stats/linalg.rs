//! Householder least squares for small dense designs.

/// Residual sum of squares of the least-squares fit of `y` on `columns`.
///
/// Returns `None` when the design is numerically rank deficient.
pub(crate) fn least_squares_rss(columns: &[Vec<f64>], y: &[f64]) -> Option<f64> {
    let n = y.len();
    let p = columns.len();
    if p > n {
        return None;
    }
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut b = y.to_vec();
    let scale = a
        .iter()
        .flat_map(|c| c.iter())
        .fold(0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-10 * scale {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(k) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(x, c)| x * c).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, x) in col[k..].iter_mut().zip(&v) {
                *c -= f * x;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(x, c)| x * c).sum();
        let f = 2.0 * dot / vnorm2;
        for (c, x) in b[k..].iter_mut().zip(&v) {
            *c -= f * x;
        }
    }
    Some(b[p..].iter().map(|v| v * v).sum())
}

#[cfg(test)]
mod unit {
    use super::*;

    #[test]
    fn exact_fit_has_zero_rss() {
        let x = vec![vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0]];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!(least_squares_rss(&x, &y).unwrap() < 1e-20);
    }

    #[test]
    fn intercept_only_is_centered_ss() {
        let y = [1.0, 2.0, 6.0];
        assert!((least_squares_rss(&[vec![1.0; 3]], &y).unwrap() - 14.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_detected() {
        let x = vec![vec![1.0; 3], vec![2.0; 3]];
        assert!(least_squares_rss(&x, &[1.0, 2.0, 3.0]).is_none());
    }
}
