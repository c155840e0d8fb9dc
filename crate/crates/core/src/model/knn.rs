//! Tanimoto k-nearest-neighbour scoring.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{tanimoto_unchecked, Fingerprint};

pub const DEFAULT_K: usize = 5;

/// Positive fraction among the `k` training points nearest by Tanimoto
/// distance `1 - sim`; equal distances prefer the lower training index.
pub fn knn_predict(train: &[Fingerprint], train_y: &[bool], test: &[Fingerprint], k: usize) -> Result<Vec<f64>> {
    if train.len() != train_y.len() {
        return Err(Error::invalid("train_y", "length differs from train"));
    }
    if train.is_empty() {
        return Err(Error::EmptyTrain("knn".into()));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    if k > train.len() {
        return Err(Error::KTooLarge {
            k,
            available: train.len(),
            what: "training points".into(),
        });
    }
    let width = train[0].width();
    if let Some(bad) = train.iter().chain(test).find(|f| f.width() != width) {
        return Err(Error::WidthMismatch {
            expected: width,
            found: bad.width(),
        });
    }
    Ok(test
        .par_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(i, t)| (1.0 - tanimoto_unchecked(q, t), i))
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..k].iter().filter(|(_, i)| train_y[*i]).count() as f64 / k as f64
        })
        .collect())
}

#[cfg(test)]
mod unit {
    use super::*;

    #[test]
    fn nearest_and_full_k() {
        let tr = [
            Fingerprint::from_indices(64, [1, 2]),
            Fingerprint::from_indices(64, [3, 4]),
            Fingerprint::from_indices(64, [5]),
        ];
        let y = [true, false, false];
        let q = [Fingerprint::from_indices(64, [1, 2])];
        assert_eq!(knn_predict(&tr, &y, &q, 1).unwrap(), vec![1.0]);
        assert_eq!(knn_predict(&tr, &y, &q, 3).unwrap(), vec![1.0 / 3.0]);
        assert!(matches!(knn_predict(&tr, &y, &q, 4), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let tr = [Fingerprint::from_indices(64, [9]), Fingerprint::from_indices(64, [8])];
        let q = [Fingerprint::from_indices(64, [1])];
        assert_eq!(knn_predict(&tr, &[true, false], &q, 1).unwrap(), vec![1.0]);
        assert_eq!(knn_predict(&tr, &[false, true], &q, 1).unwrap(), vec![0.0]);
    }
}
