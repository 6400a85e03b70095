use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoirError};
use crate::image::{demean_images, RegressionDataset};
use crate::rng;

/// K-fold cross-validation setup; the loss is held-out mean squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, seed: 0 }
    }
}

/// Relative slack within which two CV losses count as tied.
pub const TIE_TOLERANCE: f64 = 1e-8;

/// Fold label of every observation: a seeded permutation of `0..n` cut
/// into `folds` contiguous blocks of near-equal size.
pub fn fold_ids(n: usize, cfg: &CvConfig) -> Result<Vec<usize>> {
    if cfg.folds < 2 {
        return Err(SoirError::InvalidInput(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    if n < cfg.folds {
        return Err(SoirError::InvalidInput(format!(
            "{n} observations cannot fill {} folds",
            cfg.folds
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(cfg.seed, 0xf01d));
    let mut ids = vec![0; n];
    for (pos, &obs) in perm.iter().enumerate() {
        ids[obs] = pos * cfg.folds / n;
    }
    Ok(ids)
}

/// Training and held-out rows of one fold.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn splits(n: usize, cfg: &CvConfig) -> Result<Vec<FoldSplit>> {
    let ids = fold_ids(n, cfg)?;
    Ok((0..cfg.folds)
        .map(|f| FoldSplit {
            train: (0..n).filter(|&i| ids[i] != f).collect(),
            test: (0..n).filter(|&i| ids[i] == f).collect(),
        })
        .collect())
}

/// A training set demeaned on its own pixel means plus the held-out rows
/// centred with those means.
pub(crate) struct FoldData {
    pub train: RegressionDataset,
    pub test_y: DVector<f64>,
    pub test_w: DMatrix<f64>,
    pub test_x: DMatrix<f64>,
}

pub(crate) fn fold_data(data: &RegressionDataset, split: &FoldSplit) -> Result<FoldData> {
    let train = demean_images(data.select_rows(&split.train)?)?;
    let means = train.pixel_means().expect("demeaned").to_vec();
    let t = &split.test;
    let test_x = DMatrix::from_fn(t.len(), data.n_pixels(), |i, j| {
        data.x()[(t[i], j)] - means[j]
    });
    Ok(FoldData {
        train,
        test_y: DVector::from_fn(t.len(), |i, _| data.y()[t[i]]),
        test_w: DMatrix::from_fn(t.len(), data.p(), |i, j| data.w()[(t[i], j)]),
        test_x,
    })
}

pub(crate) fn all_folds(data: &RegressionDataset, cfg: &CvConfig) -> Result<Vec<FoldData>> {
    splits(data.n(), cfg)?
        .iter()
        .map(|s| fold_data(data, s))
        .collect()
}

/// Mean squared deviation of `y` from its mean.
pub(crate) fn response_scale(y: &DVector<f64>) -> f64 {
    let m = y.mean();
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64
}

pub(crate) fn mse(y: &DVector<f64>, yhat: &DVector<f64>) -> f64 {
    (y - yhat).norm_squared() / y.len() as f64
}

/// Index of the preferred candidate: candidates are listed in order of
/// preference (smaller model first) and the first one within
/// `TIE_TOLERANCE·(min + scale)` of the minimum wins, so losses that are
/// negligible next to `scale` (typically the response variance) tie.
/// Non-finite losses never win.
pub fn pick_best(losses: &[f64], scale: f64) -> Option<usize> {
    let min = losses
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let slack = (min.abs() + scale.abs()) * TIE_TOLERANCE;
    losses
        .iter()
        .position(|&l| l.is_finite() && l <= min + slack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_sample() {
        let cfg = CvConfig { folds: 5, seed: 9 };
        let s = splits(23, &cfg).unwrap();
        let mut all: Vec<usize> = s.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &s {
            assert_eq!(f.train.len() + f.test.len(), 23);
            assert!(f.test.len() == 4 || f.test.len() == 5);
            assert!(f.test.iter().all(|i| !f.train.contains(i)));
        }
        assert_eq!(fold_ids(23, &cfg).unwrap(), fold_ids(23, &cfg).unwrap());
        assert_ne!(
            fold_ids(23, &cfg).unwrap(),
            fold_ids(23, &CvConfig { folds: 5, seed: 10 }).unwrap()
        );
        assert!(fold_ids(3, &cfg).is_err());
        assert!(fold_ids(10, &CvConfig { folds: 1, seed: 0 }).is_err());
    }

    #[test]
    fn ties_prefer_earlier_candidates() {
        assert_eq!(pick_best(&[2.0, 1.0, 1.0], 0.0), Some(1));
        assert_eq!(pick_best(&[1.0 + 1e-12, 1.0], 0.0), Some(0));
        assert_eq!(pick_best(&[f64::NAN, 3.0, f64::INFINITY], 0.0), Some(1));
        assert_eq!(pick_best(&[f64::NAN], 1.0), None);
        assert_eq!(pick_best(&[1e-12, 1e-20], 1.0), Some(0));
        assert_eq!(pick_best(&[1e-12, 1e-20], 0.0), Some(1));
    }
}
