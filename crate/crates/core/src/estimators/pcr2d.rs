use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::{mse, pick_best, response_scale, splits, CvConfig};
use super::{hstack, image_from};
use crate::error::{Result, SoirError};
use crate::image::{CoefficientCovariance, FitResult, MethodId, RegressionDataset};
use crate::kernels::{least_squares, rank_one_eigenimages, EigenimageOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pcr2dConfig {
    pub k_grid: Vec<usize>,
    pub cv: CvConfig,
    pub eigen: EigenimageOptions,
    /// Skip cross-validation and use this many eigenimages.
    pub forced_k: Option<usize>,
}

impl Default for Pcr2dConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![1, 5, 10, 15, 20, 25],
            cv: CvConfig::default(),
            eigen: EigenimageOptions::default(),
            forced_k: None,
        }
    }
}

/// Regression on the scores of smooth rank-one eigenimages.
///
/// The eigenimages are computed once from all images; cross-validation
/// only chooses how many leading score vectors enter the regression.
pub fn fit_pcr2d(data: &RegressionDataset, cfg: &Pcr2dConfig) -> Result<FitResult> {
    let start = Instant::now();
    data.require_demeaned()?;
    let cap = data.n().min(data.nx()).min(data.ny());
    let mut warnings = Vec::new();
    let wanted = cfg
        .forced_k
        .unwrap_or_else(|| cfg.k_grid.iter().copied().max().unwrap_or(0));
    if wanted == 0 {
        return Err(SoirError::InvalidInput(
            "no eigenimage count requested".into(),
        ));
    }
    if wanted > cap {
        warnings.push(format!("eigenimage count capped at min(N, nx, ny) = {cap}"));
    }
    let eig = rank_one_eigenimages(data.x(), data.nx(), data.ny(), wanted.min(cap), &cfg.eigen)?;
    if eig.truncated {
        warnings.push(format!("only {} eigenimages could be extracted", eig.len()));
    }
    let available = eig.len();
    let basis = eig.basis_matrix();
    let theta = &eig.scores;
    let p = data.p();
    let mut cv_loss = f64::NAN;
    let k = match cfg.forced_k {
        Some(k) => k.min(available),
        None => {
            let mut grid: Vec<usize> = cfg
                .k_grid
                .iter()
                .copied()
                .filter(|&k| k >= 1 && k <= available)
                .collect();
            grid.sort_unstable();
            grid.dedup();
            if grid.is_empty() {
                grid.push(available);
            }
            let folds = splits(data.n(), &cfg.cv)?;
            let mut losses = vec![0.0; grid.len()];
            for f in &folds {
                let rows = |idx: &[usize], m: &DMatrix<f64>| {
                    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
                };
                let w_tr = rows(&f.train, data.w());
                let w_te = rows(&f.test, data.w());
                let t_tr = rows(&f.train, theta);
                let t_te = rows(&f.test, theta);
                let y_tr = DVector::from_fn(f.train.len(), |i, _| data.y()[f.train[i]]);
                let y_te = DVector::from_fn(f.test.len(), |i, _| data.y()[f.test[i]]);
                for (g, &k) in grid.iter().enumerate() {
                    let design = hstack(&w_tr, &t_tr.columns(0, k).into_owned());
                    let loss = match least_squares(&design, &y_tr) {
                        Ok(ls) => {
                            let pred =
                                hstack(&w_te, &t_te.columns(0, k).into_owned()) * &ls.coefficients;
                            mse(&y_te, &pred)
                        }
                        Err(_) => f64::INFINITY,
                    };
                    losses[g] += loss / folds.len() as f64;
                }
            }
            let best = pick_best(&losses, response_scale(data.y()))
                .ok_or_else(|| SoirError::RankDeficient("PCR2D failed for every K".into()))?;
            cv_loss = losses[best];
            grid[best]
        }
    };
    let design = hstack(data.w(), &theta.columns(0, k).into_owned());
    let ls = least_squares(&design, data.y())?;
    let b = ls.coefficients.rows(p, k).into_owned();
    let e = basis.columns(0, k).into_owned();
    let beta = &e * &b;
    let mut fit = FitResult::new(
        MethodId::Pcr2d,
        ls.coefficients.rows(0, p).iter().copied().collect(),
        image_from(data, beta.iter().copied().collect())?,
    );
    let sigma2 = ls.residual_variance(data.n());
    fit.residual_variance = sigma2;
    fit.hyperparameters.insert("K".into(), k as f64);
    fit.metadata.insert("cv_loss".into(), cv_loss);
    fit.metadata
        .insert("components_computed".into(), available as f64);
    fit.internal_coefficients = b.iter().copied().collect();
    let mut sel = vec![0.0; available];
    sel[..k].copy_from_slice(b.as_slice());
    fit.selection = Some(sel);
    fit.covariance = Some(CoefficientCovariance {
        basis: e,
        coef_cov: ls.unscaled_cov.view((p, p), (k, k)) * sigma2,
        alpha_cov: ls.unscaled_cov.view((0, 0), (p, p)) * sigma2,
    });
    fit.warnings = warnings;
    fit.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}
