use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::{mse, pick_best, response_scale, splits, CvConfig, FoldSplit};
use super::{hstack, image_from};
use crate::basis::WaveletBasis2D;
use crate::error::{Result, SoirError};
use crate::image::{CoefficientCovariance, FitResult, MethodId, RegressionDataset};
use crate::kernels::{least_squares, pca_svd, pls_components};

/// Dimension reduction applied to the screened wavelet coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    Pca,
    Pls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletRegConfig {
    pub reduction: Reduction,
    pub coarsest_level: usize,
    pub kstar_grid: Vec<usize>,
    pub k0_grid: Vec<usize>,
    pub cv: CvConfig,
    /// Skip cross-validation and use this `(K*, K0)`.
    pub forced: Option<(usize, usize)>,
}

impl WaveletRegConfig {
    pub fn wcr() -> Self {
        Self::with_reduction(Reduction::Pca)
    }

    pub fn wpls() -> Self {
        Self::with_reduction(Reduction::Pls)
    }

    fn with_reduction(reduction: Reduction) -> Self {
        Self {
            reduction,
            coarsest_level: crate::basis::DEFAULT_COARSEST_LEVEL,
            kstar_grid: vec![10, 25, 50, 100, 250, 500, 1000],
            k0_grid: vec![5, 10, 15, 25, 50, 75],
            cv: CvConfig::default(),
            forced: None,
        }
    }
}

/// Wavelet coefficients of every (demeaned) image, one row per observation.
pub(crate) struct WaveletDesign {
    pub basis: WaveletBasis2D,
    pub coeffs: DMatrix<f64>,
}

impl WaveletDesign {
    pub fn new(data: &RegressionDataset, coarsest_level: usize) -> Result<Self> {
        if data.nx() != data.ny() {
            return Err(SoirError::Precondition(format!(
                "wavelet methods need square images, got {}x{}",
                data.nx(),
                data.ny()
            )));
        }
        let basis = WaveletBasis2D::new(data.nx(), coarsest_level)?;
        let x = data.x();
        let l = data.n_pixels();
        let mut coeffs = DMatrix::zeros(data.n(), l);
        let mut row = vec![0.0; l];
        for i in 0..data.n() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            let c = basis.forward(&row);
            for (j, v) in c.into_iter().enumerate() {
                coeffs[(i, j)] = v;
            }
        }
        Ok(Self { basis, coeffs })
    }

    /// Pixel image of a coefficient vector supported on `support`.
    pub fn image_of(&self, support: &[usize], values: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.coeffs.ncols()];
        for (&j, &v) in support.iter().zip(values) {
            full[j] = v;
        }
        self.basis.inverse(&full)
    }
}

/// Indices of the `kstar` columns with the largest sample variance, in
/// decreasing order of variance (ties by index).
pub fn screen_by_variance(coeffs: &DMatrix<f64>, kstar: usize) -> Result<Vec<usize>> {
    let n = coeffs.nrows() as f64;
    let var: Vec<f64> = coeffs
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .collect();
    let top = var.iter().copied().fold(0.0f64, f64::max);
    if !(top > 0.0) {
        return Err(SoirError::Degenerate(
            "every wavelet coefficient has zero variance; nothing to screen".into(),
        ));
    }
    let mut order: Vec<usize> = (0..var.len()).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    order.truncate(kstar.min(var.len()));
    Ok(order)
}

pub(crate) fn capped_kstar_grid(
    grid: &[usize],
    l: usize,
    warnings: &mut Vec<String>,
) -> Vec<usize> {
    let mut g: Vec<usize> = grid.iter().map(|&k| k.min(l)).filter(|&k| k > 0).collect();
    if grid.iter().any(|&k| k > l) {
        warnings.push(format!(
            "K* values above the {l} available coefficients were capped"
        ));
    }
    g.sort_unstable();
    g.dedup();
    g
}

fn rows(idx: &[usize], m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// One training/test split in wavelet space, centred on the training means.
pub(crate) struct WaveletFold {
    pub d_train: DMatrix<f64>,
    pub d_test: DMatrix<f64>,
    pub w_train: DMatrix<f64>,
    pub w_test: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub y_test: DVector<f64>,
}

pub(crate) fn wavelet_folds(
    data: &RegressionDataset,
    design: &WaveletDesign,
    cv: &CvConfig,
) -> Result<Vec<WaveletFold>> {
    let make = |s: &FoldSplit| {
        let mut d_train = rows(&s.train, &design.coeffs);
        let mut d_test = rows(&s.test, &design.coeffs);
        for j in 0..d_train.ncols() {
            let m = d_train.column(j).mean();
            d_train.column_mut(j).add_scalar_mut(-m);
            d_test.column_mut(j).add_scalar_mut(-m);
        }
        WaveletFold {
            d_train,
            d_test,
            w_train: rows(&s.train, data.w()),
            w_test: rows(&s.test, data.w()),
            y_train: DVector::from_fn(s.train.len(), |i, _| data.y()[s.train[i]]),
            y_test: DVector::from_fn(s.test.len(), |i, _| data.y()[s.test[i]]),
        }
    };
    Ok(splits(data.n(), cv)?.iter().map(make).collect())
}

/// Rotation (K*×r) and scores (N×r) of the leading `kmax` components.
fn reduce(
    reduction: Reduction,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    kmax: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let kmax = kmax.min(z.nrows()).min(z.ncols());
    match reduction {
        Reduction::Pca => {
            let p = pca_svd(z, kmax)?;
            Ok((p.components, p.scores))
        }
        Reduction::Pls => {
            let p = pls_components(z, y, kmax)?;
            Ok((p.weights, p.scores))
        }
    }
}

fn method_of(reduction: Reduction) -> MethodId {
    match reduction {
        Reduction::Pca => MethodId::Wcr,
        Reduction::Pls => MethodId::Wpls,
    }
}

fn k0_candidates(grid: &[usize], kstar: usize, n_train: usize, p: usize) -> Vec<usize> {
    let mut g: Vec<usize> = grid
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k <= kstar && k + p < n_train)
        .collect();
    g.sort_unstable();
    g.dedup();
    g
}

/// Wavelet-based principal component (WCR) or partial least squares (WPLS)
/// regression on variance-screened coefficients.
pub fn fit_wavelet_regression(
    data: &RegressionDataset,
    cfg: &WaveletRegConfig,
) -> Result<FitResult> {
    let start = Instant::now();
    data.require_demeaned()?;
    let design = WaveletDesign::new(data, cfg.coarsest_level)?;
    let l = data.n_pixels();
    let p = data.p();
    let mut warnings = Vec::new();
    let mut cv_loss = f64::NAN;
    let (kstar, k0) = match cfg.forced {
        Some((ks, k0)) => {
            if ks > l {
                warnings.push(format!("K* = {ks} capped at {l}"));
            }
            let ks = ks.min(l);
            if k0 > ks {
                return Err(SoirError::InvalidInput(format!(
                    "K0 = {k0} exceeds K* = {ks}"
                )));
            }
            (ks, k0)
        }
        None => {
            let kgrid = capped_kstar_grid(&cfg.kstar_grid, l, &mut warnings);
            let folds = wavelet_folds(data, &design, &cfg.cv)?;
            let n_train = folds.iter().map(|f| f.y_train.len()).min().unwrap_or(0);
            let mut candidates = Vec::new();
            for &ks in &kgrid {
                for k0 in k0_candidates(&cfg.k0_grid, ks, n_train, p) {
                    candidates.push((ks, k0));
                }
            }
            if candidates.is_empty() {
                return Err(SoirError::InvalidInput(
                    "no (K*, K0) candidate fits the training sample size".into(),
                ));
            }
            let mut losses = vec![0.0; candidates.len()];
            for f in &folds {
                for &ks in &kgrid {
                    let s = screen_by_variance(&f.d_train, ks)?;
                    let z_tr = columns(&f.d_train, &s);
                    let z_te = columns(&f.d_test, &s);
                    let kmax = candidates
                        .iter()
                        .filter(|c| c.0 == ks)
                        .map(|c| c.1)
                        .max()
                        .unwrap_or(0);
                    if kmax == 0 {
                        continue;
                    }
                    let reduced = reduce(cfg.reduction, &z_tr, &f.y_train, kmax);
                    for (c, &(cks, k0)) in candidates.iter().enumerate() {
                        if cks != ks {
                            continue;
                        }
                        let loss = match &reduced {
                            Ok((rot, scores)) if rot.ncols() >= k0 => {
                                let d = hstack(&f.w_train, &scores.columns(0, k0).into_owned());
                                match least_squares(&d, &f.y_train) {
                                    Ok(ls) => {
                                        let t_te = &z_te * rot.columns(0, k0);
                                        let pred = hstack(&f.w_test, &t_te) * &ls.coefficients;
                                        mse(&f.y_test, &pred)
                                    }
                                    Err(_) => f64::INFINITY,
                                }
                            }
                            _ => f64::INFINITY,
                        };
                        losses[c] += loss / folds.len() as f64;
                    }
                }
            }
            let best = pick_best(&losses, response_scale(data.y())).ok_or_else(|| {
                SoirError::RankDeficient("wavelet regression failed for every candidate".into())
            })?;
            cv_loss = losses[best];
            candidates[best]
        }
    };
    let support = screen_by_variance(&design.coeffs, kstar)?;
    let z = columns(&design.coeffs, &support);
    let (rot, scores) = reduce(cfg.reduction, &z, data.y(), k0.max(1))?;
    let k0 = k0.min(rot.ncols());
    if k0 == 0 {
        return Err(SoirError::Degenerate(
            "no components could be extracted".into(),
        ));
    }
    let v0 = rot.columns(0, k0).into_owned();
    let ls = least_squares(
        &hstack(data.w(), &scores.columns(0, k0).into_owned()),
        data.y(),
    )?;
    let b_tilde = ls.coefficients.rows(p, k0).into_owned();
    let b_star = &v0 * &b_tilde;
    let beta = design.image_of(&support, b_star.as_slice());
    let mut fit = FitResult::new(
        method_of(cfg.reduction),
        ls.coefficients.rows(0, p).iter().copied().collect(),
        image_from(data, beta)?,
    );
    let sigma2 = ls.residual_variance(data.n());
    fit.residual_variance = sigma2;
    fit.hyperparameters.insert("K_star".into(), kstar as f64);
    fit.hyperparameters.insert("K0".into(), k0 as f64);
    fit.metadata.insert("cv_loss".into(), cv_loss);
    let mut coeffs = vec![0.0; l];
    for (&j, &v) in support.iter().zip(b_star.iter()) {
        coeffs[j] = v;
    }
    fit.internal_coefficients = coeffs.clone();
    fit.selection = Some(coeffs);
    let mut pix = DMatrix::zeros(l, k0);
    for c in 0..k0 {
        let img = design.image_of(&support, v0.column(c).as_slice());
        pix.column_mut(c).copy_from_slice(&img);
    }
    fit.covariance = Some(CoefficientCovariance {
        basis: pix,
        coef_cov: ls.unscaled_cov.view((p, p), (k0, k0)) * sigma2,
        alpha_cov: ls.unscaled_cov.view((0, 0), (p, p)) * sigma2,
    });
    fit.warnings = warnings;
    fit.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}

pub fn fit_wcr(data: &RegressionDataset, cfg: &WaveletRegConfig) -> Result<FitResult> {
    fit_wavelet_regression(
        data,
        &WaveletRegConfig {
            reduction: Reduction::Pca,
            ..cfg.clone()
        },
    )
}

pub fn fit_wpls(data: &RegressionDataset, cfg: &WaveletRegConfig) -> Result<FitResult> {
    fit_wavelet_regression(
        data,
        &WaveletRegConfig {
            reduction: Reduction::Pls,
            ..cfg.clone()
        },
    )
}
