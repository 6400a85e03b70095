use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::{mse, pick_best, response_scale, CvConfig};
use super::image_from;
use super::wavelet_reg::{capped_kstar_grid, screen_by_variance, wavelet_folds, WaveletDesign};
use crate::error::{Result, SoirError};
use crate::image::{FitResult, MethodId, RegressionDataset};
use crate::kernels::{elastic_net, lambda_max, lambda_path, least_squares, ElasticNetOptions};

/// A fixed `(K*, η, λ)` setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WnetChoice {
    pub kstar: usize,
    pub eta: f64,
    pub lambda: f64,
}

/// Coordinate-descent tolerance for WNET; coarser than the kernel default
/// since only predictions and supports are used.
pub const WNET_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WnetConfig {
    pub coarsest_level: usize,
    pub kstar_grid: Vec<usize>,
    pub eta_grid: Vec<f64>,
    pub net: ElasticNetOptions,
    pub cv: CvConfig,
    /// Skip cross-validation and fit this setting.
    pub forced: Option<WnetChoice>,
}

impl Default for WnetConfig {
    fn default() -> Self {
        Self {
            coarsest_level: crate::basis::DEFAULT_COARSEST_LEVEL,
            kstar_grid: vec![10, 25, 50, 100, 250, 500, 1000],
            eta_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            net: ElasticNetOptions {
                tolerance: WNET_TOLERANCE,
                ..Default::default()
            },
            cv: CvConfig::default(),
            forced: None,
        }
    }
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// `y` and `Z` with the scalar covariates regressed out, plus the maps
/// `α_y` and `Γ` giving back `α̂ = α_y − Γ·b`.
pub(crate) struct Profiled {
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub alpha_y: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

pub(crate) fn profile_out(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<Profiled> {
    let ls = least_squares(w, y).map_err(|_| {
        SoirError::RankDeficient("scalar covariate matrix W is rank deficient".into())
    })?;
    let gamma = &ls.unscaled_cov * w.tr_mul(z);
    Ok(Profiled {
        z: z - w * &gamma,
        y: y - w * &ls.coefficients,
        alpha_y: ls.coefficients,
        gamma,
    })
}

fn validate(cfg: &WnetConfig) -> Result<()> {
    if cfg.eta_grid.is_empty() || cfg.eta_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(SoirError::InvalidInput(
            "η grid must be non-empty and inside [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Elastic net on variance-screened wavelet coefficients with the scalar
/// covariates profiled out.
pub fn fit_wnet(data: &RegressionDataset, cfg: &WnetConfig) -> Result<FitResult> {
    let start = Instant::now();
    data.require_demeaned()?;
    validate(cfg)?;
    let design = WaveletDesign::new(data, cfg.coarsest_level)?;
    let l = data.n_pixels();
    let mut warnings = Vec::new();
    let mut cv_loss = f64::NAN;
    let mut chains = 0usize;
    let (kstar, eta, path, idx) = match cfg.forced {
        Some(c) => {
            if c.kstar > l {
                warnings.push(format!("K* = {} capped at {l}", c.kstar));
            }
            (c.kstar.min(l), c.eta, vec![c.lambda], 0)
        }
        None => {
            let kgrid = capped_kstar_grid(&cfg.kstar_grid, l, &mut warnings);
            // One λ path per (K*, η) from the full sample, shared by all folds.
            let mut paths = Vec::new();
            for &ks in &kgrid {
                let s = screen_by_variance(&design.coeffs, ks)?;
                let pr = profile_out(data.w(), &columns(&design.coeffs, &s), data.y())?;
                for &eta in &cfg.eta_grid {
                    let lmax = lambda_max(&pr.z, &pr.y, eta);
                    let lmax = if lmax > 0.0 { lmax } else { 1.0 };
                    paths.push(lambda_path(lmax, cfg.net.path_length, cfg.net.path_ratio));
                }
            }
            let ne = cfg.eta_grid.len();
            let np = cfg.net.path_length;
            let mut losses = vec![0.0; kgrid.len() * ne * np];
            let folds = wavelet_folds(data, &design, &cfg.cv)?;
            for f in &folds {
                for (ki, &ks) in kgrid.iter().enumerate() {
                    let s = screen_by_variance(&f.d_train, ks)?;
                    let pr = profile_out(&f.w_train, &columns(&f.d_train, &s), &f.y_train)?;
                    let z_te = columns(&f.d_test, &s) - &f.w_test * &pr.gamma;
                    let base = &f.w_test * &pr.alpha_y;
                    for (ei, &eta) in cfg.eta_grid.iter().enumerate() {
                        let off = (ki * ne + ei) * np;
                        let path = &paths[ki * ne + ei];
                        chains += 1;
                        match elastic_net(&pr.z, &pr.y, eta, Some(path), &cfg.net) {
                            Ok(res) => {
                                for (j, b) in res.coefficients.iter().enumerate() {
                                    let pred = &base + &z_te * b;
                                    losses[off + j] += mse(&f.y_test, &pred) / folds.len() as f64;
                                }
                            }
                            Err(_) => {
                                for j in 0..np {
                                    losses[off + j] = f64::INFINITY;
                                }
                            }
                        }
                    }
                }
            }
            let best = pick_best(&losses, response_scale(data.y()))
                .ok_or_else(|| SoirError::RankDeficient("elastic net failed everywhere".into()))?;
            cv_loss = losses[best];
            let (ke, j) = (best / np, best % np);
            let (ki, ei) = (ke / ne, ke % ne);
            (kgrid[ki], cfg.eta_grid[ei], paths[ke][..=j].to_vec(), j)
        }
    };
    let support = screen_by_variance(&design.coeffs, kstar)?;
    let pr = profile_out(data.w(), &columns(&design.coeffs, &support), data.y())?;
    let res = elastic_net(&pr.z, &pr.y, eta, Some(&path), &cfg.net)?;
    let b = &res.coefficients[idx];
    let alpha = &pr.alpha_y - &pr.gamma * b;
    let beta = design.image_of(&support, b.as_slice());
    let mut fit = FitResult::new(
        MethodId::Wnet,
        alpha.iter().copied().collect(),
        image_from(data, beta)?,
    );
    let nnz = b.iter().filter(|v| **v != 0.0).count();
    let rss = (&pr.y - &pr.z * b).norm_squared();
    let dof = data.n() as f64 - data.p() as f64 - nnz as f64;
    fit.residual_variance = if dof > 0.0 { rss / dof } else { f64::NAN };
    fit.hyperparameters.insert("K_star".into(), kstar as f64);
    fit.hyperparameters.insert("eta".into(), eta);
    fit.hyperparameters.insert("lambda".into(), path[idx]);
    fit.metadata.insert("cv_loss".into(), cv_loss);
    fit.metadata.insert("nonzero".into(), nnz as f64);
    fit.metadata.insert("cv_paths".into(), chains as f64);
    let mut coeffs = vec![0.0; l];
    for (&j, &v) in support.iter().zip(b.iter()) {
        coeffs[j] = v;
    }
    fit.internal_coefficients = coeffs.clone();
    fit.selection = Some(coeffs);
    fit.warnings = warnings;
    fit.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::WaveletBasis2D;
    use crate::estimators::wavelet_reg::tests::{dataset_from, wavelet_images};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn huge_lambda_gives_null_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let images = wavelet_images(&mut rng, 30, 8);
        let data = dataset_from(&images, |v| 2.0 + v[5]);
        let cfg = WnetConfig {
            forced: Some(WnetChoice {
                kstar: 20,
                eta: 0.5,
                lambda: 1e9,
            }),
            ..Default::default()
        };
        let fit = fit_wnet(&data, &cfg).unwrap();
        assert!(fit.beta_hat.values().iter().all(|&v| v.abs() < 1e-12));
        assert!((fit.alpha_hat[0] - data.y().mean()).abs() < 1e-12);
    }

    #[test]
    fn ridge_limit_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let images = wavelet_images(&mut rng, 40, 8);
        let data = dataset_from(&images, |v| v[0] - v[9] + 0.3 * v[30]);
        let lambda = 0.05;
        let mut net = ElasticNetOptions::default();
        net.tolerance = 1e-24;
        let cfg = WnetConfig {
            forced: Some(WnetChoice {
                kstar: 20,
                eta: 0.0,
                lambda,
            }),
            net,
            ..Default::default()
        };
        let fit = fit_wnet(&data, &cfg).unwrap();
        let design = WaveletDesign::new(&data, cfg.coarsest_level).unwrap();
        let s = screen_by_variance(&design.coeffs, 20).unwrap();
        let pr = profile_out(data.w(), &columns(&design.coeffs, &s), data.y()).unwrap();
        let n = data.n() as f64;
        let a = pr.z.tr_mul(&pr.z) / n + DMatrix::identity(20, 20) * lambda;
        let b = a.cholesky().unwrap().solve(&(pr.z.tr_mul(&pr.y) / n));
        let oracle = design.image_of(&s, b.as_slice());
        for (x, y) in fit.beta_hat.values().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn lasso_path_finds_planted_atom_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let images = wavelet_images(&mut rng, 50, 16);
        let atom = WaveletBasis2D::la10(16).unwrap().basis_function(0);
        let data = dataset_from(&images, |v| v.iter().zip(&atom).map(|(a, b)| a * b).sum());
        let design = WaveletDesign::new(&data, 3).unwrap();
        let s = screen_by_variance(&design.coeffs, 50).unwrap();
        let pos = s.iter().position(|&j| j == 0).expect("atom screened");
        let pr = profile_out(data.w(), &columns(&design.coeffs, &s), data.y()).unwrap();
        let opts = ElasticNetOptions::default();
        let path = elastic_net(&pr.z, &pr.y, 1.0, None, &opts).unwrap();
        let exact = path
            .coefficients
            .iter()
            .any(|b| b.iter().enumerate().all(|(j, &v)| (v != 0.0) == (j == pos)));
        assert!(exact);
    }

    #[test]
    fn cross_validation_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let images = wavelet_images(&mut rng, 40, 8);
        let data = dataset_from(&images, |v| v[0] + 0.5 * v[3] + 0.1 * (v[20] * 7.0).sin());
        let cfg = WnetConfig {
            kstar_grid: vec![10, 25],
            net: ElasticNetOptions {
                path_length: 30,
                ..WnetConfig::default().net
            },
            ..Default::default()
        };
        let a = fit_wnet(&data, &cfg).unwrap();
        let b = fit_wnet(&data, &cfg).unwrap();
        assert_eq!(a.hyperparameters, b.hyperparameters);
        assert_eq!(a.metadata["cv_paths"], 50.0);
        let pred = a.predict(data.w(), data.x());
        let y: Vec<f64> = data.y().iter().copied().collect();
        assert!(crate::image::relative_prediction_error(&y, &pred).unwrap() <= 1.0 + 1e-9);
    }
}
