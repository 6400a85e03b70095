use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::{all_folds, mse, pick_best, response_scale, CvConfig};
use super::splines::SplinesConfig;
use super::{hstack, image_from};
use crate::basis::{eval_spline_basis, SplineBasis2D};
use crate::error::{Result, SoirError};
use crate::image::{CoefficientCovariance, FitResult, MethodId, RegressionDataset};
use crate::kernels::{
    default_lambda_grid, pad_penalty, pca_svd, solve_penalized_ls, PcaResult, PenalizedLSFit,
    PenalizedLSProblem, SmoothingSelector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcrConfig {
    pub spline: SplinesConfig,
    pub k0_grid: Vec<usize>,
    pub cv: CvConfig,
    /// Skip cross-validation and use this number of components.
    pub fixed_k0: Option<usize>,
}

impl Default for FpcrConfig {
    fn default() -> Self {
        Self {
            spline: SplinesConfig::default(),
            k0_grid: vec![5, 10, 25, 50, 100, 150],
            cv: CvConfig::default(),
            fixed_k0: None,
        }
    }
}

struct ReducedFit {
    alpha: DVector<f64>,
    b_tilde: DVector<f64>,
    v0: DMatrix<f64>,
    sol: PenalizedLSFit,
}

/// Penalized regression of `y` on `[W | XB·V₀]` with penalty `V₀'PV₀`.
fn fit_reduced(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    pca: &PcaResult,
    k0: usize,
    penalty: &DMatrix<f64>,
    selector: SmoothingSelector,
    grid: Option<&Vec<f64>>,
) -> Result<ReducedFit> {
    let p = w.ncols();
    let v0 = pca.components.columns(0, k0).into_owned();
    let scores = pca.scores.columns(0, k0).into_owned();
    let z = hstack(w, &scores);
    let pen = pad_penalty(p, &(v0.transpose() * penalty * &v0));
    let grid = grid
        .cloned()
        .unwrap_or_else(|| default_lambda_grid(&z, &pen));
    let problem = PenalizedLSProblem::new(y.clone(), z, pen, grid, selector)?;
    let sol = solve_penalized_ls(&problem)?;
    Ok(ReducedFit {
        alpha: sol.coefficients.rows(0, p).into_owned(),
        b_tilde: sol.coefficients.rows(p, k0).into_owned(),
        v0,
        sol,
    })
}

fn candidate_grid(grid: &[usize], rank: usize, warnings: &mut Vec<String>) -> Vec<usize> {
    let mut g: Vec<usize> = grid
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k <= rank)
        .collect();
    g.sort_unstable();
    g.dedup();
    if g.len() < grid.len() {
        warnings.push(format!("component grid truncated at rank {rank}"));
    }
    if g.is_empty() {
        g.push(rank);
    }
    g
}

/// Functional principal component regression on the spline-expanded images.
pub fn fit_fpcr(data: &RegressionDataset, cfg: &FpcrConfig) -> Result<FitResult> {
    let start = Instant::now();
    data.require_demeaned()?;
    let sc = &cfg.spline;
    let sb: SplineBasis2D =
        eval_spline_basis(data.nx(), data.ny(), sc.kx, sc.ky, sc.penalty_order)?;
    let xb = data.x() * &sb.basis;
    if xb.amax() == 0.0 {
        return Err(SoirError::Degenerate(
            "image matrix is identically zero".into(),
        ));
    }
    let k = sb.n_basis();
    let mut warnings = Vec::new();
    let full = pca_svd(&xb, data.n().min(k))?;
    let mut cv_loss = f64::NAN;
    let k0 = match cfg.fixed_k0 {
        Some(k0) => {
            if k0 > full.rank {
                warnings.push(format!("K0 = {k0} exceeds rank {}; truncated", full.rank));
            }
            k0.min(full.rank).max(1)
        }
        None => {
            let folds = all_folds(data, &cfg.cv)?;
            let mut fold_pcas = Vec::with_capacity(folds.len());
            let mut min_rank = full.rank;
            for f in &folds {
                let xb_tr = f.train.x() * &sb.basis;
                let nmax = f.train.n().min(k);
                let pca = pca_svd(&xb_tr, nmax)?;
                min_rank = min_rank.min(pca.rank);
                fold_pcas.push(pca);
            }
            let grid = candidate_grid(&cfg.k0_grid, min_rank, &mut warnings);
            let mut losses = vec![0.0; grid.len()];
            for (f, pca) in folds.iter().zip(&fold_pcas) {
                let xb_te = &f.test_x * &sb.basis;
                for (g, &k0) in grid.iter().enumerate() {
                    let loss = match fit_reduced(
                        f.train.w(),
                        f.train.y(),
                        pca,
                        k0,
                        &sb.penalty,
                        sc.selector,
                        sc.lambda_grid.as_ref(),
                    ) {
                        Ok(r) => {
                            let pred = &f.test_w * &r.alpha + &xb_te * (&r.v0 * &r.b_tilde);
                            mse(&f.test_y, &pred)
                        }
                        Err(_) => f64::INFINITY,
                    };
                    losses[g] += loss / folds.len() as f64;
                }
            }
            let best = pick_best(&losses, response_scale(data.y()))
                .ok_or_else(|| SoirError::RankDeficient("FPCR failed for every K0".into()))?;
            cv_loss = losses[best];
            grid[best]
        }
    };
    let r = fit_reduced(
        data.w(),
        data.y(),
        &full,
        k0,
        &sb.penalty,
        sc.selector,
        sc.lambda_grid.as_ref(),
    )?;
    let b = &r.v0 * &r.b_tilde;
    let beta = &sb.basis * &b;
    let mut fit = FitResult::new(
        MethodId::Fpcr,
        r.alpha.iter().copied().collect(),
        image_from(data, beta.iter().copied().collect())?,
    );
    let sigma2 = r.sol.residual_variance(data.n());
    let p = data.p();
    fit.residual_variance = sigma2;
    fit.hyperparameters.insert("K0".into(), k0 as f64);
    fit.hyperparameters.insert("lambda".into(), r.sol.lambda);
    fit.metadata.insert("edf".into(), r.sol.edf);
    fit.metadata.insert("cv_loss".into(), cv_loss);
    fit.metadata.insert("rank_XB".into(), full.rank as f64);
    fit.internal_coefficients = b.iter().copied().collect();
    let mut sel = vec![0.0; data.n().min(k)];
    sel[..k0].copy_from_slice(r.b_tilde.as_slice());
    fit.selection = Some(sel);
    fit.covariance = Some(CoefficientCovariance {
        basis: &sb.basis * &r.v0,
        coef_cov: r.sol.inverse.view((p, p), (k0, k0)) * sigma2,
        alpha_cov: r.sol.inverse.view((0, 0), (p, p)) * sigma2,
    });
    fit.warnings = warnings;
    fit.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}
