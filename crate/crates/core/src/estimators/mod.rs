//! Basis-function and Bayesian estimators of the coefficient image.

pub mod cv;
pub mod fpcr;
pub mod gmrf;
pub mod pcr2d;
pub mod sparse_gmrf;
pub mod splines;
pub mod wavelet_reg;
pub mod wnet;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoirError};
use crate::image::{FitResult, Image2D, MethodId, RegressionDataset};
use crate::rng::derive_seed;

pub use cv::{fold_ids, pick_best, splits, CvConfig, FoldSplit, TIE_TOLERANCE};
pub use fpcr::{fit_fpcr, FpcrConfig};
pub use gmrf::{gibbs_gmrf, mc_standard_error, GmrfConfig, InvGamma, McmcChain};
pub use pcr2d::{fit_pcr2d, Pcr2dConfig};
pub use sparse_gmrf::{
    gibbs_sparse_gmrf, inclusion_log_odds, sparse_gmrf_chain, GridCount, SparseGmrfConfig,
    SparseSetting,
};
pub use splines::{fit_splines, spline_basis_matrix, SplinesConfig};
pub use wavelet_reg::{
    fit_wavelet_regression, fit_wcr, fit_wpls, screen_by_variance, Reduction, WaveletRegConfig,
};
pub use wnet::{fit_wnet, WnetChoice, WnetConfig};

/// `[a | b]` for matrices with the same row count.
pub(crate) fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub(crate) fn image_from(data: &RegressionDataset, values: Vec<f64>) -> Result<Image2D> {
    Image2D::new(data.nx(), data.ny(), values)
}

/// Compute profile: `Paper` uses the published settings, `Desk` shortens
/// the MCMC runs for laptop-scale studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = SoirError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(SoirError::Parse(format!("unknown profile '{other}'"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

/// Configuration of every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSettings {
    pub splines: SplinesConfig,
    pub fpcr: FpcrConfig,
    pub pcr2d: Pcr2dConfig,
    pub wcr: WaveletRegConfig,
    pub wpls: WaveletRegConfig,
    pub wnet: WnetConfig,
    pub gmrf: GmrfConfig,
    pub gmrf2: GmrfConfig,
    pub sparse_gmrf: SparseGmrfConfig,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self::paper()
    }
}

impl EstimatorSettings {
    pub fn paper() -> Self {
        Self {
            splines: SplinesConfig::default(),
            fpcr: FpcrConfig::default(),
            pcr2d: Pcr2dConfig::default(),
            wcr: WaveletRegConfig::wcr(),
            wpls: WaveletRegConfig::wpls(),
            wnet: WnetConfig::default(),
            gmrf: GmrfConfig::gmrf(),
            gmrf2: GmrfConfig::gmrf2(),
            sparse_gmrf: SparseGmrfConfig::default(),
        }
    }

    pub fn desk() -> Self {
        let mut s = Self::paper();
        for g in [&mut s.gmrf, &mut s.gmrf2] {
            g.iterations = 1000;
            g.burnin = 200;
            g.thin = 5;
        }
        let sg = &mut s.sparse_gmrf;
        sg.cv_iterations = 100;
        sg.cv_burnin = 40;
        sg.final_iterations = 1000;
        sg.final_burnin = 200;
        sg.final_thin = 5;
        s
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Copy with every fold assignment and chain seeded from `seed`.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        let cv = |label: u64| CvConfig {
            seed: derive_seed(seed, label),
            ..CvConfig::default()
        };
        s.fpcr.cv = CvConfig {
            folds: s.fpcr.cv.folds,
            ..cv(2)
        };
        s.pcr2d.cv = CvConfig {
            folds: s.pcr2d.cv.folds,
            ..cv(3)
        };
        s.wcr.cv = CvConfig {
            folds: s.wcr.cv.folds,
            ..cv(4)
        };
        s.wpls.cv = CvConfig {
            folds: s.wpls.cv.folds,
            ..cv(5)
        };
        s.wnet.cv = CvConfig {
            folds: s.wnet.cv.folds,
            ..cv(6)
        };
        s.sparse_gmrf.cv = CvConfig {
            folds: s.sparse_gmrf.cv.folds,
            ..cv(7)
        };
        s.sparse_gmrf.seed = derive_seed(seed, 7);
        s.gmrf.seed = derive_seed(seed, 8);
        s.gmrf2.seed = derive_seed(seed, 9);
        s
    }
}

/// Fit `method` with the (already seeded) settings. Bayesian methods also
/// return their chain.
pub fn fit_method(
    method: MethodId,
    data: &RegressionDataset,
    settings: &EstimatorSettings,
) -> Result<(FitResult, Option<McmcChain>)> {
    let plain = |r: Result<FitResult>| r.map(|f| (f, None));
    match method {
        MethodId::Splines => plain(fit_splines(data, &settings.splines)),
        MethodId::Fpcr => plain(fit_fpcr(data, &settings.fpcr)),
        MethodId::Pcr2d => plain(fit_pcr2d(data, &settings.pcr2d)),
        MethodId::Wcr => plain(fit_wcr(data, &settings.wcr)),
        MethodId::Wpls => plain(fit_wpls(data, &settings.wpls)),
        MethodId::Wnet => plain(fit_wnet(data, &settings.wnet)),
        MethodId::Gmrf => gibbs_gmrf(data, &settings.gmrf, method).map(|(f, c)| (f, Some(c))),
        MethodId::Gmrf2 => gibbs_gmrf(data, &settings.gmrf2, method).map(|(f, c)| (f, Some(c))),
        MethodId::SparseGmrf => {
            gibbs_sparse_gmrf(data, &settings.sparse_gmrf).map(|(f, c)| (f, Some(c)))
        }
    }
}

fn hyper(fit: &FitResult, key: &str) -> Result<f64> {
    fit.hyperparameters.get(key).copied().ok_or_else(|| {
        SoirError::InvalidInput(format!("{} fit has no '{key}' hyperparameter", fit.method))
    })
}

/// Refit a frequentist method on new data with the hyperparameters chosen
/// in `original` held fixed (no cross-validation).
pub fn refit_fixed(
    data: &RegressionDataset,
    settings: &EstimatorSettings,
    original: &FitResult,
) -> Result<FitResult> {
    match original.method {
        MethodId::Splines => {
            let cfg = SplinesConfig {
                lambda_grid: Some(vec![hyper(original, "lambda")?]),
                ..settings.splines.clone()
            };
            fit_splines(data, &cfg)
        }
        MethodId::Fpcr => {
            let mut cfg = settings.fpcr.clone();
            cfg.fixed_k0 = Some(hyper(original, "K0")? as usize);
            cfg.spline.lambda_grid = Some(vec![hyper(original, "lambda")?]);
            fit_fpcr(data, &cfg)
        }
        MethodId::Pcr2d => {
            let cfg = Pcr2dConfig {
                forced_k: Some(hyper(original, "K")? as usize),
                ..settings.pcr2d.clone()
            };
            fit_pcr2d(data, &cfg)
        }
        MethodId::Wcr | MethodId::Wpls => {
            let base = if original.method == MethodId::Wcr {
                &settings.wcr
            } else {
                &settings.wpls
            };
            let forced = Some((
                hyper(original, "K_star")? as usize,
                hyper(original, "K0")? as usize,
            ));
            fit_wavelet_regression(
                data,
                &WaveletRegConfig {
                    forced,
                    ..base.clone()
                },
            )
        }
        MethodId::Wnet => {
            let forced = Some(WnetChoice {
                kstar: hyper(original, "K_star")? as usize,
                eta: hyper(original, "eta")?,
                lambda: hyper(original, "lambda")?,
            });
            fit_wnet(
                data,
                &WnetConfig {
                    forced,
                    ..settings.wnet.clone()
                },
            )
        }
        m => Err(SoirError::NotApplicable(format!(
            "{m} has no fixed-hyperparameter refit"
        ))),
    }
}
