//! Pointwise confidence and credible bands, and significance masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SoirError};
use crate::estimators::{refit_fixed, EstimatorSettings, McmcChain};
use crate::image::{demean_images, FitResult, Image2D, MethodId, RegressionDataset};
use crate::rng::{derive_seed, stream};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 200;
/// Largest tolerated share of failed bootstrap refits.
pub const MAX_FAILURE_SHARE: f64 = 0.1;
/// Smallest chain accepted by [`credible_band`].
pub const MIN_SAVED_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    Wald,
    BootstrapPercentile,
    Credible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub kind: BandKind,
    pub level: f64,
    pub lower: Image2D,
    pub upper: Image2D,
    pub alpha_lower: Vec<f64>,
    pub alpha_upper: Vec<f64>,
    /// Resamples whose refit failed (bootstrap only).
    pub failures: usize,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SoirError::InvalidInput(format!(
            "band level {level} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Standard normal quantile at `(1 + level)/2`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

/// `β̂ ± z·se` from the fit's Gaussian coefficient covariance.
pub fn wald_band(fit: &FitResult, level: f64) -> Result<Band> {
    let cov = fit.covariance.as_ref().ok_or_else(|| {
        SoirError::NotApplicable(format!("{} provides no coefficient covariance", fit.method))
    })?;
    let z = normal_quantile(level)?;
    let se = cov.beta_standard_errors();
    let ase = cov.alpha_standard_errors();
    if se.len() != fit.beta_hat.len() || ase.len() != fit.alpha_hat.len() {
        return Err(SoirError::DimensionMismatch(
            "covariance does not match the fit".into(),
        ));
    }
    wald_from_se(fit, &se, &ase, z, level)
}

fn wald_from_se(fit: &FitResult, se: &[f64], ase: &[f64], z: f64, level: f64) -> Result<Band> {
    let b = fit.beta_hat.values();
    let lower = b.iter().zip(se).map(|(v, s)| v - z * s).collect();
    let upper = b.iter().zip(se).map(|(v, s)| v + z * s).collect();
    Ok(Band {
        kind: BandKind::Wald,
        level,
        lower: fit.beta_hat.with_values(lower)?,
        upper: fit.beta_hat.with_values(upper)?,
        alpha_lower: fit
            .alpha_hat
            .iter()
            .zip(ase)
            .map(|(v, s)| v - z * s)
            .collect(),
        alpha_upper: fit
            .alpha_hat
            .iter()
            .zip(ase)
            .map(|(v, s)| v + z * s)
            .collect(),
        failures: 0,
    })
}

/// Empirical quantile of sorted data: the value at rank `⌈n·q⌉`.
pub fn quantile_type1(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (n as f64 * q).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Linear interpolation between order statistics at `(n − 1)·q`.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise quantile bands of a set of draws; `draws[s]` is one draw.
fn pointwise(
    draws: &[Vec<f64>],
    level: f64,
    quantile: fn(&[f64], f64) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let width = draws[0].len();
    let (ql, qu) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut col = vec![0.0; draws.len()];
    let mut lower = Vec::with_capacity(width);
    let mut upper = Vec::with_capacity(width);
    for j in 0..width {
        for (c, d) in col.iter_mut().zip(draws) {
            *c = d[j];
        }
        col.sort_by(f64::total_cmp);
        lower.push(quantile(&col, ql));
        upper.push(quantile(&col, qu));
    }
    (lower, upper)
}

fn intercept_column(data: &RegressionDataset) -> Option<usize> {
    (0..data.p()).find(|&j| data.w().column(j).iter().all(|v| *v == 1.0))
}

/// Percentile bootstrap: rows are resampled with replacement and refitted
/// with the hyperparameters of `original`. Resampled images are centred
/// again, and the intercept is mapped back to the original centring.
pub fn bootstrap_band(
    data: &RegressionDataset,
    original: &FitResult,
    settings: &EstimatorSettings,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<Band> {
    check_level(level)?;
    if !matches!(
        original.method,
        MethodId::Pcr2d | MethodId::Wcr | MethodId::Wpls | MethodId::Wnet
    ) {
        return Err(SoirError::NotApplicable(format!(
            "no bootstrap band for {}",
            original.method
        )));
    }
    if resamples < 2 {
        return Err(SoirError::InvalidInput(
            "need at least two resamples".into(),
        ));
    }
    if !data.is_demeaned() {
        return Err(SoirError::Precondition("images must be demeaned".into()));
    }
    let n = data.n();
    let icol = intercept_column(data);
    let refits: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(derive_seed(seed, b as u64), 0);
            let rows: Vec<usize> = (0..n)
                .map(|_| rand::Rng::random_range(&mut rng, 0..n))
                .collect();
            let resampled = demean_images(data.select_rows(&rows)?)?;
            let fit = refit_fixed(&resampled, settings, original)?;
            let mut alpha = fit.alpha_hat.clone();
            if let (Some(j), Some(m)) = (icol, resampled.pixel_means()) {
                alpha[j] -= m
                    .iter()
                    .zip(fit.beta_hat.values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            Ok((fit.beta_hat.into_values(), alpha))
        })
        .collect();
    let failures = refits.iter().filter(|r| r.is_err()).count();
    if failures as f64 > MAX_FAILURE_SHARE * resamples as f64 {
        let first = refits
            .into_iter()
            .find_map(|r| r.err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(SoirError::Degenerate(format!(
            "{failures} of {resamples} bootstrap refits failed (first: {first})"
        )));
    }
    let (betas, alphas): (Vec<_>, Vec<_>) = refits.into_iter().flatten().unzip();
    let (lower, upper) = pointwise(&betas, level, quantile_type1);
    let (alpha_lower, alpha_upper) = pointwise(&alphas, level, quantile_type1);
    Ok(Band {
        kind: BandKind::BootstrapPercentile,
        level,
        lower: original.beta_hat.with_values(lower)?,
        upper: original.beta_hat.with_values(upper)?,
        alpha_lower,
        alpha_upper,
        failures,
    })
}

/// Pointwise type-7 quantiles of the saved draws.
pub fn credible_band(chain: &McmcChain, nx: usize, ny: usize, level: f64) -> Result<Band> {
    check_level(level)?;
    if chain.saved_steps < MIN_SAVED_STEPS {
        return Err(SoirError::InvalidInput(format!(
            "chain has {} saved steps, need at least {MIN_SAVED_STEPS}",
            chain.saved_steps
        )));
    }
    if nx * ny != chain.n_pixels {
        return Err(SoirError::DimensionMismatch(
            "grid does not match the chain".into(),
        ));
    }
    let betas: Vec<Vec<f64>> = (0..chain.saved_steps)
        .map(|s| chain.beta_draw(s).to_vec())
        .collect();
    let alphas: Vec<Vec<f64>> = (0..chain.saved_steps)
        .map(|s| chain.alpha_draw(s).to_vec())
        .collect();
    let (lower, upper) = pointwise(&betas, level, quantile_type7);
    let (alpha_lower, alpha_upper) = pointwise(&alphas, level, quantile_type7);
    Ok(Band {
        kind: BandKind::Credible,
        level,
        lower: Image2D::new(nx, ny, lower)?,
        upper: Image2D::new(nx, ny, upper)?,
        alpha_lower,
        alpha_upper,
        failures: 0,
    })
}

/// 1 where the closed band `[lower, upper]` excludes zero, else 0.
pub fn flag_significant(band: &Band) -> Image2D {
    let v = band
        .lower
        .values()
        .iter()
        .zip(band.upper.values())
        .map(|(&l, &u)| if l > 0.0 || u < 0.0 { 1.0 } else { 0.0 })
        .collect();
    band.lower.with_values(v).expect("same shape as the band")
}

/// The band a method supports: credible for the Bayesian models, Wald for
/// Splines and FPCR, percentile bootstrap for the rest.
pub fn band_for(
    data: &RegressionDataset,
    fit: &FitResult,
    chain: Option<&McmcChain>,
    settings: &EstimatorSettings,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<Band> {
    match fit.method {
        MethodId::Gmrf | MethodId::Gmrf2 | MethodId::SparseGmrf => {
            let chain = chain
                .ok_or_else(|| SoirError::Precondition("Bayesian fit without its chain".into()))?;
            credible_band(chain, data.nx(), data.ny(), level)
        }
        MethodId::Splines | MethodId::Fpcr => wald_band(fit, level),
        _ => bootstrap_band(data, fit, settings, resamples, seed, level),
    }
}
