//! Measures of how far a fitted coefficient image departs from the
//! smoothness, sparsity, projection and prior assumptions of a model.
//! Every measure lies in `[0, 1]` with 0 meaning the assumption is met.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::basis::{dwt2_forward, dwt2_inverse, project_onto_span, WaveletBasis2D};
use crate::error::{Result, SoirError};
use crate::image::{FitResult, Image2D, MethodId, NeighborhoodMatrix, PriorSummary};

/// Threshold on posterior inclusion probabilities; only values strictly
/// above it count as selected.
pub const SELECTION_THRESHOLD: f64 = 0.5;

fn require_nonzero(beta: &[f64]) -> Result<f64> {
    let ss: f64 = beta.iter().map(|v| v * v).sum();
    if !(ss > 0.0) {
        return Err(SoirError::Degenerate(
            "measure undefined for a zero vector".into(),
        ));
    }
    Ok(ss)
}

/// Rayleigh quotient `β'Pβ / (λ_max(P)·β'β)`.
pub fn m_smoothness(beta: &[f64], penalty: &DMatrix<f64>) -> Result<f64> {
    if penalty.nrows() != beta.len() || penalty.ncols() != beta.len() {
        return Err(SoirError::DimensionMismatch(
            "penalty does not match β".into(),
        ));
    }
    let ss = require_nonzero(beta)?;
    let lmax = SymmetricEigen::new(penalty.clone()).eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(SoirError::Degenerate(
            "penalty has no positive eigenvalue".into(),
        ));
    }
    let b = nalgebra::DVector::from_column_slice(beta);
    let q = b.dot(&(penalty * &b));
    Ok((q / (lmax * ss)).clamp(0.0, 1.0))
}

/// Smoothness of an image under the four-neighbour grid Laplacian.
pub fn m_smoothness_image(beta: &Image2D) -> Result<f64> {
    let nb = NeighborhoodMatrix::grid(beta.nx(), beta.ny())?;
    m_smoothness_grid(beta.values(), &nb)
}

pub fn m_smoothness_grid(beta: &[f64], nb: &NeighborhoodMatrix) -> Result<f64> {
    if nb.n_pixels() != beta.len() {
        return Err(SoirError::DimensionMismatch("grid does not match β".into()));
    }
    let ss = require_nonzero(beta)?;
    let lmax = nb.lambda_max();
    if !(lmax > 0.0) {
        return Err(SoirError::Degenerate(
            "grid Laplacian has no positive eigenvalue".into(),
        ));
    }
    Ok((nb.quad_form(beta) / (lmax * ss)).clamp(0.0, 1.0))
}

/// `1 − G(β)` with `G` the Gini index of the absolute values.
pub fn m_sparsity(beta: &[f64]) -> Result<f64> {
    let mut a: Vec<f64> = beta.iter().map(|v| v.abs()).collect();
    let l1: f64 = a.iter().sum();
    if !(l1 > 0.0) {
        return Err(SoirError::Degenerate(
            "measure undefined for a zero vector".into(),
        ));
    }
    a.sort_by(f64::total_cmp);
    let l = a.len() as i64;
    // G = Σ (2k − L − 1)·a_(k) / (L·‖a‖₁); tied values share one integer
    // weight so equal entries cancel exactly
    let mut num = 0.0;
    let mut k = 0;
    while k < a.len() {
        let mut end = k;
        while end < a.len() && a[end] == a[k] {
            end += 1;
        }
        let weight: i64 = (k as i64 + 1..=end as i64).map(|r| 2 * r - l - 1).sum();
        num += weight as f64 * a[k];
        k = end;
    }
    let gini = num / (l as f64 * l1);
    Ok((1.0 - gini).clamp(0.0, 1.0))
}

/// Fraction of nonzero coefficients.
pub fn m_selection(b: &[f64]) -> Result<f64> {
    if b.is_empty() {
        return Err(SoirError::InvalidInput("empty coefficient vector".into()));
    }
    Ok(b.iter().filter(|v| **v != 0.0).count() as f64 / b.len() as f64)
}

/// Fraction of posterior inclusion probabilities strictly above 0.5.
pub fn m_selection_probabilities(gamma_mean: &[f64]) -> Result<f64> {
    if gamma_mean.is_empty() {
        return Err(SoirError::InvalidInput("empty inclusion vector".into()));
    }
    Ok(gamma_mean
        .iter()
        .filter(|v| **v > SELECTION_THRESHOLD)
        .count() as f64
        / gamma_mean.len() as f64)
}

/// `1 − ‖Πβ‖²/‖β‖²` for the projection `Π` onto the span of `basis`'s columns.
pub fn m_projection(beta: &Image2D, basis: &DMatrix<f64>) -> Result<f64> {
    Ok(project_onto_span(beta, basis)?.1)
}

/// Projection measure for the full orthonormal wavelet basis of a square
/// power-of-two image, computed by a forward and inverse transform.
pub fn m_projection_wavelets(beta: &Image2D) -> Result<f64> {
    let energy: f64 = require_nonzero(beta.values())?;
    let w = WaveletBasis2D::for_image(beta)?;
    let back = dwt2_inverse(&dwt2_forward(beta, &w)?, &w)?;
    let resid: f64 = beta
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((resid / energy).clamp(0.0, 1.0))
}

/// `KL(IG(a₁, b₁) ‖ IG(a₂, b₂))` in (shape, scale) parametrization.
pub fn kl_inverse_gamma(p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    let ((a1, b1), (a2, b2)) = (p, q);
    if [a1, b1, a2, b2].iter().any(|v| !(*v > 0.0)) {
        return Err(SoirError::InvalidInput(
            "inverse-gamma parameters must be positive".into(),
        ));
    }
    let kl = (a1 - a2) * digamma(a1) - ln_gamma(a1)
        + ln_gamma(a2)
        + a2 * (b1.ln() - b2.ln())
        + a1 * (b2 - b1) / b1;
    Ok(kl.max(0.0))
}

/// `1 − exp(−D/10)`.
pub fn prior_measure_from_divergence(d: f64) -> f64 {
    1.0 - (-d / 10.0).exp()
}

pub fn m_prior(summary: &PriorSummary) -> Result<f64> {
    let d = match *summary {
        PriorSummary::InverseGamma {
            prior,
            full_conditional,
        } => kl_inverse_gamma(full_conditional, prior)?,
        PriorSummary::DiscreteGrid { candidates } => {
            if candidates == 0 {
                return Err(SoirError::InvalidInput("empty hyperparameter grid".into()));
            }
            (candidates as f64).ln()
        }
    };
    Ok(prior_measure_from_divergence(d))
}

/// Measures of one fit. Absent values do not apply to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub method: MethodId,
    pub smoothness_image: Option<f64>,
    pub smoothness_coeff: Option<f64>,
    pub sparsity_image: Option<f64>,
    pub sparsity_wavelet: Option<f64>,
    pub selection: Option<f64>,
    pub projection: BTreeMap<String, f64>,
    pub prior: Option<f64>,
}

impl MeasureReport {
    pub fn csv_header(basis_names: &[String]) -> Vec<String> {
        let mut h: Vec<String> = [
            "method",
            "smoothness_image",
            "smoothness_coeff",
            "sparsity_image",
            "sparsity_wavelet",
            "selection",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(basis_names.iter().map(|b| format!("projection_{b}")));
        h.push("prior".into());
        h
    }

    /// Fields in header order; absent values are empty strings.
    pub fn csv_record(&self, basis_names: &[String]) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut r = vec![
            self.method.to_string(),
            f(self.smoothness_image),
            f(self.smoothness_coeff),
            f(self.sparsity_image),
            f(self.sparsity_wavelet),
            f(self.selection),
        ];
        r.extend(
            basis_names
                .iter()
                .map(|b| f(self.projection.get(b).copied())),
        );
        r.push(f(self.prior));
        r
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [
            self.smoothness_image,
            self.smoothness_coeff,
            self.sparsity_image,
            self.sparsity_wavelet,
            self.selection,
            self.prior,
        ]
        .into_iter()
        .flatten()
        .chain(self.projection.values().copied())
    }
}

/// What a fit needs from outside itself to be measured.
pub struct MeasureContext<'a> {
    /// Named bases onto which `β̂` is projected.
    pub bases: &'a [(String, DMatrix<f64>)],
    /// Penalty on the spline coefficients, for Splines and FPCR.
    pub spline_penalty: Option<&'a DMatrix<f64>>,
}

/// All measures that apply to `fit`. Measures undefined for the estimate
/// (for example a zero image) are left absent.
pub fn measure_fit(fit: &FitResult, ctx: &MeasureContext<'_>) -> MeasureReport {
    let beta = &fit.beta_hat;
    let smoothness_image = m_smoothness_image(beta).ok();
    let sparsity_image = m_sparsity(beta.values()).ok();
    let sparsity_wavelet = if beta.is_square_power_of_two() {
        WaveletBasis2D::for_image(beta)
            .and_then(|w| dwt2_forward(beta, &w))
            .and_then(|c| m_sparsity(&c))
            .ok()
    } else {
        None
    };
    let smoothness_coeff = match (fit.method, ctx.spline_penalty) {
        (MethodId::Splines | MethodId::Fpcr, Some(p))
            if p.nrows() == fit.internal_coefficients.len() =>
        {
            m_smoothness(&fit.internal_coefficients, p).ok()
        }
        _ => None,
    };
    let selection = match (fit.method, fit.selection.as_ref()) {
        (MethodId::SparseGmrf, Some(g)) => m_selection_probabilities(g).ok(),
        (_, Some(b)) => m_selection(b).ok(),
        _ => None,
    };
    let projection = ctx
        .bases
        .iter()
        .filter_map(|(name, b)| m_projection(beta, b).ok().map(|v| (name.clone(), v)))
        .collect();
    let prior = fit.prior.as_ref().and_then(|p| m_prior(p).ok());
    MeasureReport {
        method: fit.method,
        smoothness_image,
        smoothness_coeff,
        sparsity_image,
        sparsity_wavelet,
        selection,
        projection,
        prior,
    }
}
