use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Image2D;
use crate::error::SoirError;

/// The nine model variants. Serialized by display name, parsed without
/// regard to case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MethodId {
    Splines,
    Fpcr,
    Pcr2d,
    Wcr,
    Wpls,
    Wnet,
    SparseGmrf,
    Gmrf,
    Gmrf2,
}

impl MethodId {
    pub const ALL: [MethodId; 9] = [
        MethodId::Splines,
        MethodId::Fpcr,
        MethodId::Pcr2d,
        MethodId::Wcr,
        MethodId::Wpls,
        MethodId::Wnet,
        MethodId::SparseGmrf,
        MethodId::Gmrf,
        MethodId::Gmrf2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Splines => "Splines",
            MethodId::Fpcr => "FPCR",
            MethodId::Pcr2d => "PCR2D",
            MethodId::Wcr => "WCR",
            MethodId::Wpls => "WPLS",
            MethodId::Wnet => "WNET",
            MethodId::SparseGmrf => "SparseGMRF",
            MethodId::Gmrf => "GMRF",
            MethodId::Gmrf2 => "GMRF2",
        }
    }

    pub fn is_bayesian(self) -> bool {
        matches!(
            self,
            MethodId::SparseGmrf | MethodId::Gmrf | MethodId::Gmrf2
        )
    }

    pub fn needs_wavelets(self) -> bool {
        matches!(self, MethodId::Wcr | MethodId::Wpls | MethodId::Wnet)
    }
}

impl From<MethodId> for String {
    fn from(m: MethodId) -> Self {
        m.as_str().to_string()
    }
}

impl TryFrom<String> for MethodId {
    type Error = SoirError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = SoirError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str().to_ascii_lowercase() == lower)
            .ok_or_else(|| SoirError::Parse(format!("unknown method '{s}'")))
    }
}

/// Prior/posterior information needed by the prior-impact measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSummary {
    /// Inverse-gamma prior of `σ²_β` and its full conditional at the final
    /// saved sweep, as (shape, scale) pairs.
    InverseGamma {
        prior: (f64, f64),
        full_conditional: (f64, f64),
    },
    /// Hyperparameters picked by cross-validation from `candidates` settings.
    DiscreteGrid { candidates: usize },
}

/// Gaussian approximation to the sampling/posterior covariance of the basis
/// coefficients, `β = basis · b`.
#[derive(Debug, Clone)]
pub struct CoefficientCovariance {
    /// L×K map from coefficients to pixels.
    pub basis: DMatrix<f64>,
    /// K×K covariance of the image coefficients.
    pub coef_cov: DMatrix<f64>,
    /// p×p covariance of `α̂`.
    pub alpha_cov: DMatrix<f64>,
}

impl CoefficientCovariance {
    /// Pointwise standard errors of `β̂`: `sqrt(diag(B Σ B'))`.
    pub fn beta_standard_errors(&self) -> Vec<f64> {
        let bs = &self.basis * &self.coef_cov;
        (0..self.basis.nrows())
            .map(|l| {
                let v = bs.row(l).dot(&self.basis.row(l));
                v.max(0.0).sqrt()
            })
            .collect()
    }

    pub fn alpha_standard_errors(&self) -> Vec<f64> {
        (0..self.alpha_cov.nrows())
            .map(|j| self.alpha_cov[(j, j)].max(0.0).sqrt())
            .collect()
    }
}

/// Output of any estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub method: MethodId,
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Image2D,
    /// Selected values, each taken from the configured grid.
    pub hyperparameters: BTreeMap<String, f64>,
    /// Spline, wavelet or component coefficients; posterior mean of the
    /// Ising field for SparseGMRF.
    pub internal_coefficients: Vec<f64>,
    /// Vector whose nonzero pattern encodes the model's own selection step
    /// (retained components, wavelet coefficients, or selected pixels).
    pub selection: Option<Vec<f64>>,
    /// Residual variance `σ̂²_ε` of the final fit.
    pub residual_variance: f64,
    pub runtime_seconds: f64,
    pub warnings: Vec<String>,
    /// Free-form numeric diagnostics (criterion values, chain counters, …).
    pub metadata: BTreeMap<String, f64>,
    pub prior: Option<PriorSummary>,
    #[serde(skip)]
    pub covariance: Option<CoefficientCovariance>,
}

impl FitResult {
    pub(crate) fn new(method: MethodId, alpha_hat: Vec<f64>, beta_hat: Image2D) -> Self {
        Self {
            method,
            alpha_hat,
            beta_hat,
            hyperparameters: BTreeMap::new(),
            internal_coefficients: Vec::new(),
            selection: None,
            residual_variance: f64::NAN,
            runtime_seconds: 0.0,
            warnings: Vec::new(),
            metadata: BTreeMap::new(),
            prior: None,
            covariance: None,
        }
    }

    /// In-sample predictions `Wα̂ + Xβ̂`.
    pub fn predict(&self, w: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<f64> {
        let a = nalgebra::DVector::from_column_slice(&self.alpha_hat);
        let b = nalgebra::DVector::from_column_slice(self.beta_hat.values());
        (w * a + x * b).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
        }
        assert_eq!(
            "sparsegmrf".parse::<MethodId>().unwrap(),
            MethodId::SparseGmrf
        );
        assert!("lasso".parse::<MethodId>().is_err());
    }
}
