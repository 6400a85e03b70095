//! Pixel grids, regression datasets, the grid neighbourhood structure and
//! the error/correlation metrics shared by every estimator.
//!
//! Images are vectorized in row-major order: pixel `(x, y)` sits at index
//! `y * nx + x`. The wavelet transform, the spline basis, the neighbourhood
//! matrix and the design matrix `X` all use this ordering.

mod dataset;
mod fit;
mod neighborhood;

pub use dataset::{demean_images, RegressionDataset};
pub use fit::{CoefficientCovariance, FitResult, MethodId, PriorSummary};
pub use neighborhood::{build_neighborhood, NeighborhoodMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SoirError};

/// A rectangular grid of real values; used both for covariate images and
/// for coefficient images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image2D {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl Image2D {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(SoirError::InvalidInput(format!(
                "image must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if values.len() != nx * ny {
            return Err(SoirError::DimensionMismatch(format!(
                "{nx}x{ny} image needs {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SoirError::InvalidInput(format!(
                "non-finite pixel value at index {i}"
            )));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn zeros(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, vec![0.0; nx * ny])
    }

    /// Builds an image from `f(x, y)`.
    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                values.push(f(x, y));
            }
        }
        Self::new(nx, ny, values)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.nx + x]
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.nx, self.ny, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn is_square_power_of_two(&self) -> bool {
        self.nx == self.ny && self.nx.is_power_of_two()
    }

    fn check_shape(&self, other: &Image2D) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SoirError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )))
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `Σ(β − β̂)² / Σ(β − β̄)²`; 1 corresponds to the constant image at the
/// average of the truth.
pub fn relative_estimation_error(beta_true: &Image2D, beta_hat: &Image2D) -> Result<f64> {
    beta_true.check_shape(beta_hat)?;
    let bar = mean(beta_true.values());
    let denom: f64 = beta_true.values().iter().map(|b| (b - bar).powi(2)).sum();
    if denom <= 0.0 {
        return Err(SoirError::Degenerate(
            "true coefficient image is constant".into(),
        ));
    }
    let num: f64 = beta_true
        .values()
        .iter()
        .zip(beta_hat.values())
        .map(|(b, h)| (b - h).powi(2))
        .sum();
    Ok(num / denom)
}

/// `Σ(y − ŷ)² / Σ(y − ȳ)²`; 1 corresponds to the intercept-only model.
pub fn relative_prediction_error(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(SoirError::DimensionMismatch(format!(
            "{} responses vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(SoirError::InvalidInput(
            "need at least two responses".into(),
        ));
    }
    let bar = mean(y);
    let denom: f64 = y.iter().map(|v| (v - bar).powi(2)).sum();
    if denom <= 0.0 {
        return Err(SoirError::Degenerate("response is constant".into()));
    }
    let num: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / denom)
}

/// Pearson correlation of two equally long vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(SoirError::DimensionMismatch(
            "correlation of unequal vectors".into(),
        ));
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(SoirError::Degenerate(
            "correlation with a constant vector".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the vectorized pixel values.
pub fn image_correlation(a: &Image2D, b: &Image2D) -> Result<f64> {
    a.check_shape(b)?;
    pearson(a.values(), b.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(v: &[f64]) -> Image2D {
        Image2D::new(2, v.len() / 2, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_images() {
        assert!(Image2D::new(1, 4, vec![0.0; 4]).is_err());
        assert!(Image2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image2D::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        let im = Image2D::from_fn(3, 2, |x, y| (10 * y + x) as f64).unwrap();
        assert_eq!(im.values(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(im.get(2, 1), 12.0);
    }

    #[test]
    fn estimation_error_examples() {
        let t = img(&[0.0, 2.0, 5.0, -1.0]);
        assert_eq!(relative_estimation_error(&t, &t).unwrap(), 0.0);
        let bar = 1.5;
        let c = img(&[bar; 4]);
        assert!((relative_estimation_error(&t, &c).unwrap() - 1.0).abs() < 1e-15);
        let t = img(&[0.0, 2.0, 0.0, 2.0]);
        let h = img(&[1.0, 1.0, 1.0, 1.0]);
        assert!((relative_estimation_error(&t, &h).unwrap() - 1.0).abs() < 1e-15);
        let flat = img(&[3.0; 4]);
        assert!(matches!(
            relative_estimation_error(&flat, &h),
            Err(SoirError::Degenerate(_))
        ));
    }

    #[test]
    fn prediction_error_examples() {
        let y = [0.0, 2.0];
        assert_eq!(relative_prediction_error(&y, &y).unwrap(), 0.0);
        assert!((relative_prediction_error(&y, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((relative_prediction_error(&y, &[1.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(relative_prediction_error(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(relative_prediction_error(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let a = img(&[1.0, 2.0, 3.0, 4.0]);
        assert!((image_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg = a.map(|v| -v).unwrap();
        assert!((image_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        let b = img(&[1.0, 2.0, 4.0, 3.0]);
        assert!((image_correlation(&a, &b).unwrap() - 0.8).abs() < 1e-14);
        let c = img(&[1.0; 4]);
        assert!(image_correlation(&a, &c).is_err());
    }

    proptest! {
        #[test]
        fn estimation_error_shift_invariant(
            t in prop::collection::vec(-5.0f64..5.0, 6),
            h in prop::collection::vec(-5.0f64..5.0, 6),
            c in -10.0f64..10.0,
        ) {
            let ti = Image2D::new(2, 3, t.clone()).unwrap();
            let hi = Image2D::new(2, 3, h.clone()).unwrap();
            prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-3));
            let base = relative_estimation_error(&ti, &hi).unwrap();
            let shifted = relative_estimation_error(
                &ti.map(|v| v + c).unwrap(),
                &hi.map(|v| v + c).unwrap(),
            ).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn correlation_affine_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 8),
            b in prop::collection::vec(-5.0f64..5.0, 8),
            scale in 0.01f64..100.0,
            shift in -10.0f64..10.0,
        ) {
            let ai = Image2D::new(2, 4, a.clone()).unwrap();
            let bi = Image2D::new(2, 4, b.clone()).unwrap();
            prop_assume!(a.iter().any(|v| (v - a[0]).abs() > 1e-2));
            prop_assume!(b.iter().any(|v| (v - b[0]).abs() > 1e-2));
            let r = image_correlation(&ai, &bi).unwrap();
            let r2 = image_correlation(&ai.map(|v| scale * v + shift).unwrap(), &bi).unwrap();
            let r3 = image_correlation(&ai, &bi.map(|v| scale * v - shift).unwrap()).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            prop_assert!((r - r3).abs() < 1e-9);
        }
    }
}
