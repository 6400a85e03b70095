use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SoirError};

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coefficients: DVector<f64>,
    /// `(D'D)⁻¹`.
    pub unscaled_cov: DMatrix<f64>,
    pub rss: f64,
}

impl LeastSquaresFit {
    /// `RSS / (N − K)`.
    pub fn residual_variance(&self, n: usize) -> f64 {
        let k = self.coefficients.len();
        if n > k {
            self.rss / (n - k) as f64
        } else {
            f64::NAN
        }
    }
}

fn r_factor_ok(r: &DMatrix<f64>) -> bool {
    let d = r.diagonal();
    let big = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    big > 0.0 && d.iter().all(|v| v.abs() > 1e-10 * big)
}

/// Ordinary least squares via QR; rank-deficient designs are rejected.
pub fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquaresFit> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(SoirError::DimensionMismatch(format!(
            "{} responses for {n} rows",
            y.len()
        )));
    }
    if k == 0 || n < k {
        return Err(SoirError::RankDeficient(format!(
            "{n}x{k} design has no unique fit"
        )));
    }
    let qr = design.clone().qr();
    let r = qr.r();
    if !r_factor_ok(&r) {
        return Err(SoirError::RankDeficient(
            "design matrix is rank deficient".into(),
        ));
    }
    let qty = qr.q().tr_mul(y);
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| SoirError::RankDeficient("singular R factor".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| SoirError::RankDeficient("singular R factor".into()))?;
    let unscaled_cov = &r_inv * r_inv.transpose();
    let rss = (y - design * &coefficients).norm_squared();
    Ok(LeastSquaresFit {
        coefficients,
        unscaled_cov,
        rss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_normal_equations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);
        let d = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let fit = least_squares(&d, &y).unwrap();
        let g = d.tr_mul(&d);
        let ne = g.clone().cholesky().unwrap().solve(&d.tr_mul(&y));
        assert!((&fit.coefficients - ne).amax() < 1e-12);
        assert!((fit.unscaled_cov * g - DMatrix::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let d = DMatrix::from_fn(6, 2, |i, _| i as f64);
        assert!(matches!(
            least_squares(&d, &DVector::zeros(6)),
            Err(SoirError::RankDeficient(_))
        ));
    }
}
