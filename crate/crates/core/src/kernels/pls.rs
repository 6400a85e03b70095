use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SoirError};

/// PLS1 components from NIPALS on centered `Z` and `y`.
#[derive(Debug, Clone)]
pub struct PlsResult {
    /// K×k rotation `R = W(P'W)⁻¹`; scores are `(Z − 1z̄')R`.
    pub weights: DMatrix<f64>,
    /// N×k score matrix with mutually orthogonal columns.
    pub scores: DMatrix<f64>,
    /// Unit-norm NIPALS weight vectors, one per column.
    pub raw_weights: DMatrix<f64>,
    pub z_means: DVector<f64>,
    pub y_mean: f64,
    /// Set when the covariance with `y` vanished before `k0` components.
    pub truncated: bool,
}

impl PlsResult {
    pub fn n_components(&self) -> usize {
        self.weights.ncols()
    }
}

fn center_columns(z: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let means = DVector::from_fn(z.ncols(), |j, _| z.column(j).mean());
    let mut c = z.clone();
    for j in 0..z.ncols() {
        c.column_mut(j).add_scalar_mut(-means[j]);
    }
    (c, means)
}

pub fn pls_components(z: &DMatrix<f64>, y: &DVector<f64>, k0: usize) -> Result<PlsResult> {
    let (n, k) = z.shape();
    if y.len() != n {
        return Err(SoirError::DimensionMismatch(format!(
            "{} responses for {n} rows",
            y.len()
        )));
    }
    if k0 == 0 || k0 > n.min(k) {
        return Err(SoirError::InvalidInput(format!(
            "requested {k0} PLS components from a {n}x{k} matrix"
        )));
    }
    let y_mean = y.mean();
    let mut yc = y.add_scalar(-y_mean);
    let y_scale = yc.norm();
    if y_scale == 0.0 {
        return Err(SoirError::Degenerate("response is constant".into()));
    }
    let (mut zc, z_means) = center_columns(z);
    let z_scale = zc.norm();
    let tol = 1e-10 * z_scale * y_scale;
    let mut ws = Vec::with_capacity(k0);
    let mut ps = Vec::with_capacity(k0);
    let mut ts = Vec::with_capacity(k0);
    let mut truncated = false;
    for _ in 0..k0 {
        let mut w = zc.tr_mul(&yc);
        let cov = w.norm();
        if !(cov > tol) {
            truncated = true;
            break;
        }
        w /= cov;
        let t = &zc * &w;
        let tt = t.norm_squared();
        if !(tt > 0.0) {
            truncated = true;
            break;
        }
        let p = zc.tr_mul(&t) / tt;
        let q = yc.dot(&t) / tt;
        zc -= &t * p.transpose();
        yc.axpy(-q, &t, 1.0);
        ws.push(w);
        ps.push(p);
        ts.push(t);
    }
    let r = ws.len();
    if r == 0 {
        return Ok(PlsResult {
            weights: DMatrix::zeros(k, 0),
            scores: DMatrix::zeros(n, 0),
            raw_weights: DMatrix::zeros(k, 0),
            z_means,
            y_mean,
            truncated: true,
        });
    }
    let wm = DMatrix::from_columns(&ws);
    let pm = DMatrix::from_columns(&ps);
    // P'W is upper triangular with unit diagonal
    let ptw = pm.tr_mul(&wm);
    let inv = ptw
        .try_inverse()
        .ok_or_else(|| SoirError::RankDeficient("singular PLS loading system".into()))?;
    let weights = &wm * inv;
    Ok(PlsResult {
        weights,
        scores: DMatrix::from_columns(&ts),
        raw_weights: wm,
        z_means,
        y_mean,
        truncated,
    })
}
