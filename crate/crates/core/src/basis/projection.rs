use nalgebra::DMatrix;

use crate::error::{Result, SoirError};
use crate::image::Image2D;

/// Relative tolerance below which a column is treated as dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the column span of an L×K matrix, built by
/// Gram-Schmidt QR with dependent columns dropped.
#[derive(Debug, Clone)]
pub struct OrthonormalSpan {
    q: DMatrix<f64>,
    dropped: usize,
}

impl OrthonormalSpan {
    pub fn new(basis_matrix: &DMatrix<f64>) -> Result<Self> {
        let (l, k) = basis_matrix.shape();
        if l == 0 || k == 0 {
            return Err(SoirError::InvalidInput("empty basis matrix".into()));
        }
        if basis_matrix.iter().any(|v| !v.is_finite()) {
            return Err(SoirError::InvalidInput("non-finite basis matrix".into()));
        }
        // Gram-Schmidt with one re-orthogonalization pass per column.
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k.min(l));
        let mut dropped = 0;
        for j in 0..k {
            let orig: Vec<f64> = basis_matrix.column(j).iter().copied().collect();
            let norm0 = dot(&orig, &orig).sqrt();
            let mut v = orig;
            for _ in 0..2 {
                for q in &cols {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm0 == 0.0 || norm <= RANK_TOL * norm0 || cols.len() == l {
                dropped += 1;
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
        if cols.is_empty() {
            return Err(SoirError::RankDeficient(
                "basis matrix has rank zero".into(),
            ));
        }
        let r = cols.len();
        let q = DMatrix::from_fn(l, r, |i, j| cols[j][i]);
        Ok(Self { q, dropped })
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// Number of input columns found linearly dependent on earlier ones.
    pub fn dropped_columns(&self) -> usize {
        self.dropped
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let x = nalgebra::DVector::from_column_slice(v);
        let c = self.q.tr_mul(&x);
        (&self.q * c).iter().copied().collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonal projection of `beta` onto the span of `basis_matrix` and the
/// unexplained energy fraction `‖β − Pβ‖² / ‖β‖²`.
pub fn project_onto_span(beta: &Image2D, basis_matrix: &DMatrix<f64>) -> Result<(Image2D, f64)> {
    if basis_matrix.nrows() != beta.len() {
        return Err(SoirError::DimensionMismatch(format!(
            "basis has {} rows, image has {} pixels",
            basis_matrix.nrows(),
            beta.len()
        )));
    }
    let span = OrthonormalSpan::new(basis_matrix)?;
    project_with(beta, &span)
}

/// Same as [`project_onto_span`] with a prebuilt span.
pub fn project_with(beta: &Image2D, span: &OrthonormalSpan) -> Result<(Image2D, f64)> {
    let energy = dot(beta.values(), beta.values());
    if energy == 0.0 {
        return Err(SoirError::Degenerate(
            "projection measure undefined for a zero image".into(),
        ));
    }
    let p = span.project(beta.values());
    let resid: f64 = beta
        .values()
        .iter()
        .zip(&p)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let frac = (resid / energy).clamp(0.0, 1.0);
    Ok((beta.with_values(p)?, frac))
}
