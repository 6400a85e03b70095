use nalgebra::{DMatrix, SVD};

use crate::error::{Result, SoirError};

/// Relative singular-value cutoff used to determine numerical rank.
pub const SVD_RANK_TOL: f64 = 1e-10;

/// Leading right singular vectors of a data matrix.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// K×r matrix whose columns are the right singular vectors.
    pub components: DMatrix<f64>,
    /// N×r matrix `M·V = U·S`.
    pub scores: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Numerical rank of the input.
    pub rank: usize,
    /// Set when fewer than the requested number of components exist.
    pub truncated: bool,
}

impl PcaResult {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }
}

/// Flips `v` so its largest-magnitude entry is positive; returns the sign used.
pub(crate) fn sign_normalize(v: &mut [f64]) -> f64 {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    sign
}

/// Leading `k0` principal directions of `m` (uncentered).
pub fn pca_svd(m: &DMatrix<f64>, k0: usize) -> Result<PcaResult> {
    let (n, k) = m.shape();
    if n == 0 || k == 0 {
        return Err(SoirError::InvalidInput("empty matrix".into()));
    }
    if k0 == 0 || k0 > n.min(k) {
        return Err(SoirError::InvalidInput(format!(
            "requested {k0} components from a {n}x{k} matrix"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SoirError::InvalidInput("non-finite matrix entries".into()));
    }
    // Work with the tall orientation; the right vectors come from whichever
    // factor corresponds to the columns of `m`.
    let wide = k > n;
    let svd = if wide {
        SVD::new(m.transpose(), true, true)
    } else {
        SVD::new(m.clone(), false, true)
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > SVD_RANK_TOL * s_max.max(f64::MIN_POSITIVE))
        .count();
    let r = k0.min(rank);
    let truncated = r < k0;
    let mut components = DMatrix::zeros(k, r);
    let mut singular_values = Vec::with_capacity(r);
    for (c, &i) in order.iter().take(r).enumerate() {
        let mut v: Vec<f64> = if wide {
            svd.u.as_ref().unwrap().column(i).iter().copied().collect()
        } else {
            svd.v_t.as_ref().unwrap().row(i).iter().copied().collect()
        };
        sign_normalize(&mut v);
        components.column_mut(c).copy_from_slice(&v);
        singular_values.push(svd.singular_values[i]);
    }
    let scores = m * &components;
    Ok(PcaResult {
        components,
        scores,
        singular_values,
        rank,
        truncated,
    })
}
