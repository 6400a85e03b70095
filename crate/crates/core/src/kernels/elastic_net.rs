use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::log_spaced;
use crate::error::{Result, SoirError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetOptions {
    /// A sweep has converged when the largest `N⁻¹‖z_j‖²·Δb_j²` is below
    /// `tolerance · ‖y‖²/N`.
    pub tolerance: f64,
    /// Sweep budget per path point.
    pub max_sweeps: usize,
    /// Stop the path once the explained fraction saturates (≥ 0.999) or
    /// improves by less than a relative 1e-5; later points repeat the last
    /// solution.
    pub early_stop: bool,
    pub path_length: usize,
    pub path_ratio: f64,
}

impl Default for ElasticNetOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-14,
            max_sweeps: 100_000,
            early_stop: true,
            path_length: 100,
            path_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElasticNetPath {
    pub lambdas: Vec<f64>,
    pub coefficients: Vec<DVector<f64>>,
    /// `1 − RSS/‖y‖²` at each path point.
    pub dev_ratio: Vec<f64>,
    /// Number of path points actually solved (the rest copy the last one).
    pub solved: usize,
    pub sweeps: usize,
}

/// Smallest `λ` giving the all-zero solution.
pub fn lambda_max(z: &DMatrix<f64>, y: &DVector<f64>, eta: f64) -> f64 {
    let n = z.nrows() as f64;
    let zy = z.tr_mul(y);
    zy.amax() / (n * eta.max(1e-3))
}

/// Descending log-spaced path from `lmax` to `ratio·lmax`.
pub fn lambda_path(lmax: f64, length: usize, ratio: f64) -> Vec<f64> {
    let mut p = log_spaced(lmax * ratio, lmax, length);
    p.reverse();
    p
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

struct Solver<'a> {
    z: &'a DMatrix<f64>,
    col_sq: Vec<f64>,
    n: f64,
}

impl Solver<'_> {
    /// One coordinate update; returns the weighted squared change.
    fn update(
        &self,
        j: usize,
        b: &mut DVector<f64>,
        r: &mut DVector<f64>,
        l1: f64,
        l2: f64,
    ) -> f64 {
        let denom = self.col_sq[j] + l2;
        if denom <= 0.0 {
            return 0.0;
        }
        let zj = self.z.column(j);
        let old = b[j];
        let rho = zj.dot(r) / self.n + self.col_sq[j] * old;
        let new = soft_threshold(rho, l1) / denom;
        let delta = new - old;
        if delta != 0.0 {
            r.axpy(-delta, &zj, 1.0);
            b[j] = new;
        }
        self.col_sq[j] * delta * delta
    }

    fn solve(
        &self,
        b: &mut DVector<f64>,
        r: &mut DVector<f64>,
        l1: f64,
        l2: f64,
        threshold: f64,
        opts: &ElasticNetOptions,
        sweeps: &mut usize,
    ) -> Result<()> {
        let k = b.len();
        let budget = *sweeps + opts.max_sweeps;
        loop {
            let mut max_change = 0.0f64;
            for j in 0..k {
                max_change = max_change.max(self.update(j, b, r, l1, l2));
            }
            *sweeps += 1;
            if max_change < threshold {
                return Ok(());
            }
            let active: Vec<usize> = (0..k).filter(|&j| b[j] != 0.0).collect();
            loop {
                let mut change = 0.0f64;
                for &j in &active {
                    change = change.max(self.update(j, b, r, l1, l2));
                }
                *sweeps += 1;
                if *sweeps > budget {
                    return Err(SoirError::NotConverged {
                        iterations: *sweeps,
                        message: "elastic-net coordinate descent".into(),
                        last_iterate: Some(b.iter().copied().collect()),
                    });
                }
                if change < threshold {
                    break;
                }
            }
        }
    }
}

/// Naive elastic net `½N⁻¹‖y − Zb‖² + λ(η‖b‖₁ + (1−η)/2‖b‖²)` along a path
/// with warm starts. No intercept and no column scaling.
pub fn elastic_net(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    eta: f64,
    lambda_path_in: Option<&[f64]>,
    opts: &ElasticNetOptions,
) -> Result<ElasticNetPath> {
    let (n, k) = z.shape();
    if y.len() != n || n == 0 {
        return Err(SoirError::DimensionMismatch(format!(
            "{} responses for {n} rows",
            y.len()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(SoirError::InvalidInput(format!(
            "mixing parameter {eta} outside [0, 1]"
        )));
    }
    let lambdas: Vec<f64> = match lambda_path_in {
        Some(p) => p.to_vec(),
        None => {
            let lmax = lambda_max(z, y, eta);
            if lmax == 0.0 {
                vec![0.0]
            } else {
                lambda_path(lmax, opts.path_length, opts.path_ratio)
            }
        }
    };
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(SoirError::InvalidInput(
            "lambda path must be non-empty and non-negative".into(),
        ));
    }
    if eta == 0.0 && lambdas.contains(&0.0) {
        let svd = z.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * smax)
            .count();
        if rank < k {
            return Err(SoirError::RankDeficient(
                "unpenalized least squares on a rank-deficient design".into(),
            ));
        }
    }
    let nf = n as f64;
    let solver = Solver {
        z,
        col_sq: (0..k).map(|j| z.column(j).norm_squared() / nf).collect(),
        n: nf,
    };
    let yy = y.norm_squared();
    let threshold = opts.tolerance * (yy / nf).max(f64::MIN_POSITIVE);
    let mut b = DVector::zeros(k);
    let mut r = y.clone();
    let mut sweeps = 0;
    let mut coefficients = Vec::with_capacity(lambdas.len());
    let mut dev_ratio = Vec::with_capacity(lambdas.len());
    let mut stopped = false;
    let mut solved = 0;
    for &lambda in &lambdas {
        if stopped {
            coefficients.push(b.clone());
            dev_ratio.push(*dev_ratio.last().unwrap());
            continue;
        }
        solver.solve(
            &mut b,
            &mut r,
            lambda * eta,
            lambda * (1.0 - eta),
            threshold,
            opts,
            &mut sweeps,
        )?;
        let dev = if yy > 0.0 {
            1.0 - r.norm_squared() / yy
        } else {
            0.0
        };
        let prev = dev_ratio.last().copied();
        coefficients.push(b.clone());
        dev_ratio.push(dev);
        solved += 1;
        if opts.early_stop && solved >= 5 {
            let stalled = prev.is_some_and(|p| dev - p < 1e-5 * dev);
            stopped = dev >= 0.999 || stalled;
        }
    }
    Ok(ElasticNetPath {
        lambdas,
        coefficients,
        dev_ratio,
        solved,
        sweeps,
    })
}
