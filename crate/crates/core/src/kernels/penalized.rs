use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoirError};

/// Criterion used to pick the smoothing parameter from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothingSelector {
    Gcv,
    Reml,
}

impl Default for SmoothingSelector {
    fn default() -> Self {
        SmoothingSelector::Gcv
    }
}

/// `min ‖y − Zb‖² + λ b'Pb` over a grid of `λ`.
#[derive(Debug, Clone)]
pub struct PenalizedLSProblem {
    pub response: DVector<f64>,
    pub design: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub lambda_grid: Vec<f64>,
    pub selector: SmoothingSelector,
}

#[derive(Debug, Clone)]
pub struct PenalizedLSFit {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    /// `tr(Z (Z'Z + λP)⁻¹ Z')`.
    pub edf: f64,
    pub rss: f64,
    /// Criterion value at the selected `λ` (GCV score or REML objective).
    pub criterion: f64,
    /// `(Z'Z + λP)⁻¹`.
    pub inverse: DMatrix<f64>,
    /// Grid points at which the system was numerically singular.
    pub skipped: usize,
}

impl PenalizedLSFit {
    /// `σ̂² = RSS / (N − edf)`.
    pub fn residual_variance(&self, n: usize) -> f64 {
        let dof = n as f64 - self.edf;
        if dof > 0.0 {
            self.rss / dof
        } else {
            f64::NAN
        }
    }
}

/// `n` log-spaced values from `lo` to `hi`, ascending.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// 25 log-spaced values over `s·[1e-7, 1e5]` with `s = tr(Z'Z)/tr(P)`, so
/// the grid is invariant to the scale of the design.
pub fn default_lambda_grid(design: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Vec<f64> {
    let tr_g: f64 = design.iter().map(|v| v * v).sum();
    let tr_p = penalty.trace();
    let s = if tr_g > 0.0 && tr_p > 0.0 {
        tr_g / tr_p
    } else {
        1.0
    };
    log_spaced(1e-7 * s, 1e5 * s, 25)
}

impl PenalizedLSProblem {
    pub fn new(
        response: DVector<f64>,
        design: DMatrix<f64>,
        penalty: DMatrix<f64>,
        lambda_grid: Vec<f64>,
        selector: SmoothingSelector,
    ) -> Result<Self> {
        let (n, k) = design.shape();
        if n < 2 {
            return Err(SoirError::InvalidInput(
                "need at least two observations".into(),
            ));
        }
        if response.len() != n {
            return Err(SoirError::DimensionMismatch(format!(
                "{} responses for a design with {n} rows",
                response.len()
            )));
        }
        if penalty.shape() != (k, k) {
            return Err(SoirError::DimensionMismatch(format!(
                "penalty is {}x{}, design has {k} columns",
                penalty.nrows(),
                penalty.ncols()
            )));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(SoirError::InvalidInput(
                "non-finite design or response".into(),
            ));
        }
        let scale = penalty.amax().max(1.0);
        if (&penalty - penalty.transpose()).amax() > 1e-10 * scale {
            return Err(SoirError::InvalidInput(
                "penalty matrix is not symmetric".into(),
            ));
        }
        if lambda_grid.is_empty() {
            return Err(SoirError::InvalidInput(
                "empty smoothing-parameter grid".into(),
            ));
        }
        if lambda_grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite())
            || lambda_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SoirError::InvalidInput(
                "smoothing grid must be finite, non-negative and strictly ascending".into(),
            ));
        }
        Ok(Self {
            response,
            design,
            penalty,
            lambda_grid,
            selector,
        })
    }
}

struct Precomputed {
    gram: DMatrix<f64>,
    zty: DVector<f64>,
    zt: DMatrix<f64>,
    rank_p: usize,
}

fn precompute(p: &PenalizedLSProblem) -> Result<Precomputed> {
    let eig = SymmetricEigen::new(p.penalty.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    if eig.eigenvalues.iter().any(|&e| e < -1e-9 * top.max(1e-300)) {
        return Err(SoirError::InvalidInput(
            "penalty matrix is not positive semidefinite".into(),
        ));
    }
    let rank_p = eig.eigenvalues.iter().filter(|&&e| e > 1e-10 * top).count();
    Ok(Precomputed {
        gram: p.design.tr_mul(&p.design),
        zty: p.design.tr_mul(&p.response),
        zt: p.design.transpose(),
        rank_p,
    })
}

struct Candidate {
    coefficients: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    rss: f64,
    edf: f64,
    quad: f64,
}

fn solve_at(p: &PenalizedLSProblem, pre: &Precomputed, lambda: f64) -> Option<Candidate> {
    let a = &pre.gram + &p.penalty * lambda;
    let chol = Cholesky::new(a)?;
    let l = chol.l();
    let diag_min = l.diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d));
    let diag_max = l.diagonal().iter().fold(0.0f64, |m, &d| m.max(d));
    if !(diag_min > 1e-8 * diag_max) {
        return None;
    }
    let b = chol.solve(&pre.zty);
    let resid = &p.response - &p.design * &b;
    let rss = resid.norm_squared();
    // tr(H) = ‖L⁻¹ Z'‖²_F
    let half = l.solve_lower_triangular(&pre.zt)?;
    let edf = half.norm_squared();
    let quad = b.dot(&(&p.penalty * &b));
    Some(Candidate {
        coefficients: b,
        chol,
        rss,
        edf,
        quad,
    })
}

fn criterion(p: &PenalizedLSProblem, pre: &Precomputed, c: &Candidate, lambda: f64) -> f64 {
    let n = p.design.nrows() as f64;
    match p.selector {
        SmoothingSelector::Gcv => {
            let d = n - c.edf;
            if d <= 0.0 {
                f64::INFINITY
            } else {
                n * c.rss / (d * d)
            }
        }
        SmoothingSelector::Reml => {
            let k = p.design.ncols();
            let m_p = (k - pre.rank_p) as f64;
            let log_det: f64 = c.chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            let pen_rss = c.rss + lambda * c.quad;
            if pen_rss <= 0.0 || n - m_p <= 0.0 {
                return f64::INFINITY;
            }
            let log_lambda = if pre.rank_p > 0 { lambda.ln() } else { 0.0 };
            (n - m_p) * pen_rss.ln() + log_det - pre.rank_p as f64 * log_lambda
        }
    }
}

fn finish(c: Candidate, lambda: f64, crit: f64, skipped: usize) -> PenalizedLSFit {
    let k = c.coefficients.len();
    let inverse = c.chol.solve(&DMatrix::identity(k, k));
    PenalizedLSFit {
        coefficients: c.coefficients,
        lambda,
        edf: c.edf,
        rss: c.rss,
        criterion: crit,
        inverse,
        skipped,
    }
}

/// Grid search over `λ`; ties go to the larger value.
pub fn solve_penalized_ls(problem: &PenalizedLSProblem) -> Result<PenalizedLSFit> {
    let pre = precompute(problem)?;
    let mut best: Option<(Candidate, f64, f64)> = None;
    let mut skipped = 0;
    for &lambda in &problem.lambda_grid {
        if problem.selector == SmoothingSelector::Reml && lambda == 0.0 && pre.rank_p > 0 {
            skipped += 1;
            continue;
        }
        let Some(c) = solve_at(problem, &pre, lambda) else {
            skipped += 1;
            continue;
        };
        let crit = criterion(problem, &pre, &c, lambda);
        if !crit.is_finite() {
            skipped += 1;
            continue;
        }
        if best.as_ref().is_none_or(|(_, _, b)| crit <= *b) {
            best = Some((c, lambda, crit));
        }
    }
    match best {
        Some((c, lambda, crit)) => Ok(finish(c, lambda, crit, skipped)),
        None => Err(SoirError::RankDeficient(
            "penalized system is singular at every grid value".into(),
        )),
    }
}

/// Solve at one fixed `λ` (criterion reported as NaN).
pub fn solve_penalized_ls_at(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
) -> Result<PenalizedLSFit> {
    let problem = PenalizedLSProblem::new(
        response.clone(),
        design.clone(),
        penalty.clone(),
        vec![lambda],
        SmoothingSelector::Gcv,
    )?;
    let pre = Precomputed {
        gram: design.tr_mul(design),
        zty: design.tr_mul(response),
        zt: design.transpose(),
        rank_p: 0,
    };
    let c = solve_at(&problem, &pre, lambda).ok_or_else(|| {
        SoirError::RankDeficient(format!("penalized system is singular at lambda = {lambda}"))
    })?;
    Ok(finish(c, lambda, f64::NAN, 0))
}

/// Block-diagonal penalty `diag(0_p, P)` leaving the first `p` columns free.
pub fn pad_penalty(p: usize, penalty: &DMatrix<f64>) -> DMatrix<f64> {
    let k = penalty.nrows();
    let mut out = DMatrix::zeros(p + k, p + k);
    out.view_mut((p, p), (k, k)).copy_from(penalty);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn second_diff_penalty(k: usize) -> DMatrix<f64> {
        let d = crate::basis::difference_matrix(k, 2);
        d.transpose() * d
    }

    #[test]
    fn tiny_lambda_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random(&mut rng, 40, 6);
        let y = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let pen = DMatrix::identity(6, 6);
        let prob = PenalizedLSProblem::new(
            y.clone(),
            z.clone(),
            pen,
            vec![1e-14],
            SmoothingSelector::Gcv,
        )
        .unwrap();
        let fit = solve_penalized_ls(&prob).unwrap();
        let ols = (z.tr_mul(&z)).cholesky().unwrap().solve(&z.tr_mul(&y));
        assert!((fit.coefficients - ols).amax() < 1e-8);
    }

    #[test]
    fn huge_lambda_shrinks_to_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random(&mut rng, 50, 5);
        let y = DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0));
        let fit = solve_penalized_ls_at(&z, &y, &DMatrix::identity(5, 5), 1e12).unwrap();
        assert!(fit.coefficients.amax() < 1e-9);
        // second-difference penalty: limit is the OLS fit within linear sequences
        let pen = second_diff_penalty(5);
        let fit = solve_penalized_ls_at(&z, &y, &pen, 1e12).unwrap();
        let basis = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let zb = &z * &basis;
        let c = zb.tr_mul(&zb).cholesky().unwrap().solve(&zb.tr_mul(&y));
        assert!((fit.coefficients - basis * c).amax() < 1e-6);
    }

    #[test]
    fn null_space_truth_recovered_for_every_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random(&mut rng, 30, 6);
        let b_star = DVector::from_fn(6, |i, _| 0.5 - 0.3 * i as f64);
        let y = &z * &b_star;
        let pen = second_diff_penalty(6);
        for lambda in [1e-6, 1e-2, 1.0, 1e2, 1e5] {
            let fit = solve_penalized_ls_at(&z, &y, &pen, lambda).unwrap();
            assert!(
                (&fit.coefficients - &b_star).amax() < 1e-8,
                "lambda {lambda}"
            );
        }
        for sel in [SmoothingSelector::Gcv, SmoothingSelector::Reml] {
            let prob = PenalizedLSProblem::new(
                y.clone(),
                z.clone(),
                pen.clone(),
                log_spaced(1e-4, 1e4, 9),
                sel,
            )
            .unwrap();
            let fit = solve_penalized_ls(&prob).unwrap();
            assert!((&fit.coefficients - &b_star).amax() < 1e-8);
        }
    }

    #[test]
    fn stationarity_and_edf() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random(&mut rng, 25, 8);
        let y = DVector::from_fn(25, |_, _| rng.random_range(-1.0..1.0));
        let pen = second_diff_penalty(8);
        let prob = PenalizedLSProblem::new(
            y.clone(),
            z.clone(),
            pen.clone(),
            default_lambda_grid(&z, &pen),
            SmoothingSelector::Reml,
        )
        .unwrap();
        let fit = solve_penalized_ls(&prob).unwrap();
        let zty = z.tr_mul(&y);
        let lhs = (z.tr_mul(&z) + &pen * fit.lambda) * &fit.coefficients;
        assert!((lhs - &zty).norm() < 1e-8 * zty.norm());
        // edf via the explicit hat matrix
        let h = &z * &fit.inverse * z.transpose();
        assert!((h.trace() - fit.edf).abs() < 1e-9);
        assert!(fit.edf > 2.0 - 1e-9 && fit.edf < 8.0 + 1e-9);
    }

    #[test]
    fn gcv_picks_grid_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random(&mut rng, 30, 10);
        let y = DVector::from_fn(30, |i, _| {
            (i as f64 / 5.0).sin() + 0.3 * rng.random_range(-1.0..1.0)
        });
        let pen = second_diff_penalty(10);
        let grid = log_spaced(1e-3, 1e3, 13);
        let prob = PenalizedLSProblem::new(
            y.clone(),
            z.clone(),
            pen.clone(),
            grid.clone(),
            SmoothingSelector::Gcv,
        )
        .unwrap();
        let fit = solve_penalized_ls(&prob).unwrap();
        for &l in &grid {
            let f = solve_penalized_ls_at(&z, &y, &pen, l).unwrap();
            let gcv = 30.0 * f.rss / (30.0 - f.edf).powi(2);
            assert!(fit.criterion <= gcv + 1e-12);
        }
    }

    #[test]
    fn singular_everywhere_is_a_rank_error() {
        let z = DMatrix::from_fn(10, 3, |i, j| if j == 2 { 0.0 } else { (i + j) as f64 });
        let y = DVector::from_fn(10, |i, _| i as f64);
        let pen = DMatrix::zeros(3, 3);
        let prob =
            PenalizedLSProblem::new(y, z, pen, vec![1.0, 2.0], SmoothingSelector::Gcv).unwrap();
        assert!(matches!(
            solve_penalized_ls(&prob),
            Err(SoirError::RankDeficient(_))
        ));
    }

    #[test]
    fn rejects_bad_grids() {
        let z = DMatrix::identity(3, 2);
        let y = DVector::zeros(3);
        let pen = DMatrix::identity(2, 2);
        assert!(PenalizedLSProblem::new(
            y.clone(),
            z.clone(),
            pen.clone(),
            vec![],
            SmoothingSelector::Gcv
        )
        .is_err());
        assert!(PenalizedLSProblem::new(
            y.clone(),
            z.clone(),
            pen.clone(),
            vec![2.0, 1.0],
            SmoothingSelector::Gcv
        )
        .is_err());
        assert!(
            PenalizedLSProblem::new(y, z, -pen, vec![1.0], SmoothingSelector::Gcv)
                .and_then(|p| solve_penalized_ls(&p))
                .is_err()
        );
    }
}
