//! Smooth eigenimages by regularized rank-one tensor decomposition.
//!
//! The demeaned N×L data are treated as an N×nx×ny tensor. Each component
//! is a separable image `v ⊗ w` found by alternating penalized regressions
//! on the three modes, where the spatial modes carry second-difference
//! penalties `S = I + αΩ` with `α` chosen by GCV during the first updates. After each
//! component the data are deflated `X ← X − θe'` with `e` the unit-norm
//! component and `θ = Xe`. The final components are orthonormalized in
//! extraction order.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use super::log_spaced;
use crate::basis::difference_matrix;
use crate::error::{Result, SoirError};
use crate::image::Image2D;

const SELECTION_WARMUP: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenimageOptions {
    /// Bounds of the GCV grid for the spatial smoothing parameters.
    pub lambda_bounds: (f64, f64),
    pub grid_size: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for EigenimageOptions {
    fn default() -> Self {
        Self {
            lambda_bounds: (1e-4, 1e2),
            grid_size: 25,
            max_iterations: 500,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenimageSet {
    pub components: Vec<Image2D>,
    /// N×K matrix `X·E` on the original (undeflated) data.
    pub scores: DMatrix<f64>,
    /// `‖θ_k‖` from each deflation step, descending.
    pub singular_values: Vec<f64>,
    /// Selected `(α_v, α_w)` per component.
    pub smoothing: Vec<(f64, f64)>,
    pub iterations: Vec<usize>,
    /// Set when the data were exhausted before `K` components.
    pub truncated: bool,
}

impl EigenimageSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// L×K matrix with the components as columns.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let l = self.components.first().map_or(0, |c| c.len());
        DMatrix::from_fn(l, self.components.len(), |i, k| {
            self.components[k].values()[i]
        })
    }
}

/// Second-difference smoother along one mode, diagonalized once.
struct ModeSmoother {
    vectors: DMatrix<f64>,
    omega: Vec<f64>,
    penalty: DMatrix<f64>,
    alphas: Vec<f64>,
}

impl ModeSmoother {
    fn new(n: usize, alphas: Vec<f64>) -> Self {
        let penalty = if n >= 3 {
            let d = difference_matrix(n, 2);
            d.transpose() * d
        } else {
            DMatrix::zeros(n, n)
        };
        let eig = SymmetricEigen::new(penalty.clone());
        Self {
            vectors: eig.eigenvectors,
            omega: eig.eigenvalues.iter().map(|&e| e.max(0.0)).collect(),
            penalty,
            alphas,
        }
    }

    /// GCV choice of `α` for smoothing `z`; ties go to the larger value.
    fn select(&self, z: &DVector<f64>) -> f64 {
        let n = z.len() as f64;
        let zh = self.vectors.tr_mul(z);
        let mut best = (self.alphas[0], f64::INFINITY);
        for &a in &self.alphas {
            let mut num = 0.0;
            let mut tr = 0.0;
            for (w, c) in self.omega.iter().zip(zh.iter()) {
                let s = 1.0 / (1.0 + a * w);
                num += ((1.0 - s) * c).powi(2);
                tr += s;
            }
            let denom = (1.0 - tr / n).powi(2);
            let gcv = if denom > 0.0 {
                (num / n) / denom
            } else {
                f64::INFINITY
            };
            if gcv <= best.1 {
                best = (a, gcv);
            }
        }
        best.0
    }

    /// `S(α)⁻¹ z`.
    fn smooth(&self, z: &DVector<f64>, a: f64) -> DVector<f64> {
        let mut zh = self.vectors.tr_mul(z);
        for (c, w) in zh.iter_mut().zip(&self.omega) {
            *c /= 1.0 + a * w;
        }
        &self.vectors * zh
    }

    /// `v'S(α)v`.
    fn norm_sq(&self, v: &DVector<f64>, a: f64) -> f64 {
        v.norm_squared() + a * v.dot(&(&self.penalty * v))
    }
}

fn outer_image(v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let (nx, ny) = (v.len(), w.len());
    DVector::from_fn(nx * ny, |i, _| v[i % nx] * w[i / nx])
}

/// Contract an image-shaped vector `a` along y with `w` (result over x) or
/// along x with `v` (result over y).
fn contract_y(a: &DVector<f64>, w: &DVector<f64>, nx: usize) -> DVector<f64> {
    let mut out = DVector::zeros(nx);
    for (y, &wy) in w.iter().enumerate() {
        for x in 0..nx {
            out[x] += a[y * nx + x] * wy;
        }
    }
    out
}

fn contract_x(a: &DVector<f64>, v: &DVector<f64>, nx: usize, ny: usize) -> DVector<f64> {
    DVector::from_fn(ny, |y, _| (0..nx).map(|x| a[y * nx + x] * v[x]).sum())
}

fn unit_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    let (a, b) = (new.norm(), old.norm());
    if a == 0.0 || b == 0.0 {
        return if a == b { 0.0 } else { 1.0 };
    }
    let cos = (new.dot(old) / (a * b)).abs().min(1.0);
    (2.0 * (1.0 - cos)).max(0.0).sqrt()
}

/// Leading right singular vector of `x` by power iteration on `X'X`.
fn leading_direction(x: &DMatrix<f64>) -> Option<DVector<f64>> {
    let (imax, _) =
        x.row_iter()
            .map(|r| r.norm_squared())
            .enumerate()
            .fold(
                (0, -1.0),
                |best, (i, v)| if v > best.1 { (i, v) } else { best },
            );
    let mut e = x.row(imax).transpose();
    let nrm = e.norm();
    if nrm == 0.0 {
        return None;
    }
    e /= nrm;
    for _ in 0..200 {
        let next = x.tr_mul(&(x * &e));
        let nrm = next.norm();
        if nrm == 0.0 {
            return None;
        }
        let next = next / nrm;
        let change = unit_change(&next, &e);
        e = next;
        if change < 1e-8 {
            break;
        }
    }
    Some(e)
}

struct Component {
    image: DVector<f64>,
    theta_norm: f64,
    alphas: (f64, f64),
    iterations: usize,
}

fn extract_one(
    x: &DMatrix<f64>,
    nx: usize,
    ny: usize,
    sv: &ModeSmoother,
    sw: &ModeSmoother,
    opts: &EigenimageOptions,
) -> Result<Option<Component>> {
    let Some(e0) = leading_direction(x) else {
        return Ok(None);
    };
    let grid = DMatrix::from_fn(nx, ny, |i, j| e0[j * nx + i]);
    let svd = SVD::new(grid, true, true);
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, -1.0), |b, (i, &s)| if s > b.1 { (i, s) } else { b })
        .0;
    let mut v: DVector<f64> = svd.u.as_ref().unwrap().column(top).into_owned();
    let mut w: DVector<f64> = svd.v_t.as_ref().unwrap().row(top).transpose();
    let mut u = x * outer_image(&v, &w);
    let (mut av, mut aw) = (opts.lambda_bounds.0, opts.lambda_bounds.0);
    let mut energy_old = f64::NAN;
    // GCV choices can cycle between neighbouring grid values, so they are
    // frozen after a warm-up and the alternation finishes at fixed α.
    let mut selecting = true;
    for it in 1..=opts.max_iterations {
        let (u_old, v_old, w_old) = (u.clone(), v.clone(), w.clone());
        u = (x * outer_image(&v, &w)) / (sv.norm_sq(&v, av) * sw.norm_sq(&w, aw));
        let uu = u.norm_squared();
        if uu == 0.0 {
            return Ok(None);
        }
        let a = x.tr_mul(&u);
        let zv = contract_y(&a, &w, nx);
        if selecting {
            av = sv.select(&zv);
        }
        v = sv.smooth(&zv, av) / (uu * sw.norm_sq(&w, aw));
        let zw = contract_x(&a, &v, nx, ny);
        if selecting {
            aw = sw.select(&zw);
        }
        w = sw.smooth(&zw, aw) / (uu * sv.norm_sq(&v, av));
        let change = unit_change(&u, &u_old)
            .max(unit_change(&v, &v_old))
            .max(unit_change(&w, &w_old));
        if !change.is_finite() {
            return Err(SoirError::Degenerate(
                "tensor decomposition produced non-finite values".into(),
            ));
        }
        let mut image = outer_image(&v, &w);
        let nrm = image.norm();
        if nrm == 0.0 {
            return Ok(None);
        }
        image /= nrm;
        let energy = (x * &image).norm_squared();
        let flat = (energy - energy_old).abs() <= opts.tolerance.powi(2) * energy;
        energy_old = energy;
        if it >= SELECTION_WARMUP || change < 1e-3 {
            selecting = false;
        }
        if change < opts.tolerance || flat {
            return Ok(Some(Component {
                image,
                theta_norm: energy.sqrt(),
                alphas: (av, aw),
                iterations: it,
            }));
        }
    }
    let mut last = outer_image(&v, &w);
    let nrm = last.norm();
    if nrm > 0.0 {
        last /= nrm;
    }
    Err(SoirError::NotConverged {
        iterations: opts.max_iterations,
        message: "rank-one alternation".into(),
        last_iterate: Some(last.iter().copied().collect()),
    })
}

/// `K` smooth orthonormal eigenimages of the demeaned N×L matrix `x`.
pub fn rank_one_eigenimages(
    x: &DMatrix<f64>,
    nx: usize,
    ny: usize,
    k: usize,
    opts: &EigenimageOptions,
) -> Result<EigenimageSet> {
    let (n, l) = x.shape();
    if l != nx * ny {
        return Err(SoirError::DimensionMismatch(format!(
            "X has {l} columns, grid is {nx}x{ny}"
        )));
    }
    if k == 0 || k > n.min(nx).min(ny) {
        return Err(SoirError::InvalidInput(format!(
            "K = {k} must be in 1..=min(N, nx, ny) = {}",
            n.min(nx).min(ny)
        )));
    }
    let (lo, hi) = opts.lambda_bounds;
    if !(lo > 0.0 && hi >= lo) {
        return Err(SoirError::InvalidInput(
            "smoothing bounds must satisfy 0 < lo <= hi".into(),
        ));
    }
    let scale = x.amax();
    if scale == 0.0 {
        return Err(SoirError::Degenerate(
            "image matrix is identically zero".into(),
        ));
    }
    for j in 0..l {
        let m = x.column(j).mean();
        if m.abs() > 1e-8 * scale {
            return Err(SoirError::Precondition(format!(
                "image matrix is not demeaned (pixel {j} mean {m:e})"
            )));
        }
    }
    let alphas = if hi > lo {
        log_spaced(lo, hi, opts.grid_size.max(1))
    } else {
        vec![lo]
    };
    let sv = ModeSmoother::new(nx, alphas.clone());
    let sw = ModeSmoother::new(ny, alphas);

    let mut resid = x.clone();
    let mut found: Vec<Component> = Vec::with_capacity(k);
    for _ in 0..k {
        if resid.amax() <= 1e-12 * scale {
            break;
        }
        let Some(c) = extract_one(&resid, nx, ny, &sv, &sw, opts)? else {
            break;
        };
        let theta = &resid * &c.image;
        resid -= &theta * c.image.transpose();
        if c.theta_norm <= 1e-12 * scale {
            break;
        }
        found.push(c);
    }
    if found.is_empty() {
        return Err(SoirError::Degenerate(
            "no eigenimage could be extracted".into(),
        ));
    }
    let truncated = found.len() < k;
    found.sort_by(|a, b| b.theta_norm.total_cmp(&a.theta_norm));

    // Gram-Schmidt in order keeps the span of every leading prefix.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(found.len());
    let mut kept = Vec::with_capacity(found.len());
    for c in found {
        let mut e = c.image.clone();
        for _ in 0..2 {
            for q in &basis {
                let p = q.dot(&e);
                e.axpy(-p, q, 1.0);
            }
        }
        let nrm = e.norm();
        if nrm < 1e-8 {
            continue;
        }
        basis.push(e / nrm);
        kept.push(c);
    }
    let truncated = truncated || kept.len() < k;
    let e = DMatrix::from_columns(&basis);
    let scores = x * &e;
    let components = basis
        .iter()
        .map(|b| Image2D::new(nx, ny, b.iter().copied().collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(EigenimageSet {
        components,
        scores,
        singular_values: kept.iter().map(|c| c.theta_norm).collect(),
        smoothing: kept.iter().map(|c| c.alphas).collect(),
        iterations: kept.iter().map(|c| c.iterations).collect(),
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::pearson;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_profile(n: usize, freq: f64, phase: f64) -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            (freq * std::f64::consts::PI * (i as f64 + 0.5) / n as f64 + phase).sin()
        })
    }

    fn centered(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let m = u.mean();
        u.add_scalar_mut(-m);
        u
    }

    #[test]
    fn planted_rank_one_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (nx, ny, n) = (12, 10, 30);
        let v = smooth_profile(nx, 1.0, 0.2);
        let w = smooth_profile(ny, 2.0, 0.0);
        let img = outer_image(&v, &w);
        let u = centered(n, &mut rng);
        let x = &u * img.transpose() * 3.0;
        let set = rank_one_eigenimages(&x, nx, ny, 1, &EigenimageOptions::default()).unwrap();
        let r = pearson(set.components[0].values(), img.as_slice()).unwrap();
        assert!(r.abs() > 0.999, "correlation {r}");
        let resid = &x - &set.scores * set.basis_matrix().transpose();
        assert!(resid.norm() / x.norm() < 1e-3);
    }

    #[test]
    fn two_equal_components_split_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (nx, ny, n) = (16, 16, 60);
        let e1 = outer_image(&smooth_profile(nx, 1.0, 0.0), &smooth_profile(ny, 1.0, 0.0));
        let e2 = outer_image(&smooth_profile(nx, 2.0, 0.0), &smooth_profile(ny, 1.0, 0.0));
        let e1 = &e1 / e1.norm();
        let e2 = &e2 / e2.norm();
        assert!(e1.dot(&e2).abs() < 1e-10);
        // orthogonal equal-norm score vectors
        let a = centered(n, &mut rng);
        let mut b = centered(n, &mut rng);
        b.axpy(-a.dot(&b) / a.norm_squared(), &a, 1.0);
        let a = &a / a.norm();
        let b = &b / b.norm();
        let x = &a * e1.transpose() + &b * e2.transpose();
        let set = rank_one_eigenimages(&x, nx, ny, 1, &EigenimageOptions::default()).unwrap();
        let e = set.basis_matrix();
        let resid = &x - &x * &e * e.transpose();
        let ratio = resid.norm_squared() / x.norm_squared();
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn weak_smoothing_agrees_with_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (nx, ny, n) = (10, 8, 40);
        let e1 = outer_image(&smooth_profile(nx, 1.0, 0.3), &smooth_profile(ny, 1.5, 0.1));
        let e2 = outer_image(&smooth_profile(nx, 3.0, 0.0), &smooth_profile(ny, 2.0, 0.5));
        let mut x =
            centered(n, &mut rng) * e1.transpose() * 4.0 + centered(n, &mut rng) * e2.transpose();
        for j in 0..nx * ny {
            let mut col = centered(n, &mut rng) * 0.01;
            col += x.column(j);
            x.set_column(j, &col);
        }
        let opts = EigenimageOptions {
            lambda_bounds: (1e-4, 1e-4),
            ..Default::default()
        };
        let set = rank_one_eigenimages(&x, nx, ny, 1, &opts).unwrap();
        let svd = crate::kernels::pca_svd(&x, 1).unwrap();
        let lead: Vec<f64> = svd.components.column(0).iter().copied().collect();
        let r = pearson(set.components[0].values(), &lead).unwrap();
        assert!(r.abs() > 0.999, "correlation {r}");
    }

    #[test]
    fn components_are_orthonormal_and_scores_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (nx, ny, n) = (8, 8, 30);
        let mut x = DMatrix::from_fn(n, nx * ny, |_, _| rng.random_range(-1.0..1.0));
        for j in 0..nx * ny {
            let m = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-m);
        }
        let set = rank_one_eigenimages(&x, nx, ny, 6, &EigenimageOptions::default()).unwrap();
        let e = set.basis_matrix();
        let g = e.tr_mul(&e);
        assert!((g - DMatrix::identity(e.ncols(), e.ncols())).amax() < 1e-8);
        assert!((&set.scores - &x * &e).amax() < 1e-12);
        assert!(set.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::from_element(5, 16, 1.0);
        let opts = EigenimageOptions::default();
        assert!(matches!(
            rank_one_eigenimages(&x, 4, 4, 1, &opts),
            Err(SoirError::Precondition(_))
        ));
        assert!(rank_one_eigenimages(&DMatrix::zeros(5, 16), 4, 4, 1, &opts).is_err());
        assert!(rank_one_eigenimages(&DMatrix::zeros(5, 16), 4, 4, 5, &opts).is_err());
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut x = DMatrix::from_fn(20, 36, |_, _| rng.random_range(-1.0..1.0));
        for j in 0..36 {
            let m = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-m);
        }
        let opts = EigenimageOptions {
            max_iterations: 1,
            tolerance: 0.0,
            ..Default::default()
        };
        match rank_one_eigenimages(&x, 6, 6, 1, &opts) {
            Err(SoirError::NotConverged {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last_iterate.unwrap().len(), 36);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
