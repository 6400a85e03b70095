use nalgebra::DMatrix;

use crate::error::{Result, SoirError};

pub const CUBIC: usize = 3;

/// Tensor-product B-spline basis evaluated at the pixel centres of an
/// `nx`×`ny` grid, with its difference penalty.
///
/// Column `k = ky * kx_count + kx` holds `B_kx(t_x) · B_ky(t_y)`, matching
/// the row-major pixel order.
#[derive(Debug, Clone)]
pub struct SplineBasis2D {
    pub kx: usize,
    pub ky: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
    /// L×(Kx·Ky) evaluation matrix.
    pub basis: DMatrix<f64>,
    /// `D'D ⊗ I + I ⊗ D'D` in the column order above.
    pub penalty: DMatrix<f64>,
}

impl SplineBasis2D {
    pub fn n_basis(&self) -> usize {
        self.kx * self.ky
    }
}

/// Equally spaced knots on [0, 1] padded by `degree` knots on each side.
pub fn uniform_knots(k: usize, degree: usize) -> Vec<f64> {
    let intervals = (k - degree) as f64;
    (0..=k + degree)
        .map(|j| (j as f64 - degree as f64) / intervals)
        .collect()
}

/// Values of all `k = knots.len() - degree - 1` B-splines at `t` (Cox–de Boor).
pub fn bspline_values(knots: &[f64], degree: usize, t: f64) -> Vec<f64> {
    let n_intervals = knots.len() - 1;
    let mut b: Vec<f64> = (0..n_intervals)
        .map(|j| {
            if knots[j] <= t && t < knots[j + 1] {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for d in 1..=degree {
        let next: Vec<f64> = (0..n_intervals - d)
            .map(|j| {
                let left = knots[j + d] - knots[j];
                let right = knots[j + d + 1] - knots[j + 1];
                let a = if left > 0.0 {
                    (t - knots[j]) / left * b[j]
                } else {
                    0.0
                };
                let c = if right > 0.0 {
                    (knots[j + d + 1] - t) / right * b[j + 1]
                } else {
                    0.0
                };
                a + c
            })
            .collect();
        b = next;
    }
    b
}

/// Marginal basis on `n` pixel centres `(i + 0.5) / n`.
pub fn marginal_basis(n: usize, k: usize, degree: usize) -> (Vec<f64>, DMatrix<f64>) {
    let knots = uniform_knots(k, degree);
    let mut m = DMatrix::zeros(n, k);
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        for (j, v) in bspline_values(&knots, degree, t).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    (knots, m)
}

/// `order`-th difference operator, `(k − order)`×`k`.
pub fn difference_matrix(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

/// Kronecker product `a ⊗ b`.
pub(crate) fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Cubic tensor-product B-spline basis with an additive difference penalty.
pub fn eval_spline_basis(
    nx: usize,
    ny: usize,
    kx: usize,
    ky: usize,
    penalty_order: usize,
) -> Result<SplineBasis2D> {
    let degree = CUBIC;
    let min_k = (penalty_order + 1).max(degree + 1);
    if kx < min_k || ky < min_k {
        return Err(SoirError::InvalidInput(format!(
            "need at least {min_k} basis functions per axis, got {kx}x{ky}"
        )));
    }
    if nx < kx || ny < ky {
        return Err(SoirError::InvalidInput(format!(
            "{nx}x{ny} grid is smaller than the {kx}x{ky} basis"
        )));
    }
    let (knots_x, bx) = marginal_basis(nx, kx, degree);
    let (knots_y, by) = marginal_basis(ny, ky, degree);
    let l = nx * ny;
    let mut basis = DMatrix::zeros(l, kx * ky);
    for y in 0..ny {
        for x in 0..nx {
            let row = y * nx + x;
            for jy in 0..ky {
                let vy = by[(y, jy)];
                if vy == 0.0 {
                    continue;
                }
                for jx in 0..kx {
                    basis[(row, jy * kx + jx)] = bx[(x, jx)] * vy;
                }
            }
        }
    }
    let dx = difference_matrix(kx, penalty_order);
    let dy = difference_matrix(ky, penalty_order);
    let px = dx.transpose() * dx;
    let py = dy.transpose() * dy;
    let penalty = kron(&DMatrix::identity(ky, ky), &px) + kron(&py, &DMatrix::identity(kx, kx));
    Ok(SplineBasis2D {
        kx,
        ky,
        degree,
        penalty_order,
        knots_x,
        knots_y,
        basis,
        penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DVector, SymmetricEigen};
    use rand::{Rng, SeedableRng};

    #[test]
    fn partition_of_unity() {
        let sb = eval_spline_basis(17, 9, 6, 5, 2).unwrap();
        for row in sb.basis.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(sb.basis.shape(), (17 * 9, 30));
    }

    #[test]
    fn penalty_annihilates_constants_and_linear_sequences() {
        let sb = eval_spline_basis(8, 8, 4, 4, 2).unwrap();
        let ones = DVector::from_element(16, 1.0);
        assert!((&sb.penalty * &ones).amax() < 1e-12);
        // b linear in the x index
        let b = DVector::from_fn(16, |k, _| (k % 4) as f64 * 0.7 - 1.0);
        assert!((b.transpose() * &sb.penalty * &b)[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn penalty_null_space_is_bilinear() {
        let sb = eval_spline_basis(10, 12, 5, 6, 2).unwrap();
        let (kx, ky) = (sb.kx, sb.ky);
        let bilinear = DVector::from_fn(kx * ky, |k, _| {
            let (i, j) = ((k % kx) as f64, (k / kx) as f64);
            0.3 + 1.1 * i - 0.4 * j + 0.25 * i * j
        });
        assert!((bilinear.transpose() * &sb.penalty * &bilinear)[(0, 0)].abs() < 1e-9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let b = DVector::from_fn(kx * ky, |_, _| rng.random_range(-1.0..1.0));
            assert!((b.transpose() * &sb.penalty * &b)[(0, 0)] > 1e-6);
        }
        let eig = SymmetricEigen::new(sb.penalty.clone());
        assert!(eig.eigenvalues.iter().all(|&e| e > -1e-10));
        let zeros = eig.eigenvalues.iter().filter(|e| e.abs() < 1e-9).count();
        assert_eq!(zeros, 4, "null space spanned by 1, i, j, ij");
    }

    #[test]
    fn rejects_oversized_basis() {
        assert!(eval_spline_basis(4, 4, 6, 6, 2).is_err());
        assert!(eval_spline_basis(8, 8, 3, 3, 2).is_err());
    }

    #[test]
    fn difference_matrix_second_order() {
        let d = difference_matrix(4, 2);
        let expect = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0]);
        assert_eq!(d, expect);
    }
}
