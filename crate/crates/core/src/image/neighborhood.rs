use nalgebra::DMatrix;

use crate::error::{Result, SoirError};

/// Four-neighbour grid Laplacian `P`: `p_ll = d_l`, `p_jl = -1` for
/// neighbours, zero otherwise. Stored as adjacency lists.
#[derive(Debug, Clone)]
pub struct NeighborhoodMatrix {
    nx: usize,
    ny: usize,
    neighbors: Vec<Vec<usize>>,
}

/// Builds the four-neighbour Laplacian of an `nx`×`ny` grid.
pub fn build_neighborhood(nx: usize, ny: usize) -> Result<NeighborhoodMatrix> {
    NeighborhoodMatrix::grid(nx, ny)
}

impl NeighborhoodMatrix {
    pub fn grid(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(SoirError::InvalidInput(format!(
                "neighbourhood needs a grid of at least 2x2, got {nx}x{ny}"
            )));
        }
        let mut neighbors = vec![Vec::with_capacity(4); nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                let l = y * nx + x;
                if y > 0 {
                    neighbors[l].push(l - nx);
                }
                if x > 0 {
                    neighbors[l].push(l - 1);
                }
                if x + 1 < nx {
                    neighbors[l].push(l + 1);
                }
                if y + 1 < ny {
                    neighbors[l].push(l + nx);
                }
            }
        }
        Ok(Self { nx, ny, neighbors })
    }

    pub fn n_pixels(&self) -> usize {
        self.neighbors.len()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn degree(&self, l: usize) -> usize {
        self.neighbors[l].len()
    }

    pub fn neighbors(&self, l: usize) -> &[usize] {
        &self.neighbors[l]
    }

    /// `Pβ`.
    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(l, nb)| nb.len() as f64 * beta[l] - nb.iter().map(|&j| beta[j]).sum::<f64>())
            .collect()
    }

    /// `β'Pβ`, the sum of squared differences over unordered neighbour pairs.
    pub fn quad_form(&self, beta: &[f64]) -> f64 {
        let mut s = 0.0;
        for (l, nb) in self.neighbors.iter().enumerate() {
            for &j in nb.iter().filter(|&&j| j > l) {
                let d = beta[l] - beta[j];
                s += d * d;
            }
        }
        s
    }

    /// `L − 1` for a connected grid.
    pub fn rank(&self) -> usize {
        self.n_pixels() - 1
    }

    /// Largest eigenvalue. The grid Laplacian is the Kronecker sum of two
    /// path-graph Laplacians whose spectra are `2 − 2cos(πk/n)`.
    pub fn lambda_max(&self) -> f64 {
        let top = |n: usize| 2.0 - 2.0 * (std::f64::consts::PI * (n - 1) as f64 / n as f64).cos();
        top(self.nx) + top(self.ny)
    }

    /// Unit eigenvector for [`lambda_max`](Self::lambda_max).
    pub fn top_eigenvector(&self) -> Vec<f64> {
        let mode = |n: usize, i: usize| {
            (std::f64::consts::PI * (n - 1) as f64 * (i as f64 + 0.5) / n as f64).cos()
        };
        let mut v = Vec::with_capacity(self.n_pixels());
        for y in 0..self.ny {
            for x in 0..self.nx {
                v.push(mode(self.nx, x) * mode(self.ny, y));
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        v
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let l = self.n_pixels();
        let mut p = DMatrix::zeros(l, l);
        for (i, nb) in self.neighbors.iter().enumerate() {
            p[(i, i)] = nb.len() as f64;
            for &j in nb {
                p[(i, j)] = -1.0;
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};

    #[test]
    fn degrees_match_grid_position() {
        let p = build_neighborhood(2, 2).unwrap();
        assert!((0..4).all(|l| p.degree(l) == 2));
        let p = build_neighborhood(3, 3).unwrap();
        assert_eq!(p.degree(4), 4);
        for corner in [0, 2, 6, 8] {
            assert_eq!(p.degree(corner), 2);
        }
        assert_eq!(p.degree(1), 3);
        assert!(build_neighborhood(1, 5).is_err());
    }

    #[test]
    fn dense_form_is_a_laplacian() {
        for (nx, ny) in [(2, 2), (3, 4), (5, 5)] {
            let p = build_neighborhood(nx, ny).unwrap();
            let d = p.to_dense();
            assert_eq!(d, d.transpose());
            for row in d.row_iter() {
                assert_eq!(row.sum(), 0.0);
            }
            let eig = SymmetricEigen::new(d);
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            assert!(ev[0].abs() < 1e-10);
            assert!(ev[1] > 1e-8, "connected grid has rank L-1");
            assert!((ev[ev.len() - 1] - p.lambda_max()).abs() < 1e-10);
        }
        let two = build_neighborhood(2, 2).unwrap();
        assert!((two.lambda_max() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn top_eigenvector_attains_lambda_max() {
        for (nx, ny) in [(2, 2), (4, 3), (6, 6)] {
            let p = build_neighborhood(nx, ny).unwrap();
            let v = p.top_eigenvector();
            let pv = p.apply(&v);
            for (a, b) in pv.iter().zip(&v) {
                assert!((a - p.lambda_max() * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quad_form_matches_pair_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for nx in 2..=5 {
            for ny in 2..=5 {
                let p = build_neighborhood(nx, ny).unwrap();
                let beta: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(-2.0..2.0)).collect();
                // direct enumeration of horizontal and vertical pairs
                let mut direct = 0.0;
                for y in 0..ny {
                    for x in 0..nx {
                        let l = y * nx + x;
                        if x + 1 < nx {
                            direct += (beta[l] - beta[l + 1]).powi(2);
                        }
                        if y + 1 < ny {
                            direct += (beta[l] - beta[l + nx]).powi(2);
                        }
                    }
                }
                let dense = p.to_dense();
                let b = nalgebra::DVector::from_vec(beta.clone());
                let via_dense = (b.transpose() * &dense * &b)[(0, 0)];
                assert!((p.quad_form(&beta) - direct).abs() < 1e-10);
                assert!((via_dense - direct).abs() < 1e-10);
                let ones = vec![1.0; nx * ny];
                assert!(p.apply(&ones).iter().all(|v| v.abs() < 1e-15));
            }
        }
    }
}
