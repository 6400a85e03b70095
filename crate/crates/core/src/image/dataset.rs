use nalgebra::{DMatrix, DVector};

use super::Image2D;
use crate::error::{Result, SoirError};

/// Response `y`, scalar covariates `W` (first column the intercept) and the
/// vectorized images `X`, one row per observation.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    y: DVector<f64>,
    w: DMatrix<f64>,
    x: DMatrix<f64>,
    nx: usize,
    ny: usize,
    demeaned: bool,
    pixel_means: Option<Vec<f64>>,
}

impl RegressionDataset {
    pub fn new(
        y: DVector<f64>,
        w: DMatrix<f64>,
        x: DMatrix<f64>,
        nx: usize,
        ny: usize,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(SoirError::InvalidInput(
                "dataset has no observations".into(),
            ));
        }
        if w.ncols() == 0 {
            return Err(SoirError::InvalidInput(
                "W needs at least the intercept column".into(),
            ));
        }
        if w.nrows() != n || x.nrows() != n {
            return Err(SoirError::DimensionMismatch(format!(
                "y has {n} rows, W {} and X {}",
                w.nrows(),
                x.nrows()
            )));
        }
        if nx < 2 || ny < 2 || x.ncols() != nx * ny {
            return Err(SoirError::DimensionMismatch(format!(
                "X has {} columns, grid is {nx}x{ny}",
                x.ncols()
            )));
        }
        if w.column(0).iter().any(|&v| v != 1.0) {
            return Err(SoirError::InvalidInput(
                "first column of W must be the all-ones intercept".into(),
            ));
        }
        let finite = y
            .iter()
            .chain(w.iter())
            .chain(x.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(SoirError::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Self {
            y,
            w,
            x,
            nx,
            ny,
            demeaned: false,
            pixel_means: None,
        })
    }

    /// Builds a dataset from images; `extra_covariates` (N×q, optional) are
    /// appended after the intercept.
    pub fn from_images(
        y: &[f64],
        images: &[Image2D],
        extra_covariates: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| SoirError::InvalidInput("no images supplied".into()))?;
        let (nx, ny) = (first.nx(), first.ny());
        if y.len() != images.len() {
            return Err(SoirError::DimensionMismatch(format!(
                "{} responses for {} images",
                y.len(),
                images.len()
            )));
        }
        if images.iter().any(|im| !im.same_shape(first)) {
            return Err(SoirError::DimensionMismatch("images differ in size".into()));
        }
        let n = images.len();
        let l = nx * ny;
        let x = DMatrix::from_fn(n, l, |i, j| images[i].values()[j]);
        let q = extra_covariates.map_or(0, |m| m.ncols());
        if let Some(m) = extra_covariates {
            if m.nrows() != n {
                return Err(SoirError::DimensionMismatch("covariate rows".into()));
            }
        }
        let w = DMatrix::from_fn(n, 1 + q, |i, j| {
            if j == 0 {
                1.0
            } else {
                extra_covariates.map_or(0.0, |m| m[(i, j - 1)])
            }
        });
        Self::new(DVector::from_column_slice(y), w, x, nx, ny)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_pixels(&self) -> usize {
        self.x.ncols()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// N×L image matrix; column `l` holds pixel `l` across observations.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn is_demeaned(&self) -> bool {
        self.demeaned
    }

    pub fn pixel_means(&self) -> Option<&[f64]> {
        self.pixel_means.as_deref()
    }

    /// Image of observation `i` as stored (demeaned if the dataset is).
    pub fn image(&self, i: usize) -> Image2D {
        let values = self.x.row(i).iter().copied().collect();
        Image2D::new(self.nx, self.ny, values).expect("validated at construction")
    }

    /// Same images and covariates, new response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(SoirError::DimensionMismatch("response length".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SoirError::InvalidInput("non-finite response".into()));
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Rows `rows` (repeats allowed) as a fresh, not-yet-demeaned dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.n()) {
            return Err(SoirError::InvalidInput("row index out of range".into()));
        }
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        let w = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.w[(rows[i], j)]);
        let x = DMatrix::from_fn(rows.len(), self.n_pixels(), |i, j| self.x[(rows[i], j)]);
        Self::new(y, w, x, self.nx, self.ny)
    }

    pub(crate) fn require_demeaned(&self) -> Result<()> {
        if self.demeaned {
            Ok(())
        } else {
            Err(SoirError::Precondition(
                "images must be demeaned before fitting".into(),
            ))
        }
    }
}

/// Subtracts the per-pixel mean over observations from `X`; stores the means.
pub fn demean_images(mut data: RegressionDataset) -> Result<RegressionDataset> {
    if data.demeaned {
        return Err(SoirError::Precondition(
            "dataset is already demeaned".into(),
        ));
    }
    let n = data.n();
    if n == 0 {
        return Err(SoirError::InvalidInput(
            "cannot demean an empty dataset".into(),
        ));
    }
    let mut means = Vec::with_capacity(data.n_pixels());
    for mut col in data.x.column_iter_mut() {
        let m = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= m);
        means.push(m);
    }
    data.demeaned = true;
    data.pixel_means = Some(means);
    Ok(data)
}
