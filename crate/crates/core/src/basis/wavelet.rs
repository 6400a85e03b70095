//! Orthonormal 2D discrete wavelet transform with periodic boundaries.
//!
//! Mallat pyramid with Daubechies least-asymmetric filters (10 vanishing
//! moments, 20 taps). Rows are filtered first, then columns, on the
//! shrinking approximation block until it reaches `2^M0` pixels per side.
//!
//! Coefficient vector layout (length `L = n²`):
//! 1. the smooth block, `2^M0 × 2^M0`, row-major;
//! 2. for each detail level from coarse to fine (block side `h = 2^M0, …, n/2`):
//!    the x-detail block (high-pass along x, low-pass along y), the y-detail
//!    block (low-pass along x, high-pass along y), and the diagonal block,
//!    each `h × h` row-major.

use crate::error::{Result, SoirError};
use crate::image::Image2D;

/// Scaling (low-pass) filter of the least-asymmetric Daubechies wavelet with
/// 10 vanishing moments, normalized to `Σh = √2`, `Σh² = 1`.
pub const LA10_LOWPASS: [f64; 20] = [
    -0.00045932942100465206,
    5.703608361849501e-05,
    0.004593173585311792,
    -0.0008043589320164513,
    -0.02035493981231111,
    0.00576491203358115,
    0.049994972077375154,
    -0.03199005688242811,
    -0.035536740473819585,
    0.3838267610670763,
    0.7695100370210979,
    0.4716906669384429,
    -0.07088053578323157,
    -0.1594942788849106,
    0.011609893903711319,
    0.04592723923109151,
    -0.0014653825813046104,
    -0.00864129927702215,
    9.563267072285273e-05,
    0.0007701598091144599,
];

pub const DEFAULT_COARSEST_LEVEL: usize = 3;

#[derive(Debug, Clone)]
pub struct WaveletBasis2D {
    side: usize,
    coarsest_level: usize,
    levels: usize,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
    layout: Vec<usize>,
}

impl WaveletBasis2D {
    /// Least-asymmetric Daubechies-10 basis, coarsest level `M0 = 3`.
    pub fn la10(side: usize) -> Result<Self> {
        Self::new(side, DEFAULT_COARSEST_LEVEL)
    }

    /// Basis for `side`×`side` images keeping a `2^coarsest_level` smooth block.
    pub fn new(side: usize, coarsest_level: usize) -> Result<Self> {
        if !side.is_power_of_two() || side < 2 {
            return Err(SoirError::InvalidInput(format!(
                "wavelet side length must be a power of two, got {side}"
            )));
        }
        let log2 = side.trailing_zeros() as usize;
        if log2 < coarsest_level {
            return Err(SoirError::InvalidInput(format!(
                "side {side} is smaller than the 2^{coarsest_level} smooth block"
            )));
        }
        let lowpass = LA10_LOWPASS.to_vec();
        let f = lowpass.len();
        let highpass = (0..f)
            .map(|m| if m % 2 == 0 { 1.0 } else { -1.0 } * lowpass[f - 1 - m])
            .collect();
        let layout = pyramid_layout(side, 1 << coarsest_level);
        Ok(Self {
            side,
            coarsest_level,
            levels: log2 - coarsest_level,
            lowpass,
            highpass,
            layout,
        })
    }

    /// Basis matching a square power-of-two image.
    pub fn for_image(img: &Image2D) -> Result<Self> {
        if img.nx() != img.ny() {
            return Err(SoirError::InvalidInput(format!(
                "wavelet transform needs a square image, got {}x{}",
                img.nx(),
                img.ny()
            )));
        }
        Self::la10(img.nx())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn coarsest_level(&self) -> usize {
        self.coarsest_level
    }

    /// Number of decomposition levels `J = log2(side) − M0`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn vanishing_moments(&self) -> usize {
        self.lowpass.len() / 2
    }

    pub fn n_coefficients(&self) -> usize {
        self.side * self.side
    }

    /// Forward transform of a row-major pixel vector.
    pub fn forward(&self, pixels: &[f64]) -> Vec<f64> {
        assert_eq!(pixels.len(), self.n_coefficients());
        let n = self.side;
        let mut work = pixels.to_vec();
        let mut buf = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut s = n;
        for _ in 0..self.levels {
            for y in 0..s {
                buf[..s].copy_from_slice(&work[y * n..y * n + s]);
                self.analyze(&buf[..s], &mut out[..s]);
                work[y * n..y * n + s].copy_from_slice(&out[..s]);
            }
            for x in 0..s {
                for y in 0..s {
                    buf[y] = work[y * n + x];
                }
                self.analyze(&buf[..s], &mut out[..s]);
                for y in 0..s {
                    work[y * n + x] = out[y];
                }
            }
            s /= 2;
        }
        self.layout.iter().map(|&i| work[i]).collect()
    }

    /// Inverse transform; exact adjoint of [`forward`](Self::forward).
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_coefficients());
        let n = self.side;
        let mut work = vec![0.0; n * n];
        for (k, &i) in self.layout.iter().enumerate() {
            work[i] = coeffs[k];
        }
        let mut buf = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut s = n >> self.levels;
        for _ in 0..self.levels {
            s *= 2;
            for x in 0..s {
                for y in 0..s {
                    buf[y] = work[y * n + x];
                }
                self.synthesize(&buf[..s], &mut out[..s]);
                for y in 0..s {
                    work[y * n + x] = out[y];
                }
            }
            for y in 0..s {
                buf[..s].copy_from_slice(&work[y * n..y * n + s]);
                self.synthesize(&buf[..s], &mut out[..s]);
                work[y * n..y * n + s].copy_from_slice(&out[..s]);
            }
        }
        work
    }

    /// Pixel image of the `k`-th basis function.
    pub fn basis_function(&self, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.n_coefficients()];
        e[k] = 1.0;
        self.inverse(&e)
    }

    /// One periodic analysis step: `out[..s/2]` low-pass, `out[s/2..]` high-pass.
    fn analyze(&self, x: &[f64], out: &mut [f64]) {
        let s = x.len();
        let half = s / 2;
        for k in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for (m, (&h, &g)) in self.lowpass.iter().zip(&self.highpass).enumerate() {
                let v = x[(2 * k + m) % s];
                a += h * v;
                d += g * v;
            }
            out[k] = a;
            out[half + k] = d;
        }
    }

    fn synthesize(&self, c: &[f64], out: &mut [f64]) {
        let s = c.len();
        let half = s / 2;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..half {
            let (a, d) = (c[k], c[half + k]);
            for (m, (&h, &g)) in self.lowpass.iter().zip(&self.highpass).enumerate() {
                out[(2 * k + m) % s] += h * a + g * d;
            }
        }
    }
}

/// Maps coefficient positions to indices of the in-place Mallat array.
fn pyramid_layout(n: usize, smooth: usize) -> Vec<usize> {
    let mut layout = Vec::with_capacity(n * n);
    let push_block = |x0: usize, y0: usize, h: usize, layout: &mut Vec<usize>| {
        for y in y0..y0 + h {
            for x in x0..x0 + h {
                layout.push(y * n + x);
            }
        }
    };
    push_block(0, 0, smooth, &mut layout);
    let mut h = smooth;
    while h < n {
        push_block(h, 0, h, &mut layout);
        push_block(0, h, h, &mut layout);
        push_block(h, h, h, &mut layout);
        h *= 2;
    }
    layout
}

/// Wavelet coefficients of a square power-of-two image.
pub fn dwt2_forward(img: &Image2D, basis: &WaveletBasis2D) -> Result<Vec<f64>> {
    if img.nx() != img.ny() || img.nx() != basis.side() {
        return Err(SoirError::InvalidInput(format!(
            "{}x{} image does not match the {0}x{0} wavelet basis",
            img.nx(),
            img.ny()
        )));
    }
    Ok(basis.forward(img.values()))
}

/// Image reconstructed from a coefficient vector in the pyramid layout.
pub fn dwt2_inverse(coeffs: &[f64], basis: &WaveletBasis2D) -> Result<Image2D> {
    if coeffs.len() != basis.n_coefficients() {
        return Err(SoirError::DimensionMismatch(format!(
            "expected {} wavelet coefficients, got {}",
            basis.n_coefficients(),
            coeffs.len()
        )));
    }
    Image2D::new(basis.side(), basis.side(), basis.inverse(coeffs))
}
