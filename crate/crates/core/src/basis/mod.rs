//! Spline and wavelet bases for coefficient images and orthogonal
//! projection onto a column span.

mod projection;
mod spline;
mod wavelet;

pub use projection::{project_onto_span, project_with, OrthonormalSpan, RANK_TOL};
pub use spline::{
    bspline_values, difference_matrix, eval_spline_basis, marginal_basis, uniform_knots,
    SplineBasis2D, CUBIC,
};
pub use wavelet::{
    dwt2_forward, dwt2_inverse, WaveletBasis2D, DEFAULT_COARSEST_LEVEL, LA10_LOWPASS,
};
