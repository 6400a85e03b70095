//! Numerical building blocks shared by the estimators.

mod eigenimages;
mod elastic_net;
mod ols;
mod pca;
mod penalized;
mod pls;

pub use eigenimages::{rank_one_eigenimages, EigenimageOptions, EigenimageSet};
pub use elastic_net::{elastic_net, lambda_max, lambda_path, ElasticNetOptions, ElasticNetPath};
pub use ols::{least_squares, LeastSquaresFit};
pub use pca::{pca_svd, PcaResult, SVD_RANK_TOL};
pub use penalized::{
    default_lambda_grid, log_spaced, pad_penalty, solve_penalized_ls, solve_penalized_ls_at,
    PenalizedLSFit, PenalizedLSProblem, SmoothingSelector,
};
pub use pls::{pls_components, PlsResult};
