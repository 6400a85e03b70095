//! Scalar-on-image regression.

pub mod basis;
pub mod error;
pub mod estimators;
pub mod image;
pub mod io;
pub mod kernels;
pub mod measures;
pub mod rng;
pub mod sim;
pub mod uncertainty;

pub use error::{Result, SoirError};
