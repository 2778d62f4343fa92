//! Spectral transforms on the Gaussian grid, padded batched GEMM, an
//! unstructured flux-divergence kernel, roofline analysis and a numerical
//! model of optical correlators that compute spherical-harmonic coefficients.

pub mod astigmatic;
pub mod batch_gemm;
pub mod error;
pub mod format;
pub mod kernels;
pub mod legendre;
pub mod optics;
pub mod optics_calib;
pub mod roofline;
pub mod spectral;
pub mod sphere_grid;

pub use error::{Error, Result};
