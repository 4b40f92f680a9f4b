//! Recovery of exponential image series from undersampled k-t measurements.
//!
//! Every pixel of the series is modeled as a sum of damped exponentials whose
//! parameters vary smoothly in space. That structure makes a multifold
//! Toeplitz lifting of the k-t samples low rank, and the reconstruction
//! completes it with iteratively reweighted least squares on a smoothed
//! Schatten-p penalty. Heavy kernels run through FFTs on the native grid.
//!
//! Modules, bottom up:
//! - [`ktcore`]: grids, volumes, DFT conventions, KTAR files
//! - [`lifting`]: explicit lifted matrices, the dense reference for everything else
//! - [`fastops`]: FFT convolution, cross-correlation, Gram assembly, normal operator
//! - [`solver`]: the IRLS reconstruction
//! - [`simulate`]: phantoms, coils, masks, forward model, noise
//! - [`mapping`]: T2 fitting, metrics, baselines

pub mod error;
pub mod fastops;
pub mod ktcore;
pub mod lifting;
mod linalg;
pub mod mapping;
pub mod simulate;
pub mod solver;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use ktcore::{Grid, ImageSeries, KtVolume};
pub use num_complex::Complex64;
