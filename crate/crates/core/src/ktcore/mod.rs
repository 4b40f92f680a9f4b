//! Array types, index conventions, 2-D DFTs and the KTAR file format.

mod dft;
mod grid;
pub mod ktar;

pub use dft::{dft2_forward, dft2_inverse, Dft2};
pub use grid::{frames_to_pqt, pqt_to_frames, Grid, ImageSeries, KtVolume};
pub use ktar::{read_array, write_array, ArrayData, ArrayHeader, Dtype};

