//! Per-frame 2-D DFTs.
//!
//! Convention: unitary scaling (1/√(PQ) in both directions), zero frequency at
//! index (0, 0), no center shift. The `*_raw` methods are the unnormalized
//! transforms used by the FFT kernels in `fastops`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::grid::{ImageSeries, KtVolume};
use crate::error::{Error, Result};

/// Planned 2-D transforms for one `p × q` frame shape.
#[derive(Clone)]
pub struct Dft2 {
    p: usize,
    q: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft2").field("p", &self.p).field("q", &self.q).finish()
    }
}

impl Dft2 {
    pub fn new(p: usize, q: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            p,
            q,
            row_fwd: planner.plan_fft_forward(q),
            row_inv: planner.plan_fft_inverse(q),
            col_fwd: planner.plan_fft_forward(p),
            col_inv: planner.plan_fft_inverse(p),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.p * self.q
    }

    fn run(&self, frame: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(frame.len(), self.len(), "frame length does not match the plan");
        let (p, q) = (self.p, self.q);
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len())];
        rows.process_with_scratch(frame, &mut scratch);
        if p == 1 {
            return;
        }
        let mut t = vec![Complex64::new(0.0, 0.0); p * q];
        for x in 0..p {
            for y in 0..q {
                t[y * p + x] = frame[x * q + y];
            }
        }
        cols.process_with_scratch(&mut t, &mut scratch);
        for x in 0..p {
            for y in 0..q {
                frame[x * q + y] = t[y * p + x];
            }
        }
    }

    /// Unnormalized forward transform, `Σ f[x] e^{-2πi k·x}`.
    pub fn forward_raw(&self, frame: &mut [Complex64]) {
        self.run(frame, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse transform, `Σ F[k] e^{+2πi k·x}`.
    pub fn inverse_raw(&self, frame: &mut [Complex64]) {
        self.run(frame, &self.row_inv, &self.col_inv);
    }

    pub fn forward(&self, frame: &mut [Complex64]) {
        self.forward_raw(frame);
        let s = 1.0 / (self.len() as f64).sqrt();
        frame.iter_mut().for_each(|v| *v *= s);
    }

    pub fn inverse(&self, frame: &mut [Complex64]) {
        self.inverse_raw(frame);
        let s = 1.0 / (self.len() as f64).sqrt();
        frame.iter_mut().for_each(|v| *v *= s);
    }

    /// Applies `forward` to every frame of a frame-major buffer.
    pub fn forward_frames(&self, data: &mut [Complex64]) {
        data.par_chunks_mut(self.len()).for_each(|f| self.forward(f));
    }

    pub fn inverse_frames(&self, data: &mut [Complex64]) {
        data.par_chunks_mut(self.len()).for_each(|f| self.inverse(f));
    }

    pub fn forward_raw_frames(&self, data: &mut [Complex64]) {
        data.par_chunks_mut(self.len()).for_each(|f| self.forward_raw(f));
    }

    pub fn inverse_raw_frames(&self, data: &mut [Complex64]) {
        data.par_chunks_mut(self.len()).for_each(|f| self.inverse_raw(f));
    }
}

/// Unitary per-frame 2-D DFT of an image series.
pub fn dft2_forward(x: &ImageSeries) -> Result<KtVolume> {
    if let Some(index) = x.first_non_finite() {
        return Err(Error::NonFinite { what: "image series", index });
    }
    let grid = *x.grid();
    let mut data = x.as_slice().to_vec();
    Dft2::new(grid.p, grid.q).forward_frames(&mut data);
    KtVolume::new(grid, data)
}

/// Inverse of [`dft2_forward`].
pub fn dft2_inverse(k: &KtVolume) -> Result<ImageSeries> {
    if let Some(index) = k.first_non_finite() {
        return Err(Error::NonFinite { what: "k-t volume", index });
    }
    let grid = *k.grid();
    let mut data = k.as_slice().to_vec();
    Dft2::new(grid.p, grid.q).inverse_frames(&mut data);
    ImageSeries::new(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ktcore::Grid;
    use crate::testutil::random_complex;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constant_frame_maps_to_dc() {
        let grid = Grid::new(4, 4, 2, 1.0).unwrap();
        let x = ImageSeries::new(grid, vec![c(1.0); 32]).unwrap();
        let k = dft2_forward(&x).unwrap();
        for n in 0..2 {
            for (i, v) in k.frame(n).iter().enumerate() {
                let want = if i == 0 { 4.0 } else { 0.0 };
                assert!((v - c(want)).norm() < 1e-14, "{i}: {v}");
            }
        }
        let back = dft2_inverse(&k).unwrap();
        for v in back.as_slice() {
            assert!((v - c(1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn impulse_maps_to_flat_frame() {
        let grid = Grid::new(4, 4, 2, 1.0).unwrap();
        let mut x = ImageSeries::zeros(grid);
        x.set(0, 0, 0, c(1.0));
        let k = dft2_forward(&x).unwrap();
        for v in k.frame(0) {
            assert!((v - c(0.25)).norm() < 1e-15);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let grid = Grid::new(8, 8, 3, 1.0).unwrap();
        let x = ImageSeries::new(grid, random_complex(grid.len(), 11)).unwrap();
        let k = dft2_forward(&x).unwrap();
        for n in 0..3 {
            let ex: f64 = x.frame(n).iter().map(|v| v.norm_sqr()).sum();
            let ek: f64 = k.frame(n).iter().map(|v| v.norm_sqr()).sum();
            assert!((ex - ek).abs() <= 1e-10 * ex);
        }
        let back = dft2_inverse(&k).unwrap();
        let err: f64 = back
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-12 * x.norm_sqr().sqrt());
    }

    #[test]
    fn inverse_is_linear() {
        let grid = Grid::new(5, 3, 2, 1.0).unwrap();
        let u = KtVolume::new(grid, random_complex(grid.len(), 1)).unwrap();
        let v = KtVolume::new(grid, random_complex(grid.len(), 2)).unwrap();
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5));
        let mix: Vec<_> = u.as_slice().iter().zip(v.as_slice()).map(|(x, y)| a * x + b * y).collect();
        let lhs = dft2_inverse(&KtVolume::new(grid, mix).unwrap()).unwrap();
        let iu = dft2_inverse(&u).unwrap();
        let iv = dft2_inverse(&v).unwrap();
        for i in 0..grid.len() {
            let rhs = a * iu.as_slice()[i] + b * iv.as_slice()[i];
            assert!((lhs.as_slice()[i] - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let grid = Grid::new(2, 2, 2, 1.0).unwrap();
        let mut x = ImageSeries::zeros(grid);
        x.set(0, 1, 1, Complex64::new(0.0, f64::INFINITY));
        match dft2_forward(&x) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, vec![0, 1, 1]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
