use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial × temporal sampling grid.
///
/// `p` rows by `q` columns of pixels, `t` frames spaced `dt_ms` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub p: usize,
    pub q: usize,
    pub t: usize,
    pub dt_ms: f64,
}

impl Grid {
    pub fn new(p: usize, q: usize, t: usize, dt_ms: f64) -> Result<Self> {
        let grid = Self { p, q, t, dt_ms };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 1 || self.q < 1 {
            return Err(Error::InvalidArgument(format!(
                "grid needs P >= 1 and Q >= 1, got {}x{}",
                self.p, self.q
            )));
        }
        if self.t < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs T >= 2 frames, got {}",
                self.t
            )));
        }
        if !(self.dt_ms > 0.0 && self.dt_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frame spacing must be positive, got {}",
                self.dt_ms
            )));
        }
        Ok(())
    }

    /// Pixels per frame.
    #[inline]
    pub fn frame_len(&self) -> usize {
        self.p * self.q
    }

    /// Total number of samples.
    #[inline]
    pub fn len(&self) -> usize {
        self.p * self.q * self.t
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, n: usize) -> usize {
        debug_assert!(x < self.p && y < self.q && n < self.t);
        (n * self.p + x) * self.q + y
    }

    /// Echo times in ms, first echo at `dt_ms`.
    pub fn echo_times(&self) -> Vec<f64> {
        (0..self.t).map(|n| self.dt_ms * (n + 1) as f64).collect()
    }
}

macro_rules! complex_series {
    ($name:ident, $what:literal) => {
        impl $name {
            /// Wraps frame-major data (`n`, then `x`, then `y`).
            pub fn new(grid: Grid, data: Vec<Complex64>) -> Result<Self> {
                if data.len() != grid.len() {
                    return Err(Error::Shape(format!(
                        "{} needs {} samples for {}x{}x{}, got {}",
                        $what,
                        grid.len(),
                        grid.p,
                        grid.q,
                        grid.t,
                        data.len()
                    )));
                }
                Ok(Self { grid, data })
            }

            pub fn zeros(grid: Grid) -> Self {
                Self {
                    grid,
                    data: vec![Complex64::new(0.0, 0.0); grid.len()],
                }
            }

            #[inline]
            pub fn grid(&self) -> &Grid {
                &self.grid
            }

            #[inline]
            pub fn as_slice(&self) -> &[Complex64] {
                &self.data
            }

            #[inline]
            pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<Complex64> {
                self.data
            }

            #[inline]
            pub fn frame(&self, n: usize) -> &[Complex64] {
                let len = self.grid.frame_len();
                &self.data[n * len..(n + 1) * len]
            }

            #[inline]
            pub fn frame_mut(&mut self, n: usize) -> &mut [Complex64] {
                let len = self.grid.frame_len();
                &mut self.data[n * len..(n + 1) * len]
            }

            #[inline]
            pub fn get(&self, x: usize, y: usize, n: usize) -> Complex64 {
                self.data[self.grid.index(x, y, n)]
            }

            #[inline]
            pub fn set(&mut self, x: usize, y: usize, n: usize, v: Complex64) {
                let i = self.grid.index(x, y, n);
                self.data[i] = v;
            }

            /// Returns the first non-finite sample as `[x, y, n]`.
            pub fn first_non_finite(&self) -> Option<Vec<usize>> {
                first_non_finite(&self.grid, &self.data)
            }

            /// Copies the samples into `[P, Q, T]` row-major order (the file layout).
            pub fn to_pqt(&self) -> Vec<Complex64> {
                frames_to_pqt(&self.grid, &self.data)
            }

            /// Builds from `[P, Q, T]` row-major samples.
            pub fn from_pqt(grid: Grid, pqt: &[Complex64]) -> Result<Self> {
                if pqt.len() != grid.len() {
                    return Err(Error::Shape(format!(
                        "{} needs {} samples, got {}",
                        $what,
                        grid.len(),
                        pqt.len()
                    )));
                }
                Ok(Self {
                    grid,
                    data: pqt_to_frames(&grid, pqt),
                })
            }

            pub fn norm_sqr(&self) -> f64 {
                self.data.iter().map(|v| v.norm_sqr()).sum()
            }
        }
    };
}

/// Image-domain series ρ[r, n].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    grid: Grid,
    data: Vec<Complex64>,
}

/// Per-frame spatial Fourier coefficients ρ̂[k, n].
#[derive(Debug, Clone, PartialEq)]
pub struct KtVolume {
    grid: Grid,
    data: Vec<Complex64>,
}

complex_series!(ImageSeries, "image series");
complex_series!(KtVolume, "k-t volume");

fn first_non_finite(grid: &Grid, data: &[Complex64]) -> Option<Vec<usize>> {
    // report in (x, y, n) order, scanning the way the file is laid out
    for x in 0..grid.p {
        for y in 0..grid.q {
            for n in 0..grid.t {
                let v = data[grid.index(x, y, n)];
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Some(vec![x, y, n]);
                }
            }
        }
    }
    None
}

/// Reorders frame-major samples (`[T][P][Q]`) into `[P, Q, T]` row-major order.
pub fn frames_to_pqt<T: Copy>(grid: &Grid, data: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for x in 0..grid.p {
        for y in 0..grid.q {
            for n in 0..grid.t {
                out.push(data[grid.index(x, y, n)]);
            }
        }
    }
    out
}

/// Inverse of [`frames_to_pqt`].
pub fn pqt_to_frames<T: Copy + Default>(grid: &Grid, pqt: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); pqt.len()];
    let mut it = pqt.iter();
    for x in 0..grid.p {
        for y in 0..grid.q {
            for n in 0..grid.t {
                out[grid.index(x, y, n)] = *it.next().unwrap();
            }
        }
    }
    out
}
