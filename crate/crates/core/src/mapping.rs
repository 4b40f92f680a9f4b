//! T2 fitting, reconstruction metrics and the baseline reconstructions.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ktcore::{dft2_forward, dft2_inverse, Grid, ImageSeries, KtVolume};
use crate::simulate::Measurements;

pub const T2_MIN_MS: f64 = 1.0;
pub const T2_MAX_MS: f64 = 5000.0;

/// Mono-exponential fit results on a `P × Q` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct T2Map {
    pub p: usize,
    pub q: usize,
    pub t2: Vec<f64>,
    pub amp: Vec<f64>,
    pub support: Vec<bool>,
    /// Fits whose T2 fell outside (1, 5000) ms and was clamped.
    pub flagged: Vec<bool>,
    /// Support pixels dropped for a non-positive magnitude.
    pub dropped: usize,
}

impl T2Map {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// Weighted log-linear fit of `|ρ(TE)| = A·exp(−TE/T2)` at every support pixel.
///
/// Weights are the squared magnitudes, which makes the fit exact on noiseless
/// mono-exponentials and tempers the noise floor at late echoes.
pub fn fit_t2(series: &ImageSeries, echo_times: &[f64], support: &[bool]) -> Result<T2Map> {
    let g = *series.grid();
    let n = g.frame_len();
    if echo_times.len() != g.t {
        return Err(Error::Shape(format!("{} echo times for {} frames", echo_times.len(), g.t)));
    }
    if echo_times.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 echoes".into()));
    }
    if support.len() != n {
        return Err(Error::Shape(format!("support holds {} pixels, grid {n}", support.len())));
    }
    let fits: Vec<Option<(f64, f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|r| {
            if !support[r] {
                return Some((0.0, 0.0, false));
            }
            let mags: Vec<f64> = (0..g.t).map(|t| series.frame(t)[r].norm()).collect();
            if mags.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
                return None;
            }
            let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&te, &m) in echo_times.iter().zip(&mags) {
                let (w, y) = (m * m, m.ln());
                sw += w;
                sx += w * te;
                sy += w * y;
                sxx += w * te * te;
                sxy += w * te * y;
            }
            let (mx, my) = (sx / sw, sy / sw);
            let slope = (sxy / sw - mx * my) / (sxx / sw - mx * mx);
            let intercept = my - slope * mx;
            let amp = intercept.exp();
            let t2 = -1.0 / slope;
            if slope < 0.0 && t2 > T2_MIN_MS && t2 < T2_MAX_MS {
                Some((t2, amp, false))
            } else {
                let clamped = if slope < 0.0 { t2.clamp(T2_MIN_MS, T2_MAX_MS) } else { T2_MAX_MS };
                Some((clamped, amp, true))
            }
        })
        .collect();
    let mut map = T2Map {
        p: g.p,
        q: g.q,
        t2: vec![0.0; n],
        amp: vec![0.0; n],
        support: support.to_vec(),
        flagged: vec![false; n],
        dropped: 0,
    };
    for (r, fit) in fits.into_iter().enumerate() {
        match fit {
            Some((t2, amp, flag)) => {
                map.t2[r] = t2;
                map.amp[r] = amp;
                map.flagged[r] = flag;
            }
            None => {
                map.support[r] = false;
                map.dropped += 1;
            }
        }
    }
    Ok(map)
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("reference has {a} values, reconstruction {b}")));
    }
    Ok(())
}

/// `‖ref − rec‖ / ‖ref‖`.
pub fn nrmse(reference: &[Complex64], rec: &[Complex64]) -> Result<f64> {
    check_same_len(reference.len(), rec.len())?;
    let num: f64 = reference.iter().zip(rec).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = reference.iter().map(|a| a.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// `20·log10(‖ref‖ / ‖ref − rec‖)`, `+∞` when the two agree exactly.
pub fn snr_db(reference: &[Complex64], rec: &[Complex64]) -> Result<f64> {
    let e = nrmse(reference, rec)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -20.0 * e.log10() })
}

/// Mean absolute T2 difference over pixels where both maps have support.
pub fn t2_mae(reference: &T2Map, est: &T2Map) -> Result<f64> {
    check_same_len(reference.t2.len(), est.t2.len())?;
    let (sum, count) = (0..reference.t2.len())
        .filter(|&r| reference.support[r] && est.support[r])
        .fold((0.0, 0usize), |(s, c), r| (s + (reference.t2[r] - est.t2[r]).abs(), c + 1));
    if count == 0 {
        return Err(Error::InvalidArgument("maps share no support".into()));
    }
    Ok(sum / count as f64)
}

/// Metrics of one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub label: String,
    pub snr_db: f64,
    pub nrmse: f64,
    pub t2_mae_ms: f64,
}

/// `𝒜*b`.
pub fn recon_zerofill(meas: &Measurements) -> KtVolume {
    meas.zero_filled()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtlrConfig {
    /// Nuclear-norm weight.
    pub mu: f64,
    pub iters: usize,
}

impl Default for KtlrConfig {
    fn default() -> Self {
        Self { mu: 1.0, iters: 100 }
    }
}

/// Casorati matrix: one row per pixel, one column per frame.
pub fn casorati(series: &ImageSeries) -> DMatrix<Complex64> {
    let g = series.grid();
    let n = g.frame_len();
    DMatrix::from_fn(n, g.t, |r, t| series.frame(t)[r])
}

fn from_casorati(grid: Grid, m: &DMatrix<Complex64>) -> ImageSeries {
    let n = grid.frame_len();
    let data = (0..grid.len()).map(|i| m[(i % n, i / n)]).collect();
    ImageSeries::new(grid, data).expect("shape fixed by grid")
}

/// Singular-value soft thresholding; returns the result and its nuclear norm.
fn svt(m: DMatrix<Complex64>, tau: f64) -> Result<(DMatrix<Complex64>, f64)> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Eigen("SVD without U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Eigen("SVD without V".into()))?;
    let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
    let nuclear = shrunk.sum();
    let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * shrunk[j]);
    Ok((scaled * v_t, nuclear))
}

fn nuclear_norm(m: DMatrix<Complex64>) -> f64 {
    m.singular_values().sum()
}

/// k-t low rank baseline: proximal gradient on
/// `(1/2)‖𝒜ρ̂ − b‖² + μ‖Casorati(F⁻¹ρ̂)‖_*` with unit step.
///
/// Returns the estimate and the objective after every iteration.
pub fn recon_ktlowrank(meas: &Measurements, cfg: &KtlrConfig) -> Result<(KtVolume, Vec<f64>)> {
    if !(cfg.mu >= 0.0 && cfg.mu.is_finite()) || cfg.iters == 0 {
        return Err(Error::InvalidArgument(format!("k-t low rank needs mu >= 0 and iters >= 1, got {cfg:?}")));
    }
    let grid = *meas.grid();
    let mut x = meas.zero_filled();
    let objective = |x: &KtVolume| -> Result<f64> {
        let cas = casorati(&dft2_inverse(x)?);
        Ok(0.5 * meas.residual_sqr(x) + cfg.mu * nuclear_norm(cas))
    };
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut last = objective(&x)?;
    let mut growth = 0;
    for iter in 1..=cfg.iters {
        let resid = meas.forward(&x)?;
        let diff: Vec<Complex64> = resid.iter().zip(&meas.b).map(|(a, b)| a - b).collect();
        let grad = meas.adjoint(&diff)?;
        let step: Vec<Complex64> = x.as_slice().iter().zip(grad.as_slice()).map(|(a, g)| a - g).collect();
        let images = dft2_inverse(&KtVolume::new(grid, step)?)?;
        let (low, nuclear) = svt(casorati(&images), cfg.mu)?;
        x = dft2_forward(&from_casorati(grid, &low))?;
        let obj = 0.5 * meas.residual_sqr(&x) + cfg.mu * nuclear;
        if !obj.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: iter });
        }
        growth = if obj > last { growth + 1 } else { 0 };
        if growth >= 10 {
            return Err(Error::Divergence {
                solver: "k-t low rank",
                iteration: iter,
                residual: obj,
                iterate: x.into_vec(),
            });
        }
        trace.push(obj);
        last = obj;
    }
    Ok((x, trace))
}
