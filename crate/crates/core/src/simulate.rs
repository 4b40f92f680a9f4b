//! Forward problem generation: exponential phantoms, coil maps, sampling
//! masks, the multichannel Fourier operator and measurement noise.
//!
//! All randomness comes from ChaCha streams keyed by explicit seeds, so every
//! artifact is identical across platforms and thread counts.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ktcore::{Dft2, Grid, ImageSeries, KtVolume};

const T2_RANGE_MS: (f64, f64) = (1.0, 5000.0);

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Signed frequency of DFT index `i` on an axis of length `n`.
#[inline]
fn signed_freq(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Parameter map families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomKind {
    /// Spatially constant maps; one exponential of unit amplitude per entry.
    Uniform { t2_ms: Vec<f64> },
    /// Decay maps that are exact trigonometric polynomials of bandwidth
    /// `bandwidth` around the listed mean T2 values. Amplitudes follow the
    /// head regions and are deliberately not smooth.
    BandlimitedExact { t2_ms: Vec<f64>, bandwidth: usize },
    /// Head-like piecewise-constant tissue regions with one T2 per region
    /// (outer cortex, inner matter, ventricles, lesion). The decay map is
    /// smoothed by a Gaussian whose frequency response falls to `e^{-4.5}`
    /// at `bandwidth` samples, which makes it nearly bandlimited.
    RegionsSmoothed { t2_ms: Vec<f64>, bandwidth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub grid: Grid,
    #[serde(flatten)]
    pub kind: PhantomKind,
}

impl PhantomSpec {
    /// Number of exponentials per pixel.
    pub fn components(&self) -> usize {
        match &self.kind {
            PhantomKind::Uniform { t2_ms } | PhantomKind::BandlimitedExact { t2_ms, .. } => t2_ms.len(),
            PhantomKind::RegionsSmoothed { .. } => 1,
        }
    }
}

/// A synthetic series with its ground-truth parameter maps.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub series: ImageSeries,
    /// `L` maps of `P·Q` decay factors `β = exp(−ΔT/T2)`.
    pub beta_maps: Vec<Vec<f64>>,
    /// `L` maps of `P·Q` T2 values in ms.
    pub t2_maps: Vec<Vec<f64>>,
    /// `L` amplitude maps.
    pub amp_maps: Vec<Vec<Complex64>>,
    /// Pixels with nonzero signal.
    pub support: Vec<bool>,
}

impl Phantom {
    /// Builds `ρ[r, n] = Σ_i α_i(r) β_i(r)^n` from decay and amplitude maps.
    pub fn from_maps(grid: Grid, beta_maps: Vec<Vec<f64>>, amp_maps: Vec<Vec<Complex64>>) -> Result<Self> {
        grid.validate()?;
        let n = grid.frame_len();
        if beta_maps.len() != amp_maps.len() || beta_maps.is_empty() {
            return Err(Error::Shape(format!(
                "{} decay maps and {} amplitude maps",
                beta_maps.len(),
                amp_maps.len()
            )));
        }
        if beta_maps.iter().any(|m| m.len() != n) || amp_maps.iter().any(|m| m.len() != n) {
            return Err(Error::Shape(format!("maps must hold {n} pixels")));
        }
        let support: Vec<bool> = (0..n).map(|r| amp_maps.iter().any(|a| a[r].norm() > 0.0)).collect();
        let t2_maps: Vec<Vec<f64>> = beta_maps
            .iter()
            .map(|b| b.iter().map(|&v| -grid.dt_ms / v.ln()).collect())
            .collect();
        for (i, (t2, beta)) in t2_maps.iter().zip(&beta_maps).enumerate() {
            for r in (0..n).filter(|&r| support[r]) {
                let ok = beta[r] > 0.0 && beta[r] < 1.0 && t2[r] > T2_RANGE_MS.0 && t2[r] < T2_RANGE_MS.1;
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "component {i} has T2 {} ms at pixel {r}, outside (1, 5000) ms",
                        t2[r]
                    )));
                }
            }
        }
        let series = synthesize(grid, &beta_maps, &amp_maps);
        Ok(Self {
            series,
            beta_maps,
            t2_maps,
            amp_maps,
            support,
        })
    }

    /// The k-t volume of the series.
    pub fn kt(&self) -> KtVolume {
        crate::ktcore::dft2_forward(&self.series).expect("phantom series is finite")
    }
}

/// `ρ[r, n] = Σ_i α_i(r) β_i(r)^n`, pixel by pixel.
pub fn synthesize(grid: Grid, beta_maps: &[Vec<f64>], amp_maps: &[Vec<Complex64>]) -> ImageSeries {
    let mut series = ImageSeries::zeros(grid);
    let n = grid.frame_len();
    for t in 0..grid.t {
        let frame = series.frame_mut(t);
        for r in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (beta, amp) in beta_maps.iter().zip(amp_maps) {
                acc += amp[r] * beta[r].powi(t as i32);
            }
            frame[r] = acc;
        }
    }
    series
}

fn beta_of(t2: f64, dt: f64) -> Result<f64> {
    if !(t2 > T2_RANGE_MS.0 && t2 < T2_RANGE_MS.1) {
        return Err(Error::InvalidArgument(format!("T2 {t2} ms outside (1, 5000) ms")));
    }
    Ok((-dt / t2).exp())
}

/// Tissue labels of the head phantom: 0 background, 1 cortex, 2 inner matter,
/// 3 ventricles, 4 lesion.
pub fn head_regions(grid: &Grid) -> Vec<u8> {
    let (p, q) = (grid.p as f64, grid.q as f64);
    let inside = |u: f64, v: f64, cu: f64, cv: f64, a: f64, b: f64| {
        ((u - cu) / a).powi(2) + ((v - cv) / b).powi(2) <= 1.0
    };
    let mut labels = vec![0u8; grid.frame_len()];
    for x in 0..grid.p {
        for y in 0..grid.q {
            let u = (x as f64 + 0.5 - p / 2.0) / (p / 2.0);
            let v = (y as f64 + 0.5 - q / 2.0) / (q / 2.0);
            let mut l = 0;
            if inside(u, v, 0.0, 0.0, 0.86, 0.72) {
                l = 1;
            }
            if inside(u, v, 0.0, 0.0, 0.68, 0.56) {
                l = 2;
            }
            if inside(u, v, -0.12, -0.16, 0.28, 0.09) || inside(u, v, -0.12, 0.16, 0.28, 0.09) {
                l = 3;
            }
            if inside(u, v, 0.38, 0.22, 0.12, 0.12) {
                l = 4;
            }
            labels[x * grid.q + y] = l;
        }
    }
    labels
}

const REGION_DENSITY: [f64; 5] = [0.0, 0.85, 0.7, 1.0, 0.9];

/// Gaussian low-pass with frequency response `exp(−4.5 (|f|/B)²)`.
fn smooth_map(grid: &Grid, map: &[f64], bandwidth: usize) -> Vec<f64> {
    let dft = Dft2::new(grid.p, grid.q);
    let mut buf: Vec<Complex64> = map.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft.forward(&mut buf);
    let b = bandwidth.max(1) as f64;
    for x in 0..grid.p {
        let fx = signed_freq(x, grid.p);
        for y in 0..grid.q {
            let fy = signed_freq(y, grid.q);
            buf[x * grid.q + y] *= (-4.5 * (fx * fx + fy * fy) / (b * b)).exp();
        }
    }
    dft.inverse(&mut buf);
    buf.iter().map(|v| v.re).collect()
}

/// Generates the phantom described by `spec`.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    let grid = spec.grid;
    grid.validate()?;
    let n = grid.frame_len();
    match &spec.kind {
        PhantomKind::Uniform { t2_ms } => {
            if t2_ms.is_empty() {
                return Err(Error::InvalidArgument("need at least one T2 value".into()));
            }
            let mut betas = Vec::new();
            for &t2 in t2_ms {
                betas.push(vec![beta_of(t2, grid.dt_ms)?; n]);
            }
            let amps = vec![vec![Complex64::new(1.0, 0.0); n]; t2_ms.len()];
            Phantom::from_maps(grid, betas, amps)
        }
        PhantomKind::BandlimitedExact { t2_ms, bandwidth } => {
            if t2_ms.is_empty() {
                return Err(Error::InvalidArgument("need at least one T2 value".into()));
            }
            let labels = head_regions(&grid);
            let l = t2_ms.len() as f64;
            let b = *bandwidth as i64;
            let mut betas = Vec::new();
            let mut amps = Vec::new();
            for (i, &t2) in t2_ms.iter().enumerate() {
                let mean = beta_of(t2, grid.dt_ms)?;
                let mut rng = rng_for(seed, i as u64);
                // real trigonometric polynomial: one cosine per half-plane frequency
                let mut terms = Vec::new();
                for fx in -b..=b {
                    for fy in -b..=b {
                        if (fx, fy) > (0, 0) {
                            terms.push((fx as f64, fy as f64, rng.random_range(0.0..1.0), rng.random_range(0.0..2.0 * PI)));
                        }
                    }
                }
                let total: f64 = terms.iter().map(|t| t.2).sum();
                let budget = 0.5 * mean.min(1.0 - mean);
                let map: Vec<f64> = (0..n)
                    .map(|r| {
                        let (x, y) = ((r / grid.q) as f64, (r % grid.q) as f64);
                        let wobble: f64 = terms
                            .iter()
                            .map(|&(fx, fy, a, ph)| {
                                a * (2.0 * PI * (fx * x / grid.p as f64 + fy * y / grid.q as f64) + ph).cos()
                            })
                            .sum();
                        if total > 0.0 {
                            mean + budget * wobble / total
                        } else {
                            mean
                        }
                    })
                    .collect();
                betas.push(map);
                amps.push(
                    labels
                        .iter()
                        .map(|&lab| Complex64::new(REGION_DENSITY[lab as usize] / l, 0.0))
                        .collect(),
                );
            }
            Phantom::from_maps(grid, betas, amps)
        }
        PhantomKind::RegionsSmoothed { t2_ms, bandwidth } => {
            if t2_ms.len() != 4 {
                return Err(Error::InvalidArgument(format!(
                    "regions_smoothed needs 4 tissue T2 values (cortex, inner, ventricles, lesion), got {}",
                    t2_ms.len()
                )));
            }
            let labels = head_regions(&grid);
            let tissue: Vec<f64> = t2_ms.iter().map(|&t| beta_of(t, grid.dt_ms)).collect::<Result<_>>()?;
            // background takes the cortex value so the skull boundary adds no edge
            let raw: Vec<f64> = labels
                .iter()
                .map(|&lab| if lab == 0 { tissue[0] } else { tissue[lab as usize - 1] })
                .collect();
            let beta = smooth_map(&grid, &raw, *bandwidth);
            let amp: Vec<Complex64> = labels
                .iter()
                .map(|&lab| Complex64::new(REGION_DENSITY[lab as usize], 0.0))
                .collect();
            Phantom::from_maps(grid, vec![beta], vec![amp])
        }
    }
}

/// Coil sensitivity maps, `C` maps of `P·Q` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet {
    pub grid: Grid,
    pub maps: Vec<Vec<Complex64>>,
}

impl CoilSet {
    pub fn single(grid: Grid) -> Self {
        Self {
            grid,
            maps: vec![vec![Complex64::new(1.0, 0.0); grid.frame_len()]],
        }
    }

    pub fn count(&self) -> usize {
        self.maps.len()
    }

    /// One coil with unit sensitivity everywhere.
    pub fn is_identity(&self) -> bool {
        self.maps.len() == 1 && self.maps[0].iter().all(|v| *v == Complex64::new(1.0, 0.0))
    }
}

/// Smooth complex Gaussian-bump sensitivities around the field of view,
/// normalized to unit sum of squares at every pixel.
pub fn make_coils(grid: Grid, count: usize, seed: u64) -> Result<CoilSet> {
    grid.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one coil".into()));
    }
    if count == 1 {
        return Ok(CoilSet::single(grid));
    }
    let mut rng = rng_for(seed, 0x636f696c);
    let (p, q) = (grid.p as f64, grid.q as f64);
    let width = 0.45 * p.max(q);
    let mut maps = Vec::with_capacity(count);
    for c in 0..count {
        let angle = 2.0 * PI * c as f64 / count as f64 + rng.random_range(-0.2..0.2);
        let (cx, cy) = (p / 2.0 + 0.6 * (p / 2.0) * angle.cos(), q / 2.0 + 0.6 * (q / 2.0) * angle.sin());
        let (sx, sy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let phase0 = if c == 0 { 0.0 } else { rng.random_range(0.0..2.0 * PI) };
        let map = (0..grid.frame_len())
            .map(|r| {
                let (x, y) = ((r / grid.q) as f64, (r % grid.q) as f64);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = phase0 + PI * (sx * (x - cx) / p + sy * (y - cy) / q);
                Complex64::from_polar(mag, phase)
            })
            .collect();
        maps.push(map);
    }
    for r in 0..grid.frame_len() {
        let sos: f64 = maps.iter().map(|m: &Vec<Complex64>| m[r].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[r] /= sos;
        }
    }
    Ok(CoilSet { grid, maps })
}

/// Sampling pattern families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSpec {
    /// Each frame samples `round(fraction·P·Q)` locations without replacement.
    UniformRandom {
        fraction: f64,
        #[serde(default, rename = "static")]
        static_frames: bool,
    },
    /// Variable-density random pattern on the 2×2 Cartesian sub-lattice, with
    /// the central 8×8 k-space block fully sampled on that lattice. The total
    /// acceleration is `acceleration` (at least 4).
    VdCartesian {
        acceleration: f64,
        #[serde(default, rename = "static")]
        static_frames: bool,
    },
}

/// Binary k-t sampling mask, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub grid: Grid,
    pub spec: MaskSpec,
    pub seed: u64,
    data: Vec<bool>,
}

impl SamplingMask {
    pub fn from_data(grid: Grid, spec: MaskSpec, seed: u64, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!("mask needs {} entries, got {}", grid.len(), data.len())));
        }
        Ok(Self { grid, spec, seed, data })
    }

    pub fn full(grid: Grid) -> Self {
        Self {
            grid,
            spec: MaskSpec::UniformRandom {
                fraction: 1.0,
                static_frames: true,
            },
            seed: 0,
            data: vec![true; grid.len()],
        }
    }

    #[inline]
    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.grid.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn frame_count(&self, t: usize) -> usize {
        self.frame(t).iter().filter(|&&b| b).count()
    }

    /// `P·Q·T` over the number of samples.
    pub fn acceleration(&self) -> f64 {
        self.grid.len() as f64 / self.count() as f64
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

impl MaskSpec {
    /// Checks the parameters against `grid` without drawing anything.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        make_sampler(*grid, self).map(|_| ())
    }
}

type FrameSampler = Box<dyn Fn(&mut ChaCha20Rng) -> Vec<bool>>;

/// Draws a sampling mask; frames are independent unless the mask is static.
pub fn make_mask(grid: Grid, spec: &MaskSpec, seed: u64) -> Result<SamplingMask> {
    let (static_frames, draw) = make_sampler(grid, spec)?;
    let mut data = Vec::with_capacity(grid.len());
    for t in 0..grid.t {
        let stream = if static_frames { 0 } else { t as u64 };
        data.extend(draw(&mut rng_for(seed, stream)));
    }
    SamplingMask::from_data(grid, spec.clone(), seed, data)
}

fn make_sampler(grid: Grid, spec: &MaskSpec) -> Result<(bool, FrameSampler)> {
    grid.validate()?;
    let n = grid.frame_len();
    Ok(match *spec {
        MaskSpec::UniformRandom { fraction, static_frames } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!("sampling fraction {fraction} outside (0, 1]")));
            }
            let count = round_half_up(fraction * n as f64).max(1);
            (
                static_frames,
                Box::new(move |rng| {
                    let mut frame = vec![false; n];
                    for i in rand::seq::index::sample(rng, n, count) {
                        frame[i] = true;
                    }
                    frame
                }),
            )
        }
        MaskSpec::VdCartesian {
            acceleration,
            static_frames,
        } => {
            let lattice: Vec<usize> = (0..grid.p)
                .step_by(2)
                .flat_map(|x| (0..grid.q).step_by(2).map(move |y| x * grid.q + y))
                .collect();
            if !(acceleration >= 4.0) {
                return Err(Error::InvalidArgument(format!(
                    "vd_cartesian acceleration {acceleration} below the 2x2 lattice factor 4"
                )));
            }
            let target = round_half_up(n as f64 / acceleration).max(1);
            let (p, q) = (grid.p, grid.q);
            let is_center = move |i: usize| {
                let (fx, fy) = (signed_freq(i / q, p), signed_freq(i % q, q));
                (-4.0..4.0).contains(&fx) && (-4.0..4.0).contains(&fy)
            };
            let center: Vec<usize> = lattice.iter().copied().filter(|&i| is_center(i)).collect();
            if target < center.len() || target > lattice.len() {
                return Err(Error::InvalidArgument(format!(
                    "acceleration {acceleration} needs {target} samples; feasible range is {}..={}",
                    center.len(),
                    lattice.len()
                )));
            }
            let outer: Vec<(usize, f64)> = lattice
                .iter()
                .copied()
                .filter(|&i| !is_center(i))
                .map(|i| {
                    let (fx, fy) = (signed_freq(i / q, p) / (p as f64 / 2.0), signed_freq(i % q, q) / (q as f64 / 2.0));
                    let radius = ((fx * fx + fy * fy) / 2.0).sqrt().min(1.0);
                    (i, (1.0 - radius).powi(2).max(1e-3))
                })
                .collect();
            (
                static_frames,
                Box::new(move |rng| {
                    let mut frame = vec![false; n];
                    for &i in &center {
                        frame[i] = true;
                    }
                    // weighted sampling without replacement: keep the largest u^(1/w)
                    let mut keyed: Vec<(f64, usize)> = outer
                        .iter()
                        .map(|&(i, w)| (rng.random_range(0.0f64..1.0).powf(1.0 / w), i))
                        .collect();
                    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    for &(_, i) in keyed.iter().take(target - center.len()) {
                        frame[i] = true;
                    }
                    frame
                }),
            )
        }
    })
}

fn check_conformal(grid: &Grid, coils: &CoilSet, mask: &SamplingMask) -> Result<()> {
    if coils.grid != *grid || mask.grid != *grid {
        return Err(Error::Shape("coil, mask and volume grids differ".into()));
    }
    Ok(())
}

/// `b[c, t] = mask_t ∘ F(S_c ∘ F⁻¹ ρ̂_t)`, laid out coil-major then frame-major.
pub fn forward(rho_hat: &KtVolume, coils: &CoilSet, mask: &SamplingMask) -> Result<Vec<Complex64>> {
    let grid = *rho_hat.grid();
    check_conformal(&grid, coils, mask)?;
    let m = mask.as_slice();
    if coils.is_identity() {
        return Ok(rho_hat
            .as_slice()
            .iter()
            .zip(m)
            .map(|(v, &s)| if s { *v } else { Complex64::new(0.0, 0.0) })
            .collect());
    }
    let dft = Dft2::new(grid.p, grid.q);
    let mut images = rho_hat.as_slice().to_vec();
    dft.inverse_frames(&mut images);
    let n = grid.frame_len();
    let mut out = Vec::with_capacity(coils.count() * grid.len());
    for map in &coils.maps {
        let mut coil: Vec<Complex64> = images
            .iter()
            .enumerate()
            .map(|(i, v)| v * map[i % n])
            .collect();
        dft.forward_frames(&mut coil);
        coil.iter_mut().zip(m).for_each(|(v, &s)| {
            if !s {
                *v = Complex64::new(0.0, 0.0);
            }
        });
        out.extend(coil);
    }
    Ok(out)
}

/// Adjoint of [`forward`]: `Σ_c F(conj(S_c) ∘ F⁻¹(mask ∘ b_c))`.
pub fn adjoint(b: &[Complex64], coils: &CoilSet, mask: &SamplingMask) -> Result<KtVolume> {
    let grid = mask.grid;
    check_conformal(&grid, coils, mask)?;
    if b.len() != coils.count() * grid.len() {
        return Err(Error::Shape(format!(
            "measurements hold {} values, expected {}",
            b.len(),
            coils.count() * grid.len()
        )));
    }
    let m = mask.as_slice();
    if coils.is_identity() {
        let data = b
            .iter()
            .zip(m)
            .map(|(v, &s)| if s { *v } else { Complex64::new(0.0, 0.0) })
            .collect();
        return KtVolume::new(grid, data);
    }
    let dft = Dft2::new(grid.p, grid.q);
    let n = grid.frame_len();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (c, map) in coils.maps.iter().enumerate() {
        let mut coil: Vec<Complex64> = b[c * grid.len()..(c + 1) * grid.len()]
            .iter()
            .zip(m)
            .map(|(v, &s)| if s { *v } else { Complex64::new(0.0, 0.0) })
            .collect();
        dft.inverse_frames(&mut coil);
        for (i, (a, v)) in acc.iter_mut().zip(&coil).enumerate() {
            *a += map[i % n].conj() * v;
        }
    }
    dft.forward_frames(&mut acc);
    KtVolume::new(grid, acc)
}

/// Adds i.i.d. complex Gaussian noise (std `sigma` per real component) on sampled entries only.
pub fn add_noise(b: &[Complex64], mask: &SamplingMask, sigma: f64, seed: u64) -> Result<Vec<Complex64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be >= 0")));
    }
    let m = mask.as_slice();
    if b.len() % m.len() != 0 {
        return Err(Error::Shape("measurements do not tile the mask".into()));
    }
    if sigma == 0.0 {
        return Ok(b.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut rng = rng_for(seed, 0x6e6f697365);
    Ok(b.iter()
        .enumerate()
        .map(|(i, v)| {
            if m[i % m.len()] {
                v + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                *v
            }
        })
        .collect())
}

/// Mean magnitude of the sampled entries, the reference for relative noise levels.
pub fn mean_sampled_magnitude(b: &[Complex64], mask: &SamplingMask) -> f64 {
    let m = mask.as_slice();
    let (sum, count) = b
        .iter()
        .enumerate()
        .filter(|(i, _)| m[i % m.len()])
        .fold((0.0, 0usize), |(s, c), (_, v)| (s + v.norm(), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Sampled multichannel k-t data with everything needed to apply its operator.
#[derive(Debug, Clone)]
pub struct Measurements {
    pub b: Vec<Complex64>,
    pub mask: SamplingMask,
    pub coils: CoilSet,
    pub noise_sigma: f64,
}

impl Measurements {
    pub fn new(b: Vec<Complex64>, mask: SamplingMask, coils: CoilSet, noise_sigma: f64) -> Result<Self> {
        check_conformal(&mask.grid, &coils, &mask)?;
        if b.len() != coils.count() * mask.grid.len() {
            return Err(Error::Shape(format!(
                "measurements hold {} values, expected {}",
                b.len(),
                coils.count() * mask.grid.len()
            )));
        }
        let m = mask.as_slice();
        if b.iter().enumerate().any(|(i, v)| !m[i % m.len()] && *v != Complex64::new(0.0, 0.0)) {
            return Err(Error::InvalidArgument("measurements must be zero off the mask".into()));
        }
        Ok(Self {
            b,
            mask,
            coils,
            noise_sigma,
        })
    }

    /// Simulates `𝒜ρ̂ + η`.
    pub fn simulate(rho_hat: &KtVolume, coils: CoilSet, mask: SamplingMask, sigma: f64, seed: u64) -> Result<Self> {
        let clean = forward(rho_hat, &coils, &mask)?;
        let b = add_noise(&clean, &mask, sigma, seed)?;
        Self::new(b, mask, coils, sigma)
    }

    pub fn grid(&self) -> &Grid {
        &self.mask.grid
    }

    pub fn forward(&self, x: &KtVolume) -> Result<Vec<Complex64>> {
        forward(x, &self.coils, &self.mask)
    }

    pub fn adjoint(&self, b: &[Complex64]) -> Result<KtVolume> {
        adjoint(b, &self.coils, &self.mask)
    }

    /// `𝒜*b`.
    pub fn zero_filled(&self) -> KtVolume {
        self.adjoint(&self.b).expect("conformal by construction")
    }

    /// `𝒜*𝒜 x`.
    pub fn normal(&self, x: &KtVolume) -> KtVolume {
        let fx = self.forward(x).expect("conformal by construction");
        self.adjoint(&fx).expect("conformal by construction")
    }

    /// `‖𝒜x − b‖²`.
    pub fn residual_sqr(&self, x: &KtVolume) -> f64 {
        let fx = self.forward(x).expect("conformal by construction");
        fx.iter().zip(&self.b).map(|(a, b)| (a - b).norm_sqr()).sum()
    }
}
