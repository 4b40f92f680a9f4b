use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ktcore::{Dft2, Grid, KtVolume};
use crate::lifting::{FilterSpec, Restriction, ShiftSet};

/// Largest `|Γ|` for which a dense Gram is assembled.
pub const GRAM_LIMIT: usize = 4096;

/// Circular spatial cross-correlation of two frames,
/// `g[κ] = Σ_s ρ̂_a[s + κ] conj(ρ̂_b[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrArray {
    pub a: usize,
    pub b: usize,
    pub p: usize,
    pub q: usize,
    pub data: Vec<Complex64>,
}

impl CrossCorrArray {
    #[inline]
    pub fn at(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[(kx % self.p) * self.q + ky % self.q]
    }

    /// `g_ba`, from `g_ba[κ] = conj(g_ab[−κ])`.
    pub fn swapped(&self) -> Self {
        let (p, q) = (self.p, self.q);
        let mut data = vec![Complex64::new(0.0, 0.0); p * q];
        for x in 0..p {
            for y in 0..q {
                data[x * q + y] = self.data[((p - x) % p) * q + (q - y) % q].conj();
            }
        }
        Self {
            a: self.b,
            b: self.a,
            p,
            q,
            data,
        }
    }
}

/// Raw inverse transforms of every frame, the input to the frame-pair correlations.
struct FrameImages {
    dft: Dft2,
    grid: Grid,
    images: Vec<Complex64>,
}

impl FrameImages {
    fn new(rho: &KtVolume) -> Self {
        let grid = *rho.grid();
        let dft = Dft2::new(grid.p, grid.q);
        let mut images = rho.as_slice().to_vec();
        dft.inverse_raw_frames(&mut images);
        Self { dft, grid, images }
    }

    fn image(&self, t: usize) -> &[Complex64] {
        let n = self.grid.frame_len();
        &self.images[t * n..(t + 1) * n]
    }

    /// `F(F^H ρ̂_a ∘ conj(F^H ρ̂_b))` with the raw transforms and a `1/PQ` factor,
    /// which is the plain correlation sum.
    fn corr(&self, a: usize, b: usize) -> CrossCorrArray {
        let n = self.grid.frame_len();
        let mut prod: Vec<Complex64> = self
            .image(a)
            .iter()
            .zip(self.image(b))
            .map(|(x, y)| x * y.conj())
            .collect();
        self.dft.forward_raw(&mut prod);
        let s = 1.0 / n as f64;
        prod.iter_mut().for_each(|v| *v *= s);
        CrossCorrArray {
            a,
            b,
            p: self.grid.p,
            q: self.grid.q,
            data: prod,
        }
    }
}

/// Cross-correlation of frames `a` and `b` through the FFT route.
pub fn cross_corr(rho_hat: &KtVolume, a: usize, b: usize) -> Result<CrossCorrArray> {
    let t = rho_hat.grid().t;
    if a >= t || b >= t {
        return Err(Error::InvalidArgument(format!(
            "frame pair ({a}, {b}) out of range for {t} frames"
        )));
    }
    let grid = *rho_hat.grid();
    let dft = Dft2::new(grid.p, grid.q);
    let n = grid.frame_len();
    let mut xa = rho_hat.frame(a).to_vec();
    let mut xb = rho_hat.frame(b).to_vec();
    dft.inverse_raw(&mut xa);
    dft.inverse_raw(&mut xb);
    let mut prod: Vec<Complex64> = xa.iter().zip(&xb).map(|(x, y)| x * y.conj()).collect();
    dft.forward_raw(&mut prod);
    prod.iter_mut().for_each(|v| *v /= n as f64);
    Ok(CrossCorrArray {
        a,
        b,
        p: grid.p,
        q: grid.q,
        data: prod,
    })
}

/// Dense `R = T(ρ̂) T(ρ̂)*` on the output shift set.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub rows: ShiftSet,
    pub matrix: DMatrix<Complex64>,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |R − R*|`.
    pub fn hermitian_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..=i {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

fn check_gram_size(rows: &ShiftSet) -> Result<()> {
    if rows.len() > GRAM_LIMIT {
        return Err(Error::SizeGuard {
            what: "dense Gram matrix",
            needed: rows.len(),
            limit: GRAM_LIMIT,
            hint: "use the valid_linear restriction or a larger filter",
        });
    }
    Ok(())
}

/// Summed correlation fields `S[τ, τ'] = Σ_lt g_{τ+Nt−1−lt, τ'+Nt−1−lt}` for `τ ≤ τ'`.
///
/// Each frame pair is correlated once; pairs below the diagonal come from the
/// conjugate symmetry of [`CrossCorrArray`].
fn summed_correlations(rho: &KtVolume, spec: &FilterSpec) -> Vec<Vec<Complex64>> {
    let k = spec.k();
    let c = spec.nt - 1;
    let images = FrameImages::new(rho);

    let mut pairs = BTreeMap::new();
    for tau in 0..k {
        for tau2 in tau..k {
            for lt in 0..spec.nt {
                let (a, b) = (tau + c - lt, tau2 + c - lt);
                pairs.entry((a.min(b), a.max(b))).or_insert(());
            }
        }
    }
    let keys: Vec<(usize, usize)> = pairs.into_keys().collect();
    let corr: BTreeMap<(usize, usize), CrossCorrArray> = keys
        .par_iter()
        .map(|&(a, b)| ((a, b), images.corr(a, b)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let n = rho.grid().frame_len();
    let mut out = vec![Vec::new(); k * k];
    for tau in 0..k {
        for tau2 in tau..k {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for lt in 0..spec.nt {
                let (a, b) = (tau + c - lt, tau2 + c - lt);
                // a <= b always holds here since tau <= tau2
                let g = &corr[&(a, b)];
                acc.iter_mut().zip(&g.data).for_each(|(s, v)| *s += v);
            }
            out[tau * k + tau2] = acc;
        }
    }
    out
}

/// Gram of the periodic lifting: every block is a circulant generated by the
/// summed frame-pair cross-correlations,
/// `R[(m, τ), (m', τ')] = Σ_lt g_{τ+Nt−1−lt, τ'+Nt−1−lt}[m − m']`.
pub fn assemble_periodic_gram(rho_hat: &KtVolume, spec: &FilterSpec, restriction: Restriction) -> Result<GramMatrix> {
    spec.validate()?;
    if rho_hat.grid() != &spec.grid {
        return Err(Error::Shape("volume and filter grids differ".into()));
    }
    let rows = ShiftSet::new(spec, restriction);
    check_gram_size(&rows)?;
    let fields = summed_correlations(rho_hat, spec);
    let (p, q, k) = (spec.grid.p, spec.grid.q, rows.k);
    let dim = rows.len();
    let s = rows.spatial_len();

    let mut matrix = DMatrix::<Complex64>::zeros(dim, dim);
    for tau in 0..k {
        for tau2 in tau..k {
            let field = &fields[tau * k + tau2];
            for i in 0..s {
                let (x, y, _) = rows.coords(tau * s + i);
                for j in 0..s {
                    let (x2, y2, _) = rows.coords(tau2 * s + j);
                    let v = field[((x + p - x2) % p) * q + (y + q - y2) % q];
                    matrix[(tau * s + i, tau2 * s + j)] = v;
                    matrix[(tau2 * s + j, tau * s + i)] = v.conj();
                }
            }
        }
    }
    Ok(GramMatrix { rows, matrix })
}

/// Dense gather of the periodic lifting restricted to the taps outside `Λ`:
/// `C[r, j] = ρ̂[m_r − l_j]` for every circular spatial tap `l_j ∉ Λ`.
fn complement_gather(rho: &KtVolume, spec: &FilterSpec, rows: &ShiftSet) -> DMatrix<Complex64> {
    let g = spec.grid;
    let taps: Vec<(usize, usize, usize)> = (0..spec.nt)
        .flat_map(|lt| {
            (0..g.p).flat_map(move |lx| (0..g.q).map(move |ly| (lx, ly, lt)))
        })
        .filter(|&(lx, ly, _)| lx >= spec.n1 || ly >= spec.n2)
        .collect();
    let data = rho.as_slice();
    DMatrix::from_fn(rows.len(), taps.len(), |r, j| {
        let (x, y, t) = rows.coords(r);
        let (lx, ly, lt) = taps[j];
        data[g.index((x + g.p - lx) % g.p, (y + g.q - ly) % g.q, t - lt)]
    })
}

/// Dense gather of the hybrid lifting itself (rows `Γ`, columns `Λ`).
fn support_gather(rho: &KtVolume, spec: &FilterSpec, rows: &ShiftSet) -> DMatrix<Complex64> {
    let g = spec.grid;
    let data = rho.as_slice();
    let (n1, n2) = (spec.n1, spec.n2);
    DMatrix::from_fn(rows.len(), spec.support_len(), |r, col| {
        let (x, y, t) = rows.coords(r);
        let (lt, rest) = (col / (n1 * n2), col % (n1 * n2));
        let (lx, ly) = (rest / n2, rest % n2);
        data[g.index((x + g.p - lx) % g.p, (y + g.q - ly) % g.q, t - lt)]
    })
}

/// Exact `T(ρ̂) T(ρ̂)*` of the hybrid lifting with output shifts per `restriction`.
///
/// When the spatial support covers most of the grid, this is the circulant
/// form of [`assemble_periodic_gram`] minus the contribution of the few taps
/// outside `Λ`; otherwise the support is summed directly. Both routes are exact.
pub fn assemble_gram(rho_hat: &KtVolume, spec: &FilterSpec, restriction: Restriction) -> Result<GramMatrix> {
    spec.validate()?;
    if rho_hat.grid() != &spec.grid {
        return Err(Error::Shape("volume and filter grids differ".into()));
    }
    let rows = ShiftSet::new(spec, restriction);
    check_gram_size(&rows)?;
    let inside = spec.n1 * spec.n2;
    let outside = spec.grid.frame_len() - inside;
    let matrix = if outside < inside {
        let mut gram = assemble_periodic_gram(rho_hat, spec, restriction)?;
        if outside > 0 {
            let c = complement_gather(rho_hat, spec, &rows);
            gram.matrix -= &c * c.adjoint();
        }
        gram.matrix
    } else {
        let t = support_gather(rho_hat, spec, &rows);
        &t * t.adjoint()
    };
    Ok(GramMatrix { rows, matrix })
}

/// Relative Frobenius gap between the periodic Gram and the exact valid-shift
/// Gram, `‖R_periodic − R_linear‖ / ‖R_linear‖`, both on the valid shifts.
pub fn periodization_error(rho_hat: &KtVolume, spec: &FilterSpec) -> Result<f64> {
    let per = assemble_periodic_gram(rho_hat, spec, Restriction::ValidLinear)?;
    let lin = assemble_gram(rho_hat, spec, Restriction::ValidLinear)?;
    Ok((&per.matrix - &lin.matrix).norm() / lin.matrix.norm())
}
