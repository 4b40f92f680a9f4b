use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ktcore::{Dft2, Grid};
use crate::lifting::{FilterSpec, ShiftSet};
use crate::solver::WeightSet;

/// Spatial multiplier fields `m[τ, τ'] = Σ_i conj(Ĥ_iτ) ∘ Ĥ_iτ'` of a filter bank,
/// `Ĥ_iτ` being the raw spatial DFT of temporal slice `τ` of filter `i` placed
/// at its shift coordinates on the grid.
#[derive(Debug, Clone)]
pub struct NormalMultipliers {
    pub grid: Grid,
    pub rows: ShiftSet,
    /// `k × k` fields of `P·Q` values, row-major in `(τ, τ')`.
    pub fields: Vec<Vec<Complex64>>,
}

fn check_conformal(weights: &WeightSet, spec: &FilterSpec) -> Result<()> {
    if weights.grid != spec.grid || weights.rows.k != spec.k() || weights.rows.t0 != spec.nt - 1 {
        return Err(Error::Shape(format!(
            "weights on {:?} with {} temporal shifts do not fit spec {:?}",
            weights.grid, weights.rows.k, spec
        )));
    }
    if weights.filters.ncols() != weights.rows.len() {
        return Err(Error::Shape(format!(
            "filters have {} taps, shift set has {}",
            weights.filters.ncols(),
            weights.rows.len()
        )));
    }
    Ok(())
}

/// Collapses the filter bank into multiplier fields through the weight matrix
/// `H = Σ_i h_i* h_i`: `m[τ, τ'](ω) = Σ_{a ∈ τ, b ∈ τ'} H[a, b] e^{−iω(b − a)}`,
/// i.e. the DFT of `H`'s blocks binned by spatial shift difference.
pub fn build_normal_multipliers(weights: &WeightSet, spec: &FilterSpec) -> Result<NormalMultipliers> {
    check_conformal(weights, spec)?;
    let h = weights.weight_matrix();
    Ok(multipliers_from_weight_matrix(&h, &weights.rows, spec.grid))
}

pub(crate) fn multipliers_from_weight_matrix(h: &DMatrix<Complex64>, rows: &ShiftSet, grid: Grid) -> NormalMultipliers {
    let (p, q, k) = (grid.p, grid.q, rows.k);
    let s = rows.spatial_len();
    let dft = Dft2::new(p, q);
    let blocks: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    let fields = blocks
        .par_iter()
        .map(|&(tau, tau2)| {
            let mut bins = vec![Complex64::new(0.0, 0.0); p * q];
            for i in 0..s {
                let (xa, ya, _) = rows.coords(tau * s + i);
                for j in 0..s {
                    let (xb, yb, _) = rows.coords(tau2 * s + j);
                    let d = ((xb + p - xa) % p) * q + (yb + q - ya) % q;
                    bins[d] += h[(tau * s + i, tau2 * s + j)];
                }
            }
            dft.forward_raw(&mut bins);
            bins
        })
        .collect();
    NormalMultipliers {
        grid,
        rows: *rows,
        fields,
    }
}

impl NormalMultipliers {
    /// Multipliers straight from the definition: one spatial DFT per filter
    /// slice. Costs `M·k` transforms; used to cross-check the collapsed route.
    pub fn from_filters(weights: &WeightSet) -> Self {
        let grid = weights.grid;
        let rows = weights.rows;
        let (p, q, k) = (grid.p, grid.q, rows.k);
        let n = p * q;
        let dft = Dft2::new(p, q);
        let mut fields = vec![vec![Complex64::new(0.0, 0.0); n]; k * k];
        for i in 0..weights.filters.nrows() {
            let mut slices = vec![Complex64::new(0.0, 0.0); k * n];
            for r in 0..rows.len() {
                let (x, y, _) = rows.coords(r);
                slices[rows.tau(r) * n + x * q + y] = weights.filters[(i, r)];
            }
            for tau in 0..k {
                dft.forward_raw(&mut slices[tau * n..(tau + 1) * n]);
            }
            for tau in 0..k {
                for tau2 in 0..k {
                    let field = &mut fields[tau * k + tau2];
                    let (a, b) = (&slices[tau * n..(tau + 1) * n], &slices[tau2 * n..(tau2 + 1) * n]);
                    for ((f, x), y) in field.iter_mut().zip(a).zip(b) {
                        *f += x.conj() * y;
                    }
                }
            }
        }
        Self { grid, rows, fields }
    }

    pub fn field(&self, tau: usize, tau2: usize) -> &[Complex64] {
        &self.fields[tau * self.rows.k + tau2]
    }

    /// Per-frequency `T × T` blocks of the induced normal operator.
    pub fn operator(&self) -> NormalOperator {
        let g = self.grid;
        let (n, t, k) = (g.frame_len(), g.t, self.rows.k);
        let c = self.rows.t0;
        let nt = c + 1;
        let mut blocks = vec![Complex64::new(0.0, 0.0); n * t * t];
        // frame t of the output couples to frame t' through every lag lt with
        // t = τ + c − lt and t' = τ' + c − lt.
        blocks.par_chunks_mut(t * t).enumerate().for_each(|(w, blk)| {
            for tau in 0..k {
                for tau2 in 0..k {
                    let v = self.fields[tau * k + tau2][w];
                    for lt in 0..nt {
                        let (a, b) = (tau + c - lt, tau2 + c - lt);
                        blk[a * t + b] += v;
                    }
                }
            }
        });
        NormalOperator {
            grid: g,
            dft: Dft2::new(g.p, g.q),
            blocks,
        }
    }
}

/// `Σ_i A_i* A_i` for the periodic lifting, applied as `F (K(ω) · F⁻¹ x) / PQ`
/// with one `T × T` block `K(ω)` per spatial frequency.
#[derive(Debug, Clone)]
pub struct NormalOperator {
    grid: Grid,
    dft: Dft2,
    blocks: Vec<Complex64>,
}

impl NormalOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let g = self.grid;
        let (n, t) = (g.frame_len(), g.t);
        assert_eq!(x.len(), n * t);
        let mut spec = x.to_vec();
        self.dft.inverse_raw_frames(&mut spec);

        let mut by_freq = vec![Complex64::new(0.0, 0.0); n * t];
        by_freq.par_chunks_mut(t).enumerate().for_each(|(w, out)| {
            let blk = &self.blocks[w * t * t..(w + 1) * t * t];
            for a in 0..t {
                let row = &blk[a * t..(a + 1) * t];
                let mut acc = Complex64::new(0.0, 0.0);
                for b in 0..t {
                    acc += row[b] * spec[b * n + w];
                }
                out[a] = acc;
            }
        });

        let mut out = vec![Complex64::new(0.0, 0.0); n * t];
        for w in 0..n {
            for a in 0..t {
                out[a * n + w] = by_freq[w * t + a];
            }
        }
        self.dft.forward_raw_frames(&mut out);
        let s = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= s);
        out
    }
}
