//! Explicit multifold Toeplitz liftings.
//!
//! The lifted matrix `T(ρ̂)` has one row per output shift `m ∈ Γ` and one
//! column per filter tap `l ∈ Λ`, with entry `ρ̂[m − l]`, so that
//! `T(ρ̂)·vec(c)` is the convolution `Σ_l c[l] ρ̂[m − l]` sampled on `Γ`.
//! The support `Λ = [0, N1) × [0, N2) × [0, Nt)` is anchored at the zero corner.
//! Time is always linear: output frames run over `[Nt − 1, T)`.
//!
//! Everything here is dense and meant as ground truth for small problems.
//!
//! Index conventions shared with `fastops` and `solver`:
//! - rows are ordered temporal-shift major, then `x`, then `y`;
//! - columns are ordered `lt`, then `lx`, then `ly`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ktcore::{Grid, KtVolume};

/// Entry budget for explicit matrices.
pub const DENSE_LIMIT: usize = 10_000_000;

/// Annihilation filter support `N1 × N2 × Nt` on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub grid: Grid,
    pub n1: usize,
    pub n2: usize,
    pub nt: usize,
}

impl FilterSpec {
    pub fn new(grid: Grid, n1: usize, n2: usize, nt: usize) -> Result<Self> {
        let spec = Self { grid, n1, n2, nt };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let g = &self.grid;
        let checks = [
            (1 <= self.nt && self.nt <= g.t, format!("1 <= Nt <= T violated: Nt={}, T={}", self.nt, g.t)),
            (1 <= self.n1 && self.n1 <= g.p, format!("1 <= N1 <= P violated: N1={}, P={}", self.n1, g.p)),
            (1 <= self.n2 && self.n2 <= g.q, format!("1 <= N2 <= Q violated: N2={}, Q={}", self.n2, g.q)),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::FilterSpec(msg));
            }
        }
        Ok(())
    }

    /// Valid spatial shifts along rows, `P − N1 + 1`.
    #[inline]
    pub fn m1(&self) -> usize {
        self.grid.p - self.n1 + 1
    }

    /// Valid spatial shifts along columns, `Q − N2 + 1`.
    #[inline]
    pub fn m2(&self) -> usize {
        self.grid.q - self.n2 + 1
    }

    /// Number of temporal output shifts, `T − Nt + 1`.
    #[inline]
    pub fn k(&self) -> usize {
        self.grid.t - self.nt + 1
    }

    /// `|Λ| = N1·N2·Nt`.
    #[inline]
    pub fn support_len(&self) -> usize {
        self.n1 * self.n2 * self.nt
    }
}

/// How spatial indices outside the grid are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Valid linear convolution in all three dimensions.
    Linear,
    /// Circular in space, linear in time.
    Hybrid,
}

/// Which spatial output shifts make up `Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// Every circular shift, `P × Q`.
    FullCircular,
    /// Only shifts whose footprint stays in bounds, `M1 × M2`.
    ValidLinear,
}

impl Restriction {
    pub fn natural(mode: ShiftMode) -> Self {
        match mode {
            ShiftMode::Linear => Restriction::ValidLinear,
            ShiftMode::Hybrid => Restriction::FullCircular,
        }
    }
}

/// The output shift set `Γ`: a spatial block times the temporal range `[Nt − 1, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftSet {
    pub x0: usize,
    pub mx: usize,
    pub y0: usize,
    pub my: usize,
    pub t0: usize,
    pub k: usize,
}

impl ShiftSet {
    pub fn new(spec: &FilterSpec, restriction: Restriction) -> Self {
        let g = &spec.grid;
        match restriction {
            Restriction::FullCircular => Self {
                x0: 0,
                mx: g.p,
                y0: 0,
                my: g.q,
                t0: spec.nt - 1,
                k: spec.k(),
            },
            Restriction::ValidLinear => Self {
                x0: spec.n1 - 1,
                mx: spec.m1(),
                y0: spec.n2 - 1,
                my: spec.m2(),
                t0: spec.nt - 1,
                k: spec.k(),
            },
        }
    }

    #[inline]
    pub fn spatial_len(&self) -> usize {
        self.mx * self.my
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.spatial_len() * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(x, y, t)` of a row.
    #[inline]
    pub fn coords(&self, row: usize) -> (usize, usize, usize) {
        let s = self.spatial_len();
        let (tau, rest) = (row / s, row % s);
        (self.x0 + rest / self.my, self.y0 + rest % self.my, self.t0 + tau)
    }

    /// Temporal partition of a row.
    #[inline]
    pub fn tau(&self, row: usize) -> usize {
        row / self.spatial_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Columns {
    /// `Λ = N1 × N2 × Nt`.
    Filter,
    /// Every circular spatial tap, `P × Q × Nt`.
    Periodic,
}

/// Index bookkeeping for one lifting variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lifting {
    spec: FilterSpec,
    rows: ShiftSet,
    wrap: bool,
    cols: Columns,
}

impl Lifting {
    /// The lifting of `spec` in `mode` with output shifts per `restriction`.
    pub fn new(spec: FilterSpec, mode: ShiftMode, restriction: Restriction) -> Result<Self> {
        spec.validate()?;
        if mode == ShiftMode::Linear && restriction == Restriction::FullCircular {
            return Err(Error::InvalidArgument(
                "linear mode has no circular shifts; use the valid_linear restriction".into(),
            ));
        }
        Ok(Self {
            spec,
            rows: ShiftSet::new(&spec, restriction),
            wrap: mode == ShiftMode::Hybrid,
            cols: Columns::Filter,
        })
    }

    /// Lifting whose columns cover every circular spatial tap while rows stay
    /// on `Γ`. This is the structure the IRLS solver penalizes: its Gram is
    /// the pure circulant block form, and its weighted normal operator
    /// diagonalizes under the spatial DFT.
    pub fn periodic(spec: FilterSpec, restriction: Restriction) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            rows: ShiftSet::new(&spec, restriction),
            wrap: true,
            cols: Columns::Periodic,
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn rows(&self) -> &ShiftSet {
        &self.rows
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    fn col_extent(&self) -> (usize, usize) {
        match self.cols {
            Columns::Filter => (self.spec.n1, self.spec.n2),
            Columns::Periodic => (self.spec.grid.p, self.spec.grid.q),
        }
    }

    pub fn ncols(&self) -> usize {
        let (a, b) = self.col_extent();
        a * b * self.spec.nt
    }

    /// `(lx, ly, lt)` of a column.
    #[inline]
    pub fn col_coords(&self, col: usize) -> (usize, usize, usize) {
        let (a, b) = self.col_extent();
        let s = a * b;
        let (lt, rest) = (col / s, col % s);
        (rest / b, rest % b, lt)
    }

    /// Volume index of `ρ̂[m − l]` for a row/column pair.
    #[inline]
    pub fn source(&self, row: usize, col: usize) -> usize {
        let g = &self.spec.grid;
        let (x, y, t) = self.rows.coords(row);
        let (lx, ly, lt) = self.col_coords(col);
        let (sx, sy) = if self.wrap {
            ((x + g.p - lx % g.p) % g.p, (y + g.q - ly % g.q) % g.q)
        } else {
            debug_assert!(x >= lx && y >= ly);
            (x - lx, y - ly)
        };
        g.index(sx, sy, t - lt)
    }

    fn check_volume(&self, rho: &KtVolume) -> Result<()> {
        if rho.grid() != &self.spec.grid {
            return Err(Error::Shape(format!(
                "volume grid {:?} does not match filter grid {:?}",
                rho.grid(),
                self.spec.grid
            )));
        }
        Ok(())
    }

    fn check_dense(&self) -> Result<()> {
        let needed = self.nrows().saturating_mul(self.ncols());
        if needed > DENSE_LIMIT {
            return Err(Error::SizeGuard {
                what: "explicit lifted matrix",
                needed,
                limit: DENSE_LIMIT,
                hint: "use the FFT operators in fastops instead",
            });
        }
        Ok(())
    }

    /// Forms the dense lifted matrix.
    pub fn build(&self, rho: &KtVolume) -> Result<LiftedMatrix> {
        self.check_volume(rho)?;
        self.check_dense()?;
        let data = rho.as_slice();
        let matrix = DMatrix::from_fn(self.nrows(), self.ncols(), |r, c| data[self.source(r, c)]);
        Ok(LiftedMatrix { lifting: *self, matrix })
    }

    /// Adjoint of `ρ̂ ↦ T(ρ̂)`: accumulates every entry of `y` onto the sample it was read from.
    pub fn adjoint(&self, y: &DMatrix<Complex64>) -> Result<KtVolume> {
        if y.nrows() != self.nrows() || y.ncols() != self.ncols() {
            return Err(Error::Shape(format!(
                "adjoint input is {}x{}, lifting is {}x{}",
                y.nrows(),
                y.ncols(),
                self.nrows(),
                self.ncols()
            )));
        }
        let mut out = KtVolume::zeros(self.spec.grid);
        let acc = out.as_mut_slice();
        for c in 0..self.ncols() {
            for r in 0..self.nrows() {
                acc[self.source(r, c)] += y[(r, c)];
            }
        }
        Ok(out)
    }
}

/// Dense `T(ρ̂)` together with the lifting that produced it.
#[derive(Debug, Clone)]
pub struct LiftedMatrix {
    pub lifting: Lifting,
    pub matrix: DMatrix<Complex64>,
}

impl LiftedMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `T(ρ̂)·vec(c)`, with `c` in column order.
    pub fn apply(&self, c: &[Complex64]) -> Result<Vec<Complex64>> {
        if c.len() != self.ncols() {
            return Err(Error::Shape(format!(
                "filter has {} taps, matrix has {} columns",
                c.len(),
                self.ncols()
            )));
        }
        let v = nalgebra::DVector::from_column_slice(c);
        Ok((&self.matrix * v).as_slice().to_vec())
    }
}

/// Extreme singular values and a numerical nullity estimate of `T(ρ̂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnihilationCertificate {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Number of filter-space directions with `σ < tol·σ_max`, including the
    /// `N − M` directions forced by a wide matrix.
    pub nullity_est: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Dense lifting in `mode` with its natural output shifts (valid for linear, circular for hybrid).
pub fn build_lifted(rho_hat: &KtVolume, spec: &FilterSpec, mode: ShiftMode) -> Result<LiftedMatrix> {
    Lifting::new(*spec, mode, Restriction::natural(mode))?.build(rho_hat)
}

/// Adjoint of [`build_lifted`] for the same `spec` and `mode`.
pub fn apply_lifted_adjoint(y: &DMatrix<Complex64>, spec: &FilterSpec, mode: ShiftMode) -> Result<KtVolume> {
    Lifting::new(*spec, mode, Restriction::natural(mode))?.adjoint(y)
}

/// Singular value certificate from a full SVD of the explicit lifted matrix.
pub fn annihilation_certificate(
    rho_hat: &KtVolume,
    spec: &FilterSpec,
    mode: ShiftMode,
    tol: f64,
) -> Result<AnnihilationCertificate> {
    let lifted = build_lifted(rho_hat, spec, mode)?;
    certificate_of(&lifted.matrix, tol)
}

/// Certificate for any explicit matrix, columns being the filter space.
pub fn certificate_of(matrix: &DMatrix<Complex64>, tol: f64) -> Result<AnnihilationCertificate> {
    let (m, n) = matrix.shape();
    let sv = matrix
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("SVD did not converge".into()))?
        .singular_values;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let sigma_min = if m >= n {
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let rank = sv.iter().filter(|&&s| s >= tol * sigma_max && s > 0.0).count();
    Ok(AnnihilationCertificate {
        sigma_min,
        sigma_max,
        nullity_est: n - rank,
        rows: m,
        cols: n,
    })
}
