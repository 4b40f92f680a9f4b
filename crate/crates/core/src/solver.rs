//! Schatten-p IRLS reconstruction.
//!
//! Each outer iteration computes the weight `H = (R + εI)^{p/2−1}` from the
//! Gram of the current estimate, factors it as `H = Σ_i h_i* h_i`, and then
//! solves the weighted least-squares problem
//! `min (1/2) Σ_i ‖h_i T(ρ̂)‖² + (λ/2) ‖𝒜ρ̂ − b‖²` by conjugate gradients.
//!
//! The regularizer is evaluated on the periodic lifting (spatial taps over
//! the whole grid). Its Gram is exactly the circulant form assembled from
//! frame correlations and its normal operator diagonalizes under the spatial
//! DFT, so both halves of the iteration see the same matrix and the smoothed
//! objective decreases monotonically.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fastops::{assemble_periodic_gram, build_normal_multipliers, NormalOperator};
use crate::ktcore::{Grid, KtVolume};
use crate::lifting::{FilterSpec, Restriction, ShiftSet};
use crate::linalg::{axpy, dot, norm};
use crate::simulate::Measurements;

/// Initial smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Eps0 {
    /// `λ_max(R_0) / 100`.
    #[default]
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AutoTag {
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Eps0Repr {
    Tag(AutoTag),
    Value(f64),
}

impl Serialize for Eps0 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Eps0::Auto => Eps0Repr::Tag(AutoTag::Auto),
            Eps0::Value(v) => Eps0Repr::Value(v),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Eps0 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Eps0Repr::deserialize(d)? {
            Eps0Repr::Tag(AutoTag::Auto) => Eps0::Auto,
            Eps0Repr::Value(v) => Eps0::Value(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub p: f64,
    pub lambda: f64,
    pub eps0: Eps0,
    pub eps_decay: f64,
    /// Floor for ε; `None` means `1e−9·λ_max(R_0)`.
    pub eps_min: Option<f64>,
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    /// Relative change of the smoothed objective that ends the iteration.
    pub stop_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: 0.6,
            lambda: 1.0,
            eps0: Eps0::Auto,
            eps_decay: 0.25,
            eps_min: None,
            outer_iters: 30,
            cg_iters: 200,
            cg_tol: 1e-8,
            stop_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.p > 0.0 && self.p <= 2.0) {
            return bad(format!("p = {} outside (0, 2]", self.p));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        if let Eps0::Value(e) = self.eps0 {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eps0 = {e} must be positive"));
            }
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return bad(format!("eps_decay = {} outside (0, 1)", self.eps_decay));
        }
        if let Some(e) = self.eps_min {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eps_min = {e} must be positive"));
            }
        }
        if self.outer_iters == 0 || self.cg_iters == 0 {
            return bad("outer_iters and cg_iters must be at least 1".into());
        }
        if !(self.cg_tol > 0.0 && self.stop_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn cg(&self) -> CgConfig {
        CgConfig {
            max_iters: self.cg_iters,
            tol: self.cg_tol,
        }
    }
}

/// `(1/p) Σ σ_i^p`.
pub fn schatten_cost(sv: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(Error::InvalidArgument(format!("p = {p} outside (0, 2]")));
    }
    if let Some(&s) = sv.iter().find(|&&s| s < 0.0 || s.is_nan()) {
        return Err(Error::NegativeSingularValue(s));
    }
    Ok(sv.iter().map(|s| s.powf(p)).sum::<f64>() / p)
}

/// The factored IRLS weight: `H = Σ_i h_i* h_i` with one filter per row.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub grid: Grid,
    pub rows: ShiftSet,
    /// `M × |Γ|`, row `i` is `h_i`.
    pub filters: DMatrix<Complex64>,
    /// Eigenvalues of the Gram the filters came from (empty if supplied directly).
    pub eigenvalues: Vec<f64>,
    pub eps: f64,
}

impl WeightSet {
    pub fn from_filters(grid: Grid, rows: ShiftSet, filters: DMatrix<Complex64>) -> Self {
        Self {
            grid,
            rows,
            filters,
            eigenvalues: Vec::new(),
            eps: 0.0,
        }
    }

    /// No filters: the regularizer vanishes.
    pub fn empty(grid: Grid, rows: ShiftSet) -> Self {
        Self::from_filters(grid, rows, DMatrix::zeros(0, rows.len()))
    }

    /// `H[a, b] = Σ_i conj(h_i[a]) h_i[b]`.
    pub fn weight_matrix(&self) -> DMatrix<Complex64> {
        self.filters.ad_mul(&self.filters)
    }

    pub fn is_empty(&self) -> bool {
        self.filters.nrows() == 0
    }
}

/// Hermitian eigendecomposition, PSD-checked.
/// Eigenvalues within `−1e−8·λ_max` of zero are clamped to zero.
pub fn psd_eigen(r: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let eig = SymmetricEigen::try_new(r.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen(format!("no convergence on a {}x{} Gram", r.nrows(), r.ncols())))?;
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let max = vals.iter().cloned().fold(0.0, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-8 * max {
        return Err(Error::NotPsd { min, max });
    }
    Ok((vals.into_iter().map(|v| v.max(0.0)).collect(), eig.eigenvectors))
}

/// Rows of `(Λ + εI)^{p/4−1/2} U*` for `R = UΛU*`.
pub fn gram_power_filters(eigenvalues: &[f64], vectors: &DMatrix<Complex64>, p: f64, eps: f64) -> Result<DMatrix<Complex64>> {
    let n = eigenvalues.len();
    let mut filters = vectors.adjoint();
    for (i, &l) in eigenvalues.iter().enumerate() {
        let s = (l + eps).powf(p / 4.0 - 0.5);
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight (λ + ε)^(p/4 − 1/2) is infinite at λ = {l}, ε = {eps}"
            )));
        }
        for j in 0..n {
            filters[(i, j)] *= s;
        }
    }
    Ok(filters)
}

/// `(1/p) Σ_j (λ_j + ε)^{p/2}`.
pub fn smoothed_regularizer(eigenvalues: &[f64], p: f64, eps: f64) -> f64 {
    eigenvalues.iter().map(|l| (l + eps).powf(p / 2.0)).sum::<f64>() / p
}

/// IRLS weights for the estimate `rho_hat`.
pub fn weight_update(rho_hat: &KtVolume, spec: &FilterSpec, p: f64, eps: f64) -> Result<WeightSet> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(Error::InvalidArgument(format!("p = {p} outside (0, 2]")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be >= 0")));
    }
    let gram = assemble_periodic_gram(rho_hat, spec, Restriction::ValidLinear)?;
    let (vals, vecs) = psd_eigen(&gram.matrix)?;
    let filters = gram_power_filters(&vals, &vecs, p, eps)?;
    Ok(WeightSet {
        grid: spec.grid,
        rows: gram.rows,
        filters,
        eigenvalues: vals,
        eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    /// Final `‖b − Ax‖ / ‖b‖`.
    pub rel_residual: f64,
}

/// Conjugate gradients for a Hermitian positive semidefinite operator.
pub fn conjugate_gradient(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    x0: Vec<Complex64>,
    cfg: &CgConfig,
) -> Result<CgOutcome> {
    let bnorm = norm(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut x = x0;
    let ax = apply(&x);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rr = dot(&r, &r).re;
    let rr0 = rr;
    if bnorm == 0.0 && rr == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut d = r.clone();
    let mut growth = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iters && rr.sqrt() > cfg.tol * scale {
        let ad = apply(&d);
        let curvature = dot(&d, &ad).re;
        if curvature <= 0.0 {
            break;
        }
        let alpha = rr / curvature;
        axpy(&mut x, Complex64::new(alpha, 0.0), &d);
        axpy(&mut r, Complex64::new(-alpha, 0.0), &ad);
        let rr_new = dot(&r, &r).re;
        iterations += 1;
        if !rr_new.is_finite() {
            return Err(Error::Divergence {
                solver: "conjugate gradients",
                iteration: iterations,
                residual: rr_new,
                iterate: x,
            });
        }
        growth = if rr_new > rr { growth + 1 } else { 0 };
        // residuals oscillate on plateaus; divergence is sustained growth past the start
        if growth >= 10 && rr_new > rr0 {
            return Err(Error::Divergence {
                solver: "conjugate gradients",
                iteration: iterations,
                residual: rr_new.sqrt(),
                iterate: x,
            });
        }
        let beta = rr_new / rr;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + *di * beta;
        }
        rr = rr_new;
    }
    Ok(CgOutcome {
        x,
        iterations,
        rel_residual: rr.sqrt() / scale,
    })
}

/// Normal operator of the weighted regularizer, or `None` for empty weights.
pub fn regularizer_operator(weights: &WeightSet, spec: &FilterSpec) -> Result<Option<NormalOperator>> {
    if weights.is_empty() {
        if weights.grid != spec.grid {
            return Err(Error::Shape("weights and filter grids differ".into()));
        }
        return Ok(None);
    }
    Ok(Some(build_normal_multipliers(weights, spec)?.operator()))
}

#[derive(Debug, Clone)]
pub struct LsOutcome {
    pub rho_hat: KtVolume,
    pub cg_iters: usize,
    pub rel_residual: f64,
}

/// Solves `(Σ_i A_i*A_i + λ𝒜*𝒜) ρ̂ = λ𝒜*b` from `warm_start`.
pub fn ls_update(
    weights: &WeightSet,
    spec: &FilterSpec,
    meas: &Measurements,
    lambda: f64,
    warm_start: &KtVolume,
    cg: &CgConfig,
) -> Result<LsOutcome> {
    let grid = *meas.grid();
    if spec.grid != grid || *warm_start.grid() != grid {
        return Err(Error::Shape("spec, measurements and warm start grids differ".into()));
    }
    let reg = regularizer_operator(weights, spec)?;
    let apply = |x: &[Complex64]| -> Vec<Complex64> {
        let v = KtVolume::new(grid, x.to_vec()).expect("length fixed by grid");
        let mut out = meas.normal(&v).into_vec();
        out.iter_mut().for_each(|o| *o *= lambda);
        if let Some(op) = &reg {
            out.iter_mut().zip(op.apply(x)).for_each(|(o, g)| *o += g);
        }
        out
    };
    let mut rhs = meas.zero_filled().into_vec();
    rhs.iter_mut().for_each(|v| *v *= lambda);
    let res = conjugate_gradient(apply, &rhs, warm_start.as_slice().to_vec(), cg)?;
    Ok(LsOutcome {
        rho_hat: KtVolume::new(grid, res.x)?,
        cg_iters: res.iterations,
        rel_residual: res.rel_residual,
    })
}

/// One outer iteration of the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub eps: f64,
    /// `F_ε(ρ̂_n)` at this iteration's ε.
    pub objective: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub cg_iters: usize,
    pub seconds: f64,
    /// `F_ε(ρ̂_{n−1})` at the same ε, the value the iteration started from.
    #[serde(skip)]
    pub objective_start: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub records: Vec<IterRecord>,
    pub converged: bool,
}

impl SolveReport {
    /// One row per outer iteration; `config_hash`, when given, fills an extra column.
    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut out = String::from("iter,eps,objective,data_term,reg_term,cg_iters,seconds");
        if config_hash.is_some() {
            out.push_str(",config_hash");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:e},{:e},{:e},{:e},{},{:.6}",
                r.iter, r.eps, r.objective, r.data_term, r.reg_term, r.cg_iters, r.seconds
            );
            if let Some(h) = config_hash {
                let _ = write!(out, ",{h}");
            }
            out.push('\n');
        }
        out
    }
}

struct Spectrum {
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
}

fn spectrum(rho: &KtVolume, spec: &FilterSpec) -> Result<Spectrum> {
    let gram = assemble_periodic_gram(rho, spec, Restriction::ValidLinear)?;
    let (values, vectors) = psd_eigen(&gram.matrix)?;
    Ok(Spectrum { values, vectors })
}

/// Runs IRLS from the zero-filled estimate.
pub fn irls_solve(meas: &Measurements, spec: &FilterSpec, cfg: &SolverConfig) -> Result<(KtVolume, SolveReport)> {
    cfg.validate()?;
    spec.validate()?;
    if spec.grid != *meas.grid() {
        return Err(Error::Shape("filter and measurement grids differ".into()));
    }
    let rows = ShiftSet::new(spec, Restriction::ValidLinear);
    let mut rho = meas.zero_filled();
    let mut spec_now = spectrum(&rho, spec)?;
    let lmax = spec_now.values.iter().cloned().fold(0.0, f64::max);
    let mut report = SolveReport::default();
    if lmax == 0.0 {
        // zero data: the zero volume is optimal
        report.converged = true;
        return Ok((rho, report));
    }
    let mut eps = match cfg.eps0 {
        Eps0::Auto => lmax / 100.0,
        Eps0::Value(v) => v,
    };
    let eps_min = cfg.eps_min.unwrap_or(1e-9 * lmax);
    let data_term = |x: &KtVolume| 0.5 * cfg.lambda * meas.residual_sqr(x);
    let cg = cfg.cg();
    let mut previous: Option<f64> = None;

    for iter in 1..=cfg.outer_iters {
        let started = Instant::now();
        let filters = gram_power_filters(&spec_now.values, &spec_now.vectors, cfg.p, eps)?;
        let objective_start = smoothed_regularizer(&spec_now.values, cfg.p, eps) + data_term(&rho);
        let weights = WeightSet {
            grid: spec.grid,
            rows,
            filters,
            eigenvalues: spec_now.values.clone(),
            eps,
        };
        let ls = ls_update(&weights, spec, meas, cfg.lambda, &rho, &cg)?;
        rho = ls.rho_hat;
        spec_now = spectrum(&rho, spec)?;
        let reg_term = smoothed_regularizer(&spec_now.values, cfg.p, eps);
        let data = data_term(&rho);
        let objective = reg_term + data;
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: iter });
        }
        report.records.push(IterRecord {
            iter,
            eps,
            objective,
            data_term: data,
            reg_term,
            cg_iters: ls.cg_iters,
            seconds: started.elapsed().as_secs_f64(),
            objective_start,
        });
        if let Some(prev) = previous {
            if (prev - objective).abs() <= cfg.stop_tol * objective.abs() {
                report.converged = true;
                break;
            }
        }
        previous = Some(objective);
        eps = (eps * cfg.eps_decay).max(eps_min);
    }
    Ok((rho, report))
}
