//! The subcommands, callable in-process.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use exprec_core::ktcore::{dft2_forward, dft2_inverse};
use exprec_core::mapping::{fit_t2, nrmse, recon_ktlowrank, recon_zerofill, snr_db, t2_mae, MetricsRow, T2Map};
use exprec_core::simulate::{
    forward, make_coils, make_mask, make_phantom, mean_sampled_magnitude, Measurements, Phantom, SamplingMask,
};
use exprec_core::solver::{irls_solve, SolveReport};
use exprec_core::{Grid, ImageSeries, KtVolume};

use crate::config::ExperimentConfig;
use crate::files::{self, OutDir};
use crate::pgm::{self, Window};
use crate::{CliError, CliResult};

/// Reconstruction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Method {
    /// IRLS on the structured low-rank penalty.
    Proposed,
    /// Nuclear norm of the Casorati matrix.
    Ktlr,
    /// Adjoint of the sampling operator.
    Zerofill,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Zerofill, Method::Ktlr, Method::Proposed];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Ktlr => "ktlr",
            Method::Zerofill => "zerofill",
        }
    }

    pub fn recon_file(self) -> String {
        format!("recon_{}.ktar", self.name())
    }

    pub fn report_file(self) -> String {
        format!("report_{}.csv", self.name())
    }

    pub fn t2_file(self) -> String {
        format!("t2_{}.ktar", self.name())
    }

    pub fn wall_file(self) -> String {
        format!("wall_{}.txt", self.name())
    }
}

/// Whether a command ran to completion or stopped at an iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    NotConverged,
}

impl Status {
    pub fn and(self, other: Status) -> Status {
        if self == Status::Done && other == Status::Done {
            Status::Done
        } else {
            Status::NotConverged
        }
    }
}

/// A loaded config with overrides applied and its output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: OutDir,
}

impl Context {
    pub fn new(mut cfg: ExperimentConfig, out: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        if let Some(out) = out {
            cfg.output_dir = out.to_path_buf();
        }
        let out = OutDir::create(&cfg.output_dir, &cfg.hash())?;
        Ok(Self { cfg, out })
    }

    pub fn grid(&self) -> Grid {
        self.cfg.grid
    }

    fn measurements(&self) -> CliResult<Measurements> {
        let g = self.grid();
        let coils = self.out.read_coils(files::COILS, g, self.cfg.coils)?;
        let mask = self.read_mask()?;
        let b = self.out.read_meas(files::MEAS, g, self.cfg.coils)?;
        Ok(Measurements::new(b, mask, coils, self.noise_sigma_hint())?)
    }

    /// Absolute noise level; unknown (NaN) once only the noisy data remain
    /// of a relative setting.
    fn noise_sigma_hint(&self) -> f64 {
        if self.cfg.noise.relative {
            f64::NAN
        } else {
            self.cfg.noise.sigma
        }
    }

    fn read_mask(&self) -> CliResult<SamplingMask> {
        self.out
            .read_mask(files::MASK, self.grid(), self.cfg.mask.clone(), self.cfg.mask_seed())
    }

    fn truth_series(&self) -> CliResult<ImageSeries> {
        self.out.read_series(files::PHANTOM, self.grid())
    }

    /// Ground-truth T2 on the phantom support. Multi-component phantoms
    /// are referenced to the mono-exponential fit of the true series.
    pub fn truth_t2(&self) -> CliResult<T2Map> {
        let g = self.grid();
        let maps = self.out.read_maps(files::T2_TRUE, g)?;
        let support: Vec<bool> = (0..g.frame_len()).map(|r| maps.iter().any(|m| m[r] > 0.0)).collect();
        if maps.len() == 1 {
            let truth = self.truth_series()?;
            return Ok(T2Map {
                p: g.p,
                q: g.q,
                amp: (0..g.frame_len()).map(|r| truth.frame(0)[r].norm()).collect(),
                t2: maps[0].clone(),
                flagged: vec![false; g.frame_len()],
                support,
                dropped: 0,
            });
        }
        Ok(fit_t2(&self.truth_series()?, &g.echo_times(), &support)?)
    }

    fn support(&self) -> CliResult<Vec<bool>> {
        Ok(self.truth_t2()?.support)
    }

    fn fitted(&self, method: Method) -> CliResult<T2Map> {
        let g = self.grid();
        let support = self.support()?;
        if self.out.exists(&method.t2_file()) {
            let t2 = self.out.read_maps(&method.t2_file(), g)?.swap_remove(0);
            return Ok(T2Map {
                p: g.p,
                q: g.q,
                amp: vec![0.0; t2.len()],
                flagged: vec![false; t2.len()],
                dropped: support.iter().zip(&t2).filter(|(&s, &v)| s && v == 0.0).count(),
                support: support.iter().zip(&t2).map(|(&s, &v)| s && v > 0.0).collect(),
                t2,
            });
        }
        let rec = self.out.read_volume(&method.recon_file(), g)?;
        Ok(fit_t2(&dft2_inverse(&rec)?, &g.echo_times(), &support)?)
    }
}

/// Writes `phantom.ktar` and `t2_true.ktar`.
pub fn cmd_phantom(ctx: &Context) -> CliResult<Phantom> {
    let ph = make_phantom(&ctx.cfg.phantom_spec(), ctx.cfg.phantom_seed())?;
    ctx.out.write_series(files::PHANTOM, &ph.series)?;
    let t2: Vec<Vec<f64>> = ph
        .t2_maps
        .iter()
        .map(|m| m.iter().zip(&ph.support).map(|(&v, &s)| if s { v } else { 0.0 }).collect())
        .collect();
    ctx.out.write_maps(files::T2_TRUE, ctx.grid(), &t2)?;
    Ok(ph)
}

/// Writes `mask.ktar`.
pub fn cmd_mask(ctx: &Context) -> CliResult<SamplingMask> {
    let mask = make_mask(ctx.grid(), &ctx.cfg.mask, ctx.cfg.mask_seed())?;
    ctx.out.write_mask(files::MASK, &mask)?;
    Ok(mask)
}

/// Writes the phantom, true T2 maps, coils, mask and noisy measurements.
pub fn cmd_simulate(ctx: &Context) -> CliResult<Measurements> {
    let g = ctx.grid();
    let ph = cmd_phantom(ctx)?;
    let mask = cmd_mask(ctx)?;
    let coils = make_coils(g, ctx.cfg.coils, ctx.cfg.coil_seed())?;
    ctx.out.write_coils(files::COILS, &coils)?;
    let rho_hat = ph.kt();
    let sigma = if ctx.cfg.noise.relative {
        let clean = forward(&rho_hat, &coils, &mask)?;
        ctx.cfg.noise.sigma * mean_sampled_magnitude(&clean, &mask)
    } else {
        ctx.cfg.noise.sigma
    };
    let meas = Measurements::simulate(&rho_hat, coils, mask, sigma, ctx.cfg.noise_seed())?;
    ctx.out.write_meas(files::MEAS, g, ctx.cfg.coils, &meas.b)?;
    Ok(meas)
}

/// Reconstructs with `method`, writing `recon_<m>.ktar`, `report_<m>.csv`
/// and the wall time in `wall_<m>.txt`.
pub fn cmd_recon(ctx: &Context, method: Method) -> CliResult<Status> {
    let meas = ctx.measurements()?;
    let start = Instant::now();
    let (rec, report, status) = match method {
        Method::Zerofill => {
            let rec = recon_zerofill(&meas);
            (rec, String::from("iter,objective\n"), Status::Done)
        }
        Method::Ktlr => {
            let (rec, trace) = recon_ktlowrank(&meas, &ctx.cfg.ktlr)?;
            let mut csv = String::from("iter,objective\n");
            for (i, obj) in trace.iter().enumerate() {
                let _ = writeln!(csv, "{},{:e}", i + 1, obj);
            }
            (rec, csv, Status::Done)
        }
        Method::Proposed => {
            let spec = ctx.cfg.filter_spec()?;
            let (rec, report): (KtVolume, SolveReport) = irls_solve(&meas, &spec, &ctx.cfg.solver)?;
            let status = if report.converged {
                Status::Done
            } else {
                Status::NotConverged
            };
            (rec, report.to_csv(Some(&ctx.out.hash)), status)
        }
    };
    let wall = start.elapsed().as_secs_f64();
    ctx.out.write_volume(&method.recon_file(), &rec)?;
    let report = if method == Method::Proposed {
        report
    } else {
        stamp_csv(&report, &ctx.out.hash)
    };
    ctx.out.write_text(&method.report_file(), &report)?;
    ctx.out.write_text(&method.wall_file(), &format!("{wall:.6}\n"))?;
    Ok(status)
}

fn stamp_csv(csv: &str, hash: &str) -> String {
    let mut lines = csv.lines();
    let mut out = format!("{},config_hash\n", lines.next().unwrap_or_default());
    for l in lines {
        let _ = writeln!(out, "{l},{hash}");
    }
    out
}

/// Fits T2 on the reconstruction of `method`, writing `t2_<m>.ktar`
/// (f64 `[1, P, Q]`, zero off the support and where the fit was dropped).
pub fn cmd_fit(ctx: &Context, method: Method) -> CliResult<T2Map> {
    let g = ctx.grid();
    let rec = ctx.out.read_volume(&method.recon_file(), g)?;
    let map = fit_t2(&dft2_inverse(&rec)?, &g.echo_times(), &ctx.support()?)?;
    ctx.out.write_maps(&method.t2_file(), g, std::slice::from_ref(&map.t2))?;
    Ok(map)
}

/// One metrics row per available reconstruction, written to `metrics.csv`.
pub fn cmd_eval(ctx: &Context) -> CliResult<Vec<MetricsRow>> {
    let g = ctx.grid();
    let truth = dft2_forward(&ctx.truth_series()?)?;
    let truth_t2 = ctx.truth_t2()?;
    let mut rows = Vec::new();
    let mut csv = String::from("label,snr_db,nrmse,t2_mae_ms,wall_seconds,config_hash\n");
    for method in Method::ALL {
        if !ctx.out.exists(&method.recon_file()) {
            continue;
        }
        let rec = ctx.out.read_volume(&method.recon_file(), g)?;
        let row = MetricsRow {
            label: method.name().to_string(),
            snr_db: snr_db(truth.as_slice(), rec.as_slice())?,
            nrmse: nrmse(truth.as_slice(), rec.as_slice())?,
            t2_mae_ms: t2_mae(&truth_t2, &ctx.fitted(method)?)?,
        };
        let wall = std::fs::read_to_string(ctx.out.path(&method.wall_file())).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.label,
            row.snr_db,
            row.nrmse,
            row.t2_mae_ms,
            wall.trim(),
            ctx.out.hash
        );
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("no reconstructions in {}", ctx.out.root.display())));
    }
    ctx.out.write_text(files::METRICS, &csv)?;
    Ok(rows)
}

fn render_one(ctx: &Context, name: &str, quantity: &str, values: &[f64], window: Window) -> CliResult<()> {
    let g = ctx.grid();
    let comments = [format!("config_hash {}", ctx.out.hash), format!("quantity {quantity}")];
    ctx.out
        .write_bytes(&format!("{name}.pgm"), &pgm::encode(g.p, g.q, values, window, &comments))?;
    ctx.out
        .write_text(&format!("{name}.txt"), &pgm::sidecar(window, quantity, &ctx.out.hash))
}

/// Renders magnitude frames, T2 maps and T2 error maps for the ground truth
/// and every available reconstruction. Returns the image names written.
pub fn cmd_render(ctx: &Context) -> CliResult<Vec<String>> {
    let g = ctx.grid();
    let r = &ctx.cfg.render;
    let truth = ctx.truth_series()?;
    let truth_t2 = ctx.truth_t2()?;
    let frames = if r.frames.is_empty() {
        if g.t > 1 {
            vec![0, g.t - 1]
        } else {
            vec![0]
        }
    } else {
        r.frames.clone()
    };
    let mag_max = r
        .magnitude_max
        .unwrap_or_else(|| truth.as_slice().iter().map(|v| v.norm()).fold(0.0, f64::max));
    let mag_window = Window::new(0.0, mag_max);
    let t2_window = Window::new(r.t2_window_ms[0], r.t2_window_ms[1]);
    let err_window = Window::new(0.0, r.t2_error_max_ms);

    let mut written = Vec::new();
    let series_images = |label: &str, series: &ImageSeries, written: &mut Vec<String>| -> CliResult<()> {
        for &n in &frames {
            let name = format!("mag_{label}_f{n:02}");
            let mags: Vec<f64> = series.frame(n).iter().map(|v| v.norm()).collect();
            render_one(ctx, &name, &format!("magnitude frame {n}"), &mags, mag_window)?;
            written.push(name);
        }
        Ok(())
    };
    series_images("truth", &truth, &mut written)?;
    let masked = |m: &T2Map| -> Vec<f64> {
        m.t2.iter()
            .zip(&truth_t2.support)
            .map(|(&v, &s)| if s { v } else { 0.0 })
            .collect()
    };
    render_one(ctx, "t2_truth", "T2 ms", &masked(&truth_t2), t2_window)?;
    written.push("t2_truth".into());
    for method in Method::ALL {
        if !ctx.out.exists(&method.recon_file()) {
            continue;
        }
        let label = method.name();
        let rec = dft2_inverse(&ctx.out.read_volume(&method.recon_file(), g)?)?;
        series_images(label, &rec, &mut written)?;
        let est = ctx.fitted(method)?;
        render_one(ctx, &format!("t2_{label}"), "T2 ms", &masked(&est), t2_window)?;
        let err: Vec<f64> = (0..g.frame_len())
            .map(|i| {
                if truth_t2.support[i] {
                    (est.t2[i] - truth_t2.t2[i]).abs()
                } else {
                    0.0
                }
            })
            .collect();
        render_one(ctx, &format!("t2err_{label}"), "|T2 error| ms", &err, err_window)?;
        written.push(format!("t2_{label}"));
        written.push(format!("t2err_{label}"));
    }
    Ok(written)
}

/// Simulate, reconstruct with each of `methods`, fit, evaluate and render.
pub fn cmd_pipeline(ctx: &Context, methods: &[Method]) -> CliResult<Status> {
    cmd_simulate(ctx)?;
    let mut status = Status::Done;
    for &m in methods {
        status = status.and(cmd_recon(ctx, m)?);
        cmd_fit(ctx, m)?;
    }
    cmd_eval(ctx)?;
    cmd_render(ctx)?;
    Ok(status)
}
