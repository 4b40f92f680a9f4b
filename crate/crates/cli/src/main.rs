use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exprec_cli::commands::{self, Context, Status};
use exprec_cli::{CliError, ExperimentConfig, Method, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE};

/// Exponential k-t reconstruction experiments.
#[derive(Debug, Parser)]
#[command(name = "exprec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, env = "EXPREC_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the phantom series and true T2 maps.
    Phantom(Common),
    /// Write the sampling mask.
    Mask(Common),
    /// Write phantom, T2 maps, coils, mask and measurements.
    Simulate(Common),
    /// Reconstruct from simulated measurements.
    Recon {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Fit T2 maps to a reconstruction.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Tabulate SNR, NRMSE and T2 error of every reconstruction.
    Eval(Common),
    /// Render PGM images of magnitudes, T2 maps and T2 errors.
    Render(Common),
    /// simulate, recon, fit, eval and render in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Methods to run; all of them by default.
        #[arg(long, value_enum, value_delimiter = ',')]
        method: Vec<Method>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Phantom(c) | Command::Mask(c) | Command::Simulate(c) | Command::Eval(c) | Command::Render(c) => c,
            Command::Recon { common, .. } | Command::Fit { common, .. } | Command::Pipeline { common, .. } => common,
        }
    }
}

fn run(cmd: Command) -> Result<Status, CliError> {
    let common = cmd.common();
    if let Some(n) = common.threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    }
    let cfg = ExperimentConfig::load(&common.config)?;
    let ctx = Context::new(cfg, common.out.as_deref(), common.seed)?;
    match &cmd {
        Command::Phantom(_) => commands::cmd_phantom(&ctx).map(|_| Status::Done),
        Command::Mask(_) => commands::cmd_mask(&ctx).map(|_| Status::Done),
        Command::Simulate(_) => commands::cmd_simulate(&ctx).map(|_| Status::Done),
        Command::Recon { method, .. } => commands::cmd_recon(&ctx, *method),
        Command::Fit { method, .. } => {
            let map = commands::cmd_fit(&ctx, *method)?;
            if map.flagged_count() > 0 || map.dropped > 0 {
                eprintln!("{} fits clamped, {} pixels dropped", map.flagged_count(), map.dropped);
            }
            Ok(Status::Done)
        }
        Command::Eval(_) => {
            for row in commands::cmd_eval(&ctx)? {
                println!("{:<9} snr {:>7.2} dB  nrmse {:.4e}  T2 MAE {:.3} ms", row.label, row.snr_db, row.nrmse, row.t2_mae_ms);
            }
            Ok(Status::Done)
        }
        Command::Render(_) => commands::cmd_render(&ctx).map(|_| Status::Done),
        Command::Pipeline { method, .. } => {
            let methods = if method.is_empty() { Method::ALL.to_vec() } else { method.clone() };
            commands::cmd_pipeline(&ctx, &methods)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_OK as u8 });
        }
    };
    match std::panic::catch_unwind(|| run(cli.command)) {
        Ok(Ok(Status::Done)) => ExitCode::SUCCESS,
        Ok(Ok(Status::NotConverged)) => {
            eprintln!("exprec: iteration cap reached before convergence");
            ExitCode::from(exprec_cli::EXIT_NOT_CONVERGED as u8)
        }
        Ok(Err(e)) => {
            eprintln!("exprec: {e}");
            ExitCode::from(e.code as u8)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL as u8),
    }
}
