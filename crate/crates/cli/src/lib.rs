//! Experiment pipeline behind the `exprec` binary.
//!
//! Every command reads an [`ExperimentConfig`] and works inside one output
//! directory: `simulate` writes the ground truth and measurements, `recon`
//! reconstructs with one method, `fit` estimates T2 maps, `eval` tabulates
//! metrics and `render` writes 16-bit PGM images. All result files carry the
//! config hash.

pub mod commands;
pub mod config;
pub mod files;
pub mod pgm;

use std::fmt;

pub use commands::Method;
pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_INTERNAL: i32 = 70;

/// A failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<exprec_core::Error> for CliError {
    fn from(e: exprec_core::Error) -> Self {
        use exprec_core::Error as E;
        let code = match &e {
            E::Divergence { .. } | E::NonFiniteObjective { .. } | E::Eigen(_) | E::NotPsd { .. } => EXIT_INTERNAL,
            E::Io(io) if io.kind() != std::io::ErrorKind::NotFound => EXIT_INTERNAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
