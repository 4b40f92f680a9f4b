//! Experiment configuration files.

use std::path::{Path, PathBuf};

use exprec_core::lifting::FilterSpec;
use exprec_core::mapping::KtlrConfig;
use exprec_core::simulate::{MaskSpec, PhantomKind, PhantomSpec};
use exprec_core::solver::SolverConfig;
use exprec_core::Grid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSize {
    pub n1: usize,
    pub n2: usize,
    pub nt: usize,
}

/// Measurement noise. With `relative`, `sigma` is a fraction of the mean
/// magnitude of the clean sampled data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub relative: bool,
}

/// Display windows for rendered images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Frames rendered as magnitude images; empty means first and last.
    pub frames: Vec<usize>,
    /// Upper end of the magnitude window; absent means the largest ground-truth magnitude.
    pub magnitude_max: Option<f64>,
    pub t2_window_ms: [f64; 2],
    pub t2_error_max_ms: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            frames: Vec::new(),
            magnitude_max: None,
            t2_window_ms: [0.0, 250.0],
            t2_error_max_ms: 20.0,
        }
    }
}

fn default_coils() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub phantom: PhantomKind,
    #[serde(default = "default_coils")]
    pub coils: usize,
    pub mask: MaskSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub filter: FilterSize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub ktlr: KtlrConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses and validates a JSON document; errors carry the JSON path.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::data(format!("config error at {}: {}", json_pointer(e.path()), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let at = |field: &str, e: exprec_core::Error| CliError::data(format!("config error at /{field}: {e}"));
        self.grid.validate().map_err(|e| at("grid", e))?;
        self.filter_spec().map_err(|e| at("filter", e))?;
        self.mask.validate(&self.grid).map_err(|e| at("mask", e))?;
        self.solver.validate().map_err(|e| at("solver", e))?;
        if self.coils == 0 {
            return Err(CliError::data("config error at /coils: need at least one coil"));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(CliError::data("config error at /noise/sigma: must be >= 0"));
        }
        if !(self.ktlr.mu >= 0.0) || self.ktlr.iters == 0 {
            return Err(CliError::data("config error at /ktlr: need mu >= 0 and iters >= 1"));
        }
        if let Some(&f) = self.render.frames.iter().find(|&&f| f >= self.grid.t) {
            return Err(CliError::data(format!("config error at /render/frames: frame {f} out of range")));
        }
        Ok(())
    }

    pub fn filter_spec(&self) -> exprec_core::Result<FilterSpec> {
        FilterSpec::new(self.grid, self.filter.n1, self.filter.n2, self.filter.nt)
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            grid: self.grid,
            kind: self.phantom.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace),
    /// excluding the output directory so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn phantom_seed(&self) -> u64 {
        self.seed
    }

    pub fn coil_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn mask_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }
}

/// RFC 6901 rendering of a deserializer path, `/grid/t` style.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
