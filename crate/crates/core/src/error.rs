use std::path::PathBuf;

/// Errors raised by the reconstruction library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at index {index:?} ({what})")]
    NonFinite { what: &'static str, index: Vec<usize> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid filter spec: {0}")]
    FilterSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size guard exceeded: {what} needs {needed} entries, limit is {limit}; {hint}")]
    SizeGuard {
        what: &'static str,
        needed: usize,
        limit: usize,
        hint: &'static str,
    },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("gram matrix is not positive semidefinite: min eigenvalue {min:e}, max {max:e}")]
    NotPsd { min: f64, max: f64 },

    #[error("negative singular value {0:e}")]
    NegativeSingularValue(f64),

    #[error("{solver} diverged at iteration {iteration}: residual grew for 10 consecutive steps (last {residual:e})")]
    Divergence {
        solver: &'static str,
        iteration: usize,
        residual: f64,
        iterate: Vec<num_complex::Complex64>,
    },

    #[error("non-finite objective at outer iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("payload size mismatch in {path}: header implies {expected} bytes, found {found}")]
    PayloadSizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("malformed header in {path}: {detail}")]
    Header { path: PathBuf, detail: String },

    #[error("dtype mismatch: expected {expected}, found {found}")]
    Dtype { expected: &'static str, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
