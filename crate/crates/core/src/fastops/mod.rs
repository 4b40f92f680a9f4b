//! FFT implementations of the heavy kernels.
//!
//! All transforms run on the native `P × Q` grid without padding, so spatial
//! circularity is part of the model wherever these kernels are used.

mod conv;
mod gram;
mod normal;

pub use conv::hybrid_conv;
pub use gram::{
    assemble_gram, assemble_periodic_gram, cross_corr, periodization_error, CrossCorrArray, GramMatrix,
    GRAM_LIMIT,
};
pub use normal::{build_normal_multipliers, NormalMultipliers, NormalOperator};
