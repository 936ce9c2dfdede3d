//! Reverse-mode automatic differentiation over dense `f64` matrices.

mod adam;
mod array;
mod gradcheck;
pub mod nn;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use array::NdArray;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, MAGNITUDE_FLOOR};
pub use params::{
    read_manifest, CheckpointManifest, Gradients, ModelParams, ParamEntry, ParamId, CHECKPOINT_FORMAT_VERSION,
};
pub use tape::{log_sum_exp, sigmoid, softmax, Tape, Var};

/// Default finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
