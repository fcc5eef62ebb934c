//! Local context normalization.
//!
//! Per-position feature normalization over a spatial window and a channel
//! group, with window statistics read from summed-area tables so the cost
//! does not depend on the window size. Alongside it: the global
//! normalizations (batch, layer, instance, group), Gaussian local response
//! normalization, analytic backward passes, slow reference implementations
//! and a benchmark harness.

pub mod bench;
pub mod cli;
pub mod error;
pub mod grad;
pub mod integral;
pub mod norms;
pub mod oracle;
pub mod tensor;
pub mod verify;
pub mod window;

pub use error::{LcnError, Result};
pub use grad::{lcn_backward, reference_backward, GradBundle};
pub use integral::{box_sums_all, build_integral, Integral3};
pub use norms::{
    affine, bn_forward, gn_forward, in_forward, lcn_forward, ln_forward, lrn_forward, AffineParams,
    LcnConfig, LrnConfig, NormStats, ReferenceNorm, RunningStats,
};
pub use tensor::{fill_random, read_tensor, write_tensor, DType, Dims, Distribution, Tensor4};
pub use window::{Boundary, WindowMode};
