//! Pure numeric kernels behind the tape ops.
//!
//! These functions operate on raw `f64` slices plus explicit shapes so the
//! same code serves the autodiff tape, the packed-kernel oracles and the
//! finite-difference test harness.

pub mod conv;
pub mod norm;
pub mod pool;

pub use conv::{conv2d_out_shape, ConvSpec};
