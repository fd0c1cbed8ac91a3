//! Directly modulated laser link simulation and end-to-end optimisation.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops
// mirror the matrix formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod app;
pub mod diff;
pub mod dsp;
pub mod e2e;
pub mod error;
pub mod io;
pub mod laser;
pub mod linalg;
pub mod link;
pub mod surrogate;
pub mod waveform;

pub use error::{Error, Result};
