//! Reverse-mode differentiation on a recorded tape, with the layers used by
//! the surrogate and the end-to-end models.

mod check;
mod graph;
mod params;
mod tensor;
mod volterra;

pub use check::{gradient_check, CoordinateCheck, GradientReport, CHECK_COORDINATES, FD_STEP, GRAD_FLOOR};
pub use graph::{sigmoid, softmax_rows, Gradients, Graph, Var};
pub use params::{AdamConfig, ParamStore};
pub use tensor::Tensor;
pub use volterra::{fit_volterra, volterra_apply, volterra_design, VolterraKernel};

/// Natural-log cross-entropy to bits.
pub fn nats_to_bits(ce: f64) -> f64 {
    ce / std::f64::consts::LN_2
}
