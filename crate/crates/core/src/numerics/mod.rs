//! Minimal differentiable-layer kit with hand-written backward passes.
//!
//! All math is `f64`. Layers expose two levels of API: slice-based kernels
//! used on hot paths (shape errors there are programmer errors and panic),
//! and shape-checked [`Tensor`] entry points that return [`crate::Result`].

mod conv;
mod dense;
mod gradcheck;
mod loss;
mod lstm;
mod optim;
mod params;
mod rng;
mod tensor;

pub use conv::{conv2d, conv2d_strided, ConvGeometry, Padding};
pub use dense::{dense, dense_backward, dense_forward};
pub use gradcheck::{conditioned_grad_check, grad_check, min_abs_gradient, GradCheckReport, MIN_CHECKED_GRADIENT};
pub use loss::{pearson, pearson_with_grad, softmax, softmax_xent, Pearson};
pub use lstm::{lstm_step, LstmCache, LstmCell};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind};
pub use params::{NamedArray, Param, ParamSet};
pub use rng::RngStream;
pub use tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
