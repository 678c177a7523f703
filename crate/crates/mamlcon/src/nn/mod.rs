//! Numerics core: tensors, named parameters, layer rules, Adam, and the
//! finite-difference oracle.
//!
//! Everything in this module is a pure function of its inputs; values are
//! plain data that can be cloned and moved between threads freely.

mod adam;
mod gradcheck;
mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use ops::{conv2d_forward, forward_pass, model_backward, softmax_cross_entropy, LayerSpec, Tape};
pub use params::{GradientSet, ParameterSet};
pub use tensor::Tensor;
