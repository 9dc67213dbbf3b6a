//! Dense `f64` tensor math with explicit forward/backward passes.

mod adam;
mod gradcheck;
mod layers;
pub mod ops;
mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_grad, relative_error, FD_STEP};
pub use layers::{
    ForwardTrace, Gradients, Layer, LayerSpec, Sequential, TangentGradients, TangentTrace, INIT_STD,
};
pub use ops::{activation_forward, conv2d_forward, global_sum_pool, Activation};
pub use rng::{gaussian_sample, SeededRng};
pub use tensor::{matmul, Tensor};
