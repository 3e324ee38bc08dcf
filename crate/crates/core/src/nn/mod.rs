//! Hand-differentiated kernels and the optimizer used to build the network.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod grad_check;
pub mod linear;
pub mod loss;
mod real;
mod tensor;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use adam::{adam_step, AdamConfig, LrSchedule, Parameter};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvOpts};
pub use grad_check::{check_gradient, check_gradient_at, grad_check, GradCheck, GradCheckReport};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{smooth_l1, smooth_l1_vec2, weighted_bce, weighted_bce_with_logits};
pub use real::{gemm, Real};
pub use tensor::{concat_channels, split_channels, Tensor};
