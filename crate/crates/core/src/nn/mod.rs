//! Minimal differentiable kernels for the patch encoder.

mod encoder;
mod gradcheck;
mod layers;
mod sgd;
mod tensor;

pub use encoder::{batch_tensor, ConvCache, ConvEncoder, EncoderPlan, HeadCache, Network, NetworkCache, ProjectionHead};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use layers::{gap, gap_backward, maxpool2, maxpool2_backward, relu, relu_backward, Conv2d, Linear, Pooled};
pub use sgd::{sgd_step, SgdConfig};
pub use tensor::{Parameters, Tensor};
pub(crate) use tensor::same_layout;
