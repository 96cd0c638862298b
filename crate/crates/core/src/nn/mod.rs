//! Small differentiable core: NCHW tensors, convolution, batch
//! (re)normalization, activations, losses, Adam and gradient checking.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod norm;
pub mod ops;
pub mod param;
pub mod tensor;

pub use activation::{leaky_relu, sigmoid, softmax, LeakyRelu, LEAKY_SLOPE};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use conv::Conv2d;
pub use gradcheck::GradReport;
pub use layers::{ConvBlock, ResidualUnit};
pub use loss::{focal_sigmoid, focal_softmax, sum_squared, DEFAULT_GAMMA};
pub use norm::{NormMode, NormState, Phase};
pub use param::{Module, Param, Slot};
pub use tensor::{Scalar, Tensor};
