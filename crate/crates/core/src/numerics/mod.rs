//! Dense `f64` tensors, a reverse-mode tape, convolution kernels and the
//! finite-difference oracle used to check them.

pub mod conv;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use conv::{Conv2dSpec, Conv3dSpec};
pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use params::{Conv2dLayer, Conv3dLayer, LinearLayer, ParamId, ParamStore};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
