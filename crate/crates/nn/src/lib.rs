//! Small tape-based autodiff engine with the handful of ops needed by
//! convolutional segmentation networks, GAN generators and patch
//! discriminators. All math is generic over [`Scalar`] so the same network
//! code trains in `f32` and is gradient-checked in `f64`.

pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{NnError, Result};
pub use layers::{Conv2d, Linear};
pub use optim::{poly_lr, Adam};
pub use params::{add_grads, Bound, ParamRef, ParamSet};
pub use scalar::Scalar;
pub use tape::{sigmoid, Grads, Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
