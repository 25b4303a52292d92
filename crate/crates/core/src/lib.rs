pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod io;
pub mod mamba;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod volume;

pub use autodiff::{ParamStore, Tape, Var};
pub use error::TensorError;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
