//! Forward kernels and their adjoints. The public functions here are pure and
//! usable without a tape; [`crate::autodiff::Tape`] wires them into the graph.

pub mod activation;
pub mod conv;
pub mod conv1d;
pub mod linear;
pub mod norm;
pub mod shape;

pub use activation::{leaky_relu, silu, softplus, LEAKY_SLOPE};
pub use conv::{conv3d, conv_transpose3d};
pub use conv1d::depthwise_conv1d_causal;
pub use linear::linear;
pub use norm::{instance_norm, layer_norm, NormStats, DEFAULT_EPS};
pub use shape::{concat_channels, softmax_channels, transpose_last2};
