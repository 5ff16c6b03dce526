//! Backprop-capable building blocks. Every layer follows the same shape:
//! construction registers parameters into a [`crate::ParamStore`] under a
//! dot-separated name prefix, `forward` is pure given a [`crate::Ctx`] and
//! returns the output plus an opaque cache, and `backward` consumes the cache
//! and accumulates parameter gradients into a [`crate::GradStore`] while
//! returning the input gradient.

mod act;
mod attention;
mod conv;
mod dropout;
mod linear;
mod norm;
mod pool;
mod softmax;

pub use act::{gelu, gelu_backward, relu, relu_backward, sigmoid, sigmoid_backward};
pub use attention::{AttnCache, MultiHeadSelfAttention};
pub use conv::{Conv2d, Conv2dCache};
pub use dropout::{Dropout, DropoutCache};
pub use linear::{Linear, LinearCache};
pub use norm::{BatchNorm2d, BnCache, LayerNorm, LayerNormCache};
pub use pool::{
    adaptive_avg_pool, adaptive_avg_pool_backward, global_avg_pool, global_avg_pool_backward,
    MaxPool2d, MaxPoolCache,
};
pub use softmax::{softmax_rows, softmax_rows_backward};
