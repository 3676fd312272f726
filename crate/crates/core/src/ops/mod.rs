//! Numerical kernels with explicit forward and backward passes.

pub mod channelwise;
pub mod conv;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod head;
pub mod norm;

pub use channelwise::{conv1d_channelwise, conv1d_channelwise_backward, Axis, ChannelwiseKernel};
pub use conv::{
    conv2d_spatial, conv2d_spatial_backward, conv_out_len, conv_pointwise, conv_pointwise_backward,
    subsample_spatial, subsample_spatial_backward, PointwiseWeights, SpatialWeights,
};
pub use gradcheck::{finite_diff_gradcheck, piecewise_gradcheck, relative_error, GradcheckReport};
pub use head::{
    global_avg_pool, global_avg_pool_backward, linear, linear_backward, softmax, softmax_xent, Features,
    LinearWeights,
};
pub use norm::{BatchNorm, NormCache, NormGrads, NormMode};

/// Gradients of one op: with respect to its input and, when it has any, its weights.
#[derive(Debug, Clone)]
pub struct GradPair<I, W = ()> {
    pub d_input: I,
    pub d_weights: W,
}
