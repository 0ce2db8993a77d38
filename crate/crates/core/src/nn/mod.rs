//! Differentiable primitives: convolution, channel layer norm, abs-max
//! pooling, temporal attention, bilinear sampling, deformable convolution and
//! bilinear resizing.

pub mod attention;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod sampling;

pub use attention::{temporal_attention, temporal_attention_forward};
pub use conv::{conv2d, conv2d_forward};
pub use norm::layer_norm_channels;
pub use pool::{abs_max_pool, abs_max_pool_forward, PoolAxis};
pub use resize::{downsample2x_forward, resize_bilinear, resize_bilinear_forward, upsample2x};
pub use sampling::{
    bilinear_sample, bilinear_sample_forward, deformable_conv, deformable_conv_forward, BilinearTap,
};
