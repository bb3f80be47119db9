//! Primitive layer forward passes and their vector-Jacobian products.
//!
//! Every primitive is a pure function; convolutions additionally record the
//! multiply-accumulates they perform into an explicitly passed
//! [`MacCounter`](crate::tensor::MacCounter). Summation order is fixed and
//! deterministic (direct nested loops, no FFT or reassociation), so repeated
//! runs are bit-identical.

mod conv;
mod elementwise;
mod pool;

pub use conv::{
    conv2d, conv2d_vjp, conv_output_hw, depthwise_conv2d, depthwise_conv2d_vjp, pointwise_conv2d,
    pointwise_conv2d_vjp,
};
pub use elementwise::{
    add, add_vjp, affine_channels, affine_channels_vjp, bias_add, bias_add_vjp, concat_channels,
    concat_channels_vjp, mish, mish_vjp, resize_nearest, resize_nearest_vjp, scale_channels,
    scale_channels_vjp, sigmoid, sigmoid_vjp, split_channels,
};
pub use pool::{
    adaptive_avg_pool, adaptive_avg_pool_vjp, avg_pool_vjp, global_avg_pool, global_avg_pool_vjp,
    max_pool_vjp, pool2d, PoolKind,
};

/// Spatial padding policy for convolutions.
///
/// `Same` zero-pads symmetrically (the extra pixel of an odd total going to
/// the bottom/right) so the output extent is `ceil(in / stride)`. `Valid`
/// never pads.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Padding {
    Same,
    Valid,
}

pub(crate) struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

pub(crate) fn conv_geometry(
    in_h: usize,
    in_w: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> crate::Result<ConvGeometry> {
    match padding {
        Padding::Same => {
            let out_h = in_h.div_ceil(stride);
            let out_w = in_w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(in_h);
            let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(in_w);
            Ok(ConvGeometry {
                out_h,
                out_w,
                pad_top: pad_h / 2,
                pad_left: pad_w / 2,
            })
        }
        Padding::Valid => {
            if in_h < kernel || in_w < kernel {
                return Err(crate::Error::WindowTooLarge {
                    window: kernel,
                    height: in_h,
                    width: in_w,
                });
            }
            Ok(ConvGeometry {
                out_h: (in_h - kernel) / stride + 1,
                out_w: (in_w - kernel) / stride + 1,
                pad_top: 0,
                pad_left: 0,
            })
        }
    }
}
