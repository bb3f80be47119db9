use alloc::vec;

use super::{conv_geometry, Padding};
use crate::error::{Error, Result};
use crate::tensor::{MacCounter, Real, Shape, Tensor};

/// Output spatial extent of a convolution over an `in_h x in_w` input.
pub fn conv_output_hw(
    in_h: usize,
    in_w: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let g = conv_geometry(in_h, in_w, kernel, stride, padding)?;
    Ok((g.out_h, g.out_w))
}

fn check_kernel_stride(kernel: usize, stride: usize) -> Result<()> {
    if kernel % 2 == 0 {
        return Err(Error::EvenKernel { kernel });
    }
    if stride != 1 && stride != 2 {
        return Err(Error::UnsupportedStride { stride });
    }
    Ok(())
}

/// Dense 2-d convolution (cross-correlation orientation, no kernel flip).
///
/// `weights` is laid out (out_channels, in_channels, k, k). Zero padding is
/// materialized as multiplies against zero, so the counter advances by
/// exactly `out_h * out_w * in_ch * k^2 * out_ch` per batch item.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
    counter: &mut MacCounter,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weights.shape();
    let k = ws.height;
    if ws.width != k {
        return Err(Error::ShapeMismatch {
            context: "conv2d kernel must be square",
            left: ws,
            right: ws,
        });
    }
    check_kernel_stride(k, stride)?;
    if ws.channels != xs.channels {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels vs weight in-channels",
            left: xs,
            right: ws,
        });
    }
    let g = conv_geometry(xs.height, xs.width, k, stride, padding)?;
    let (cin, cout) = (xs.channels, ws.batch);
    let (ih, iw) = (xs.height as isize, xs.width as isize);
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![T::zero(); xs.batch * cout * g.out_h * g.out_w];
    let mut macs: u64 = 0;
    for b in 0..xs.batch {
        for oc in 0..cout {
            for oy in 0..g.out_h {
                let iy0 = (oy * stride) as isize - g.pad_top as isize;
                for ox in 0..g.out_w {
                    let ix0 = (ox * stride) as isize - g.pad_left as isize;
                    let mut acc = T::zero();
                    for ic in 0..cin {
                        for ky in 0..k {
                            let iy = iy0 + ky as isize;
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                let v = if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                                    xd[((b * cin + ic) * xs.height + iy as usize) * xs.width
                                        + ix as usize]
                                } else {
                                    T::zero()
                                };
                                let w = wd[((oc * cin + ic) * k + ky) * k + kx];
                                acc = acc + w * v;
                                macs += 1;
                            }
                        }
                    }
                    out[((b * cout + oc) * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
    counter.add(macs);
    Tensor::new(Shape::new(xs.batch, cout, g.out_h, g.out_w), out)
}

/// Gradients of [`conv2d`] with respect to the input and the weights.
pub fn conv2d_vjp<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let xs = x.shape();
    let ws = weights.shape();
    let k = ws.height;
    check_kernel_stride(k, stride)?;
    let g = conv_geometry(xs.height, xs.width, k, stride, padding)?;
    let expected = Shape::new(xs.batch, ws.batch, g.out_h, g.out_w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "conv2d_vjp upstream gradient shape",
            left: grad_out.shape(),
            right: expected,
        });
    }
    let (cin, cout) = (xs.channels, ws.batch);
    let (ih, iw) = (xs.height as isize, xs.width as isize);
    let xd = x.data();
    let wd = weights.data();
    let gd = grad_out.data();
    let mut gx = Tensor::zeros(xs);
    let mut gw = Tensor::zeros(ws);
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    for b in 0..xs.batch {
        for oc in 0..cout {
            for oy in 0..g.out_h {
                let iy0 = (oy * stride) as isize - g.pad_top as isize;
                for ox in 0..g.out_w {
                    let ix0 = (ox * stride) as isize - g.pad_left as isize;
                    let go = gd[((b * cout + oc) * g.out_h + oy) * g.out_w + ox];
                    for ic in 0..cin {
                        for ky in 0..k {
                            let iy = iy0 + ky as isize;
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                                    let xi = ((b * cin + ic) * xs.height + iy as usize) * xs.width
                                        + ix as usize;
                                    let wi = ((oc * cin + ic) * k + ky) * k + kx;
                                    gxd[xi] = gxd[xi] + wd[wi] * go;
                                    gwd[wi] = gwd[wi] + xd[xi] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw))
}

/// Per-channel (depthwise) convolution. `weights` is laid out
/// (in_channels * multiplier, 1, k, k); output channel `c * multiplier + m`
/// depends only on input channel `c`. The counter advances by
/// `out_h * out_w * in_ch * multiplier * k^2` per batch item.
pub fn depthwise_conv2d<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
    counter: &mut MacCounter,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weights.shape();
    let k = ws.height;
    if ws.width != k {
        return Err(Error::ShapeMismatch {
            context: "depthwise kernel must be square",
            left: ws,
            right: ws,
        });
    }
    check_kernel_stride(k, stride)?;
    if ws.channels != 1 || ws.batch % xs.channels != 0 {
        return Err(Error::ShapeMismatch {
            context: "depthwise weights must be (in_ch * multiplier, 1, k, k)",
            left: xs,
            right: ws,
        });
    }
    let mult = ws.batch / xs.channels;
    let g = conv_geometry(xs.height, xs.width, k, stride, padding)?;
    let cin = xs.channels;
    let cout = cin * mult;
    let (ih, iw) = (xs.height as isize, xs.width as isize);
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![T::zero(); xs.batch * cout * g.out_h * g.out_w];
    let mut macs: u64 = 0;
    for b in 0..xs.batch {
        for ic in 0..cin {
            for m in 0..mult {
                let oc = ic * mult + m;
                for oy in 0..g.out_h {
                    let iy0 = (oy * stride) as isize - g.pad_top as isize;
                    for ox in 0..g.out_w {
                        let ix0 = (ox * stride) as isize - g.pad_left as isize;
                        let mut acc = T::zero();
                        for ky in 0..k {
                            let iy = iy0 + ky as isize;
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                let v = if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                                    xd[((b * cin + ic) * xs.height + iy as usize) * xs.width
                                        + ix as usize]
                                } else {
                                    T::zero()
                                };
                                acc = acc + wd[(oc * k + ky) * k + kx] * v;
                                macs += 1;
                            }
                        }
                        out[((b * cout + oc) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
    }
    counter.add(macs);
    Tensor::new(Shape::new(xs.batch, cout, g.out_h, g.out_w), out)
}

/// Gradients of [`depthwise_conv2d`].
pub fn depthwise_conv2d_vjp<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let xs = x.shape();
    let ws = weights.shape();
    let k = ws.height;
    check_kernel_stride(k, stride)?;
    let mult = ws.batch / xs.channels;
    let g = conv_geometry(xs.height, xs.width, k, stride, padding)?;
    let cin = xs.channels;
    let cout = cin * mult;
    let expected = Shape::new(xs.batch, cout, g.out_h, g.out_w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "depthwise_vjp upstream gradient shape",
            left: grad_out.shape(),
            right: expected,
        });
    }
    let (ih, iw) = (xs.height as isize, xs.width as isize);
    let xd = x.data();
    let wd = weights.data();
    let gd = grad_out.data();
    let mut gx = Tensor::zeros(xs);
    let mut gw = Tensor::zeros(ws);
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    for b in 0..xs.batch {
        for ic in 0..cin {
            for m in 0..mult {
                let oc = ic * mult + m;
                for oy in 0..g.out_h {
                    let iy0 = (oy * stride) as isize - g.pad_top as isize;
                    for ox in 0..g.out_w {
                        let ix0 = (ox * stride) as isize - g.pad_left as isize;
                        let go = gd[((b * cout + oc) * g.out_h + oy) * g.out_w + ox];
                        for ky in 0..k {
                            let iy = iy0 + ky as isize;
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                                    let xi = ((b * cin + ic) * xs.height + iy as usize) * xs.width
                                        + ix as usize;
                                    let wi = (oc * k + ky) * k + kx;
                                    gxd[xi] = gxd[xi] + wd[wi] * go;
                                    gwd[wi] = gwd[wi] + xd[xi] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw))
}

/// 1x1 convolution mixing channels at each pixel; `weights` is
/// (out_channels, in_channels, 1, 1). Counter delta is `h * w * in_ch *
/// out_ch` per batch item.
pub fn pointwise_conv2d<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    counter: &mut MacCounter,
) -> Result<Tensor<T>> {
    let ws = weights.shape();
    if ws.height != 1 || ws.width != 1 {
        return Err(Error::ShapeMismatch {
            context: "pointwise weights must be (out_ch, in_ch, 1, 1)",
            left: x.shape(),
            right: ws,
        });
    }
    conv2d(x, weights, 1, Padding::Valid, counter)
}

/// Gradients of [`pointwise_conv2d`].
pub fn pointwise_conv2d_vjp<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    conv2d_vjp(x, weights, 1, Padding::Valid, grad_out)
}
