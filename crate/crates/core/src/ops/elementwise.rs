use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[inline]
fn softplus<T: Real>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|}) never overflows.
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Mish activation, `x * tanh(softplus(x))`, elementwise. Counts zero MACs.
pub fn mish<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * softplus(v).tanh())
}

/// Gradient of [`mish`].
pub fn mish_vjp<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            context: "mish_vjp upstream gradient shape",
            left: grad_out.shape(),
            right: x.shape(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| {
            let t = softplus(v).tanh();
            let s = sigmoid_scalar(v);
            g * (t + v * (T::one() - t * t) * s)
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Logistic sigmoid, elementwise.
pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`].
pub fn sigmoid_vjp<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            context: "sigmoid_vjp upstream gradient shape",
            left: grad_out.shape(),
            right: x.shape(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| {
            let s = sigmoid_scalar(v);
            g * s * (T::one() - s)
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Nearest-neighbor resize; source index is `floor(dst * in / out)`.
pub fn resize_nearest<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if out_h == 0 {
        return Err(Error::InvalidDim {
            context: "resize out_h",
            value: out_h,
        });
    }
    if out_w == 0 {
        return Err(Error::InvalidDim {
            context: "resize out_w",
            value: out_w,
        });
    }
    let mut out = Tensor::zeros(Shape::new(xs.batch, xs.channels, out_h, out_w));
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            for oy in 0..out_h {
                let sy = oy * xs.height / out_h;
                for ox in 0..out_w {
                    let sx = ox * xs.width / out_w;
                    out.set(b, c, oy, ox, x.at(b, c, sy, sx));
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`resize_nearest`]: scatter-adds each upstream cell back to
/// the source cell it replicated.
pub fn resize_nearest_vjp<T: Real>(x_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    let mut gx = Tensor::zeros(x_shape);
    for b in 0..gs.batch {
        for c in 0..gs.channels {
            for oy in 0..gs.height {
                let sy = oy * x_shape.height / gs.height;
                for ox in 0..gs.width {
                    let sx = ox * x_shape.width / gs.width;
                    let i = x_shape.index(b, c, sy, sx);
                    gx.data_mut()[i] = gx.data_mut()[i] + grad_out.at(b, c, oy, ox);
                }
            }
        }
    }
    Ok(gx)
}

/// Concatenates along the channel axis, in argument order.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or(Error::EmptyInput("concat_channels"))?;
    let fs = first.shape();
    let mut channels = 0;
    for x in xs {
        let s = x.shape();
        if s.batch != fs.batch || s.height != fs.height || s.width != fs.width {
            return Err(Error::ShapeMismatch {
                context: "concat_channels batch/spatial dims",
                left: fs,
                right: s,
            });
        }
        channels += s.channels;
    }
    let out_shape = Shape::new(fs.batch, channels, fs.height, fs.width);
    let plane = fs.height * fs.width;
    let mut data = Vec::with_capacity(out_shape.volume());
    for b in 0..fs.batch {
        for x in xs {
            let s = x.shape();
            let start = b * s.channels * plane;
            data.extend_from_slice(&x.data()[start..start + s.channels * plane]);
        }
    }
    Tensor::new(out_shape, data)
}

/// Splits a tensor along channels into sections of the given widths; the
/// exact inverse of [`concat_channels`] at the recorded offsets.
pub fn split_channels<T: Real>(x: &Tensor<T>, sections: &[usize]) -> Result<Vec<Tensor<T>>> {
    let xs = x.shape();
    if sections.iter().sum::<usize>() != xs.channels {
        return Err(Error::Constraint {
            name: "split_channels",
            detail: alloc::format!(
                "section widths sum to {} but input has {} channels",
                sections.iter().sum::<usize>(),
                xs.channels
            ),
        });
    }
    let plane = xs.height * xs.width;
    let mut out = Vec::with_capacity(sections.len());
    let mut offset = 0;
    for &ch in sections {
        let shape = Shape::new(xs.batch, ch, xs.height, xs.width);
        let mut data = Vec::with_capacity(shape.volume());
        for b in 0..xs.batch {
            let start = (b * xs.channels + offset) * plane;
            data.extend_from_slice(&x.data()[start..start + ch * plane]);
        }
        out.push(Tensor::new(shape, data)?);
        offset += ch;
    }
    Ok(out)
}

/// Gradient of [`concat_channels`]: splits the upstream gradient back into
/// the input sections.
pub fn concat_channels_vjp<T: Real>(
    sections: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    split_channels(grad_out, sections)
}

/// Elementwise sum of identically shaped tensors.
pub fn add<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or(Error::EmptyInput("add"))?;
    let mut out = (*first).clone();
    for x in &xs[1..] {
        if x.shape() != out.shape() {
            return Err(Error::ShapeMismatch {
                context: "add operand shapes",
                left: out.shape(),
                right: x.shape(),
            });
        }
        for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
            *o = *o + v;
        }
    }
    Ok(out)
}

/// Gradient of [`add`]: the upstream gradient flows to every operand.
pub fn add_vjp<T: Real>(arity: usize, grad_out: &Tensor<T>) -> Vec<Tensor<T>> {
    (0..arity).map(|_| grad_out.clone()).collect()
}

/// Multiplies each channel of `x` by a per-(batch, channel) gate of shape
/// (b, c, 1, 1), as produced by a squeeze-excitation branch.
pub fn scale_channels<T: Real>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let gs = gate.shape();
    if gs.batch != xs.batch || gs.channels != xs.channels || gs.height != 1 || gs.width != 1 {
        return Err(Error::ShapeMismatch {
            context: "scale_channels gate must be (batch, channels, 1, 1)",
            left: xs,
            right: gs,
        });
    }
    let mut out = x.clone();
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            let g = gate.at(b, c, 0, 0);
            for y in 0..xs.height {
                for x2 in 0..xs.width {
                    let i = xs.index(b, c, y, x2);
                    out.data_mut()[i] = out.data_mut()[i] * g;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`scale_channels`] with respect to the input and the gate.
pub fn scale_channels_vjp<T: Real>(
    x: &Tensor<T>,
    gate: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let xs = x.shape();
    let mut gx = Tensor::zeros(xs);
    let mut gg = Tensor::zeros(gate.shape());
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            let g = gate.at(b, c, 0, 0);
            let mut acc = T::zero();
            for y in 0..xs.height {
                for x2 in 0..xs.width {
                    let i = xs.index(b, c, y, x2);
                    gx.data_mut()[i] = grad_out.data()[i] * g;
                    acc = acc + grad_out.data()[i] * x.data()[i];
                }
            }
            gg.set(b, c, 0, 0, acc);
        }
    }
    Ok((gx, gg))
}

fn check_per_channel<T: Real>(x: &Tensor<T>, p: &Tensor<T>, context: &'static str) -> Result<()> {
    let (xs, ps) = (x.shape(), p.shape());
    if ps.batch != 1 || ps.channels != xs.channels || ps.height != 1 || ps.width != 1 {
        return Err(Error::ShapeMismatch {
            context,
            left: xs,
            right: ps,
        });
    }
    Ok(())
}

/// Per-channel affine `x * scale[c] + shift[c]`; the inference-time form of a
/// folded normalization layer. Counts zero MACs.
pub fn affine_channels<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_per_channel(x, scale, "affine scale must be (1, channels, 1, 1)")?;
    check_per_channel(x, shift, "affine shift must be (1, channels, 1, 1)")?;
    let xs = x.shape();
    let mut out = x.clone();
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            let (sc, sh) = (scale.at(0, c, 0, 0), shift.at(0, c, 0, 0));
            for y in 0..xs.height {
                for x2 in 0..xs.width {
                    let i = xs.index(b, c, y, x2);
                    out.data_mut()[i] = x.data()[i] * sc + sh;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`affine_channels`] w.r.t. input, scale, and shift.
pub fn affine_channels_vjp<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let xs = x.shape();
    let mut gx = Tensor::zeros(xs);
    let mut gscale = Tensor::zeros(scale.shape());
    let mut gshift = Tensor::zeros(scale.shape());
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            let sc = scale.at(0, c, 0, 0);
            let mut acc_s = gscale.at(0, c, 0, 0);
            let mut acc_b = gshift.at(0, c, 0, 0);
            for y in 0..xs.height {
                for x2 in 0..xs.width {
                    let i = xs.index(b, c, y, x2);
                    gx.data_mut()[i] = grad_out.data()[i] * sc;
                    acc_s = acc_s + grad_out.data()[i] * x.data()[i];
                    acc_b = acc_b + grad_out.data()[i];
                }
            }
            gscale.set(0, c, 0, 0, acc_s);
            gshift.set(0, c, 0, 0, acc_b);
        }
    }
    Ok((gx, gscale, gshift))
}

/// Adds a per-channel bias of shape (1, channels, 1, 1). Counts zero MACs.
pub fn bias_add<T: Real>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    check_per_channel(x, bias, "bias must be (1, channels, 1, 1)")?;
    let xs = x.shape();
    let mut out = x.clone();
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            let bv = bias.at(0, c, 0, 0);
            for y in 0..xs.height {
                for x2 in 0..xs.width {
                    let i = xs.index(b, c, y, x2);
                    out.data_mut()[i] = out.data_mut()[i] + bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`bias_add`] w.r.t. input and bias.
pub fn bias_add_vjp<T: Real>(
    bias_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let gs = grad_out.shape();
    let mut gb = Tensor::zeros(bias_shape);
    for b in 0..gs.batch {
        for c in 0..gs.channels {
            let mut acc = gb.at(0, c, 0, 0);
            for y in 0..gs.height {
                for x2 in 0..gs.width {
                    acc = acc + grad_out.at(b, c, y, x2);
                }
            }
            gb.set(0, c, 0, 0, acc);
        }
    }
    Ok((grad_out.clone(), gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn mish_reference_values() {
        let x = Tensor::<f64>::new(Shape::new(1, 1, 1, 3), vec![0.0, 1.0, -20.0]).unwrap();
        let y = mish(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.8651).abs() < 1e-4);
        assert!((y.data()[2] - (-4.1e-8)).abs() < 1e-9);
    }

    #[test]
    fn mish_is_overflow_safe() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 1, 2), vec![200.0, -200.0]).unwrap();
        let y = mish(&x);
        assert!((y.data()[0] - 200.0).abs() < 1e-3);
        assert_eq!(y.data()[1], -0.0);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f64>::filled(Shape::new(1, 1, 1, 1), 0.0);
        assert_eq!(sigmoid(&x).data()[0], 0.5);
    }

    #[test]
    fn resize_doubles_by_replication() {
        let x = Tensor::<f64>::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = resize_nearest(&x, 4, 4).unwrap();
        let want = [
            1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn resize_same_size_is_identity_and_upsize_shape() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 13, 13), |_, c, y, x| {
            (c + y * 13 + x) as f64
        });
        assert_eq!(resize_nearest(&x, 13, 13).unwrap(), x);
        let y = resize_nearest(&x, 18, 18).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 18, 18));
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 4, 8, 8), |_, c, y, x| {
            (c * 64 + y * 8 + x) as f64
        });
        let b = Tensor::<f64>::from_fn(Shape::new(1, 12, 8, 8), |_, c, y, x| {
            -((c * 64 + y * 8 + x) as f64)
        });
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape::new(1, 16, 8, 8));
        let parts = split_channels(&cat, &[4, 12]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn add_zeros_is_identity() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 4, 4), |b, c, y, x| (b + c + y + x) as f64);
        let z = Tensor::<f64>::zeros(x.shape());
        assert_eq!(add(&[&x, &z]).unwrap(), x);
    }

    #[test]
    fn scale_channels_broadcasts_gate() {
        let x = Tensor::<f64>::filled(Shape::new(1, 2, 2, 2), 3.0);
        let g = Tensor::<f64>::new(Shape::new(1, 2, 1, 1), vec![0.5, 2.0]).unwrap();
        let y = scale_channels(&x, &g).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 1.5);
        assert_eq!(y.at(0, 1, 0, 0), 6.0);
    }

    #[test]
    fn affine_identity_params_are_inert() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 3, 2, 2), |_, c, y, x| {
            (c * 4 + y * 2 + x) as f64
        });
        let scale = Tensor::<f64>::filled(Shape::new(1, 3, 1, 1), 1.0);
        let shift = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
        assert_eq!(affine_channels(&x, &scale, &shift).unwrap(), x);
    }
}
