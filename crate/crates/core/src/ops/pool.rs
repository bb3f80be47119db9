use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Pooling flavor for [`pool2d`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Windowed pooling with independent window and stride, valid-style extents.
pub fn pool2d<T: Real>(
    x: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if window == 0 {
        return Err(Error::InvalidDim {
            context: "pool window",
            value: window,
        });
    }
    if stride == 0 {
        return Err(Error::InvalidDim {
            context: "pool stride",
            value: stride,
        });
    }
    if window > xs.height || window > xs.width {
        return Err(Error::WindowTooLarge {
            window,
            height: xs.height,
            width: xs.width,
        });
    }
    let out_h = (xs.height - window) / stride + 1;
    let out_w = (xs.width - window) / stride + 1;
    let inv_area = T::from_f64(1.0 / (window * window) as f64);
    let mut out = Tensor::zeros(Shape::new(xs.batch, xs.channels, out_h, out_w));
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let v = match kind {
                        PoolKind::Max => {
                            let mut best = x.at(b, c, y0, x0);
                            for ky in 0..window {
                                for kx in 0..window {
                                    let v = x.at(b, c, y0 + ky, x0 + kx);
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                            best
                        }
                        PoolKind::Avg => {
                            let mut sum = T::zero();
                            for ky in 0..window {
                                for kx in 0..window {
                                    sum = sum + x.at(b, c, y0 + ky, x0 + kx);
                                }
                            }
                            sum * inv_area
                        }
                    };
                    out.set(b, c, oy, ox, v);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of average pooling: each window spreads its upstream gradient
/// uniformly over the cells it covered.
pub fn avg_pool_vjp<T: Real>(
    x_shape: Shape,
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    let inv_area = T::from_f64(1.0 / (window * window) as f64);
    let mut gx = Tensor::zeros(x_shape);
    for b in 0..gs.batch {
        for c in 0..gs.channels {
            for oy in 0..gs.height {
                for ox in 0..gs.width {
                    let g = grad_out.at(b, c, oy, ox) * inv_area;
                    for ky in 0..window {
                        for kx in 0..window {
                            let i = x_shape.index(b, c, oy * stride + ky, ox * stride + kx);
                            gx.data_mut()[i] = gx.data_mut()[i] + g;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Gradient of max pooling; ties route to the first maximum in scan order,
/// matching the forward pass.
pub fn max_pool_vjp<T: Real>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let gs = grad_out.shape();
    let mut gx = Tensor::zeros(xs);
    for b in 0..gs.batch {
        for c in 0..gs.channels {
            for oy in 0..gs.height {
                for ox in 0..gs.width {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let (mut by, mut bx) = (y0, x0);
                    let mut best = x.at(b, c, y0, x0);
                    for ky in 0..window {
                        for kx in 0..window {
                            let v = x.at(b, c, y0 + ky, x0 + kx);
                            if v > best {
                                best = v;
                                by = y0 + ky;
                                bx = x0 + kx;
                            }
                        }
                    }
                    let i = xs.index(b, c, by, bx);
                    gx.data_mut()[i] = gx.data_mut()[i] + grad_out.at(b, c, oy, ox);
                }
            }
        }
    }
    Ok(gx)
}

#[inline]
fn bin_edges(i: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    (i * in_dim / out_dim, (i + 1) * in_dim / out_dim)
}

/// Adaptive average pooling: each output axis partitions the input axis into
/// `out` contiguous near-equal bins and averages within each bin.
pub fn adaptive_avg_pool<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if out_h == 0 || out_h > xs.height {
        return Err(Error::InvalidDim {
            context: "adaptive pool out_h",
            value: out_h,
        });
    }
    if out_w == 0 || out_w > xs.width {
        return Err(Error::InvalidDim {
            context: "adaptive pool out_w",
            value: out_w,
        });
    }
    let mut out = Tensor::zeros(Shape::new(xs.batch, xs.channels, out_h, out_w));
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            for oy in 0..out_h {
                let (y0, y1) = bin_edges(oy, xs.height, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = bin_edges(ox, xs.width, out_w);
                    let mut sum = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            sum = sum + x.at(b, c, y, xx);
                        }
                    }
                    let area = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    out.set(b, c, oy, ox, sum / area);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`adaptive_avg_pool`].
pub fn adaptive_avg_pool_vjp<T: Real>(x_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    let mut gx = Tensor::zeros(x_shape);
    for b in 0..gs.batch {
        for c in 0..gs.channels {
            for oy in 0..gs.height {
                let (y0, y1) = bin_edges(oy, x_shape.height, gs.height);
                for ox in 0..gs.width {
                    let (x0, x1) = bin_edges(ox, x_shape.width, gs.width);
                    let area = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    let g = grad_out.at(b, c, oy, ox) / area;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let i = x_shape.index(b, c, y, xx);
                            gx.data_mut()[i] = gx.data_mut()[i] + g;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Global mean per channel, keeping the rank-4 layout as (b, c, 1, 1).
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let xs = x.shape();
    let inv = T::from_f64(1.0 / (xs.height * xs.width) as f64);
    let mut out = Tensor::zeros(Shape::new(xs.batch, xs.channels, 1, 1));
    for b in 0..xs.batch {
        for c in 0..xs.channels {
            let mut sum = T::zero();
            for y in 0..xs.height {
                for x2 in 0..xs.width {
                    sum = sum + x.at(b, c, y, x2);
                }
            }
            out.set(b, c, 0, 0, sum * inv);
        }
    }
    out
}

/// Gradient of [`global_avg_pool`].
pub fn global_avg_pool_vjp<T: Real>(x_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    let expected = Shape::new(x_shape.batch, x_shape.channels, 1, 1);
    if gs != expected {
        return Err(Error::ShapeMismatch {
            context: "global_avg_pool_vjp upstream gradient shape",
            left: gs,
            right: expected,
        });
    }
    let inv = T::from_f64(1.0 / (x_shape.height * x_shape.width) as f64);
    let mut gx = Tensor::zeros(x_shape);
    for b in 0..x_shape.batch {
        for c in 0..x_shape.channels {
            let g = grad_out.at(b, c, 0, 0) * inv;
            for y in 0..x_shape.height {
                for x2 in 0..x_shape.width {
                    let i = x_shape.index(b, c, y, x2);
                    gx.data_mut()[i] = g;
                }
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avg_pool_of_constant_is_constant() {
        let x = Tensor::<f32>::filled(Shape::new(1, 3, 8, 8), 2.5);
        let y = pool2d(&x, PoolKind::Avg, 2, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 4, 4));
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn max_pool_two_by_two() {
        let x =
            Tensor::<f64>::new(Shape::new(1, 1, 2, 2), alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pool2d(&x, PoolKind::Max, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn adaptive_to_one_is_global_mean() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| {
            (c * 9 + y * 3 + x) as f64
        });
        let y = adaptive_avg_pool(&x, 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 1, 0, 0), 13.0);
        assert_eq!(y, global_avg_pool(&x));
    }

    #[test]
    fn adaptive_rejects_zero_or_growing_dims() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4));
        assert!(adaptive_avg_pool(&x, 0, 2).is_err());
        assert!(adaptive_avg_pool(&x, 2, 5).is_err());
    }

    #[test]
    fn pool_window_must_fit() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        assert_eq!(
            pool2d(&x, PoolKind::Max, 4, 1).unwrap_err(),
            Error::WindowTooLarge {
                window: 4,
                height: 3,
                width: 3
            }
        );
    }

    #[test]
    fn adaptive_halving_partitions_evenly() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, _| y as f64);
        let y = adaptive_avg_pool(&x, 2, 2).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), 0.5);
        assert_eq!(y.at(0, 0, 1, 0), 2.5);
    }
}
