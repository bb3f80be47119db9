//! Reverse-mode gradient tape.
//!
//! A [`GradTape`] records primitive applications eagerly: each method runs
//! the forward primitive, stores its result, and returns a [`Var`] handle.
//! [`GradTape::backward`] then replays the recording in reverse topological
//! order exactly once, accumulating gradients into every leaf (inputs and
//! parameters). Taking the tape by value means a consumed tape cannot be
//! replayed a second time.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, Padding, PoolKind};
use crate::tensor::{MacCounter, Real, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

enum TapeOp {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        stride: usize,
        padding: Padding,
    },
    Depthwise {
        x: Var,
        w: Var,
        stride: usize,
        padding: Padding,
    },
    Pointwise {
        x: Var,
        w: Var,
    },
    BiasAdd {
        x: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Mish {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        window: usize,
        stride: usize,
    },
    AdaptiveAvgPool {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    ResizeNearest {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Add {
        xs: Vec<Var>,
    },
    ScaleChannels {
        x: Var,
        gate: Var,
    },
}

/// Gradients produced by [`GradTape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the seeded scalar loss with respect to `v`, if `v`
    /// contributed to it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Eagerly evaluated recording of a forward pass.
pub struct GradTape<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<TapeOp>,
    counter: MacCounter,
}

impl<T: Real> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GradTape<T> {
    pub fn new() -> Self {
        GradTape {
            values: Vec::new(),
            ops: Vec::new(),
            counter: MacCounter::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: TapeOp) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Registers an input or parameter tensor as a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, TapeOp::Leaf)
    }

    /// The recorded value of `v`.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    /// MACs accumulated by primitives recorded on this tape.
    pub fn macs(&self) -> u64 {
        self.counter.total()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let y = ops::conv2d(
            &self.values[x.0],
            &self.values[w.0],
            stride,
            padding,
            &mut self.counter,
        )?;
        Ok(self.push(
            y,
            TapeOp::Conv {
                x,
                w,
                stride,
                padding,
            },
        ))
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let y = ops::depthwise_conv2d(
            &self.values[x.0],
            &self.values[w.0],
            stride,
            padding,
            &mut self.counter,
        )?;
        Ok(self.push(
            y,
            TapeOp::Depthwise {
                x,
                w,
                stride,
                padding,
            },
        ))
    }

    pub fn pointwise_conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = ops::pointwise_conv2d(&self.values[x.0], &self.values[w.0], &mut self.counter)?;
        Ok(self.push(y, TapeOp::Pointwise { x, w }))
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let y = ops::bias_add(&self.values[x.0], &self.values[b.0])?;
        Ok(self.push(y, TapeOp::BiasAdd { x, b }))
    }

    pub fn affine_channels(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let y = ops::affine_channels(
            &self.values[x.0],
            &self.values[scale.0],
            &self.values[shift.0],
        )?;
        Ok(self.push(y, TapeOp::Affine { x, scale, shift }))
    }

    pub fn mish(&mut self, x: Var) -> Var {
        let y = ops::mish(&self.values[x.0]);
        self.push(y, TapeOp::Mish { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(&self.values[x.0]);
        self.push(y, TapeOp::Sigmoid { x })
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let y = ops::pool2d(&self.values[x.0], kind, window, stride)?;
        Ok(self.push(
            y,
            TapeOp::Pool {
                x,
                kind,
                window,
                stride,
            },
        ))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::adaptive_avg_pool(&self.values[x.0], out_h, out_w)?;
        Ok(self.push(y, TapeOp::AdaptiveAvgPool { x }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = ops::global_avg_pool(&self.values[x.0]);
        self.push(y, TapeOp::GlobalAvgPool { x })
    }

    pub fn resize_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::resize_nearest(&self.values[x.0], out_h, out_w)?;
        Ok(self.push(y, TapeOp::ResizeNearest { x }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|v| &self.values[v.0]).collect();
        let y = ops::concat_channels(&tensors)?;
        Ok(self.push(y, TapeOp::Concat { xs: xs.to_vec() }))
    }

    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|v| &self.values[v.0]).collect();
        let y = ops::add(&tensors)?;
        Ok(self.push(y, TapeOp::Add { xs: xs.to_vec() }))
    }

    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let y = ops::scale_channels(&self.values[x.0], &self.values[gate.0])?;
        Ok(self.push(y, TapeOp::ScaleChannels { x, gate }))
    }

    /// Reverse pass. Each `(var, seed)` pair seeds the recorded output `var`
    /// with an upstream gradient (for a scalar loss `sum(seed * value)`).
    /// Consumes the tape; leaf gradients are retained in the result,
    /// intermediate gradients are dropped once propagated.
    pub fn backward(mut self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        for (v, seed) in seeds {
            if seed.shape() != self.values[v.0].shape() {
                return Err(Error::ShapeMismatch {
                    context: "backward seed shape",
                    left: seed.shape(),
                    right: self.values[v.0].shape(),
                });
            }
            accumulate(&mut grads[v.0], seed);
        }
        for i in (0..self.ops.len()).rev() {
            let op = core::mem::replace(&mut self.ops[i], TapeOp::Leaf);
            if matches!(op, TapeOp::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match op {
                TapeOp::Leaf => unreachable!(),
                TapeOp::Conv {
                    x,
                    w,
                    stride,
                    padding,
                } => {
                    let (gx, gw) =
                        ops::conv2d_vjp(&self.values[x.0], &self.values[w.0], stride, padding, &g)?;
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                }
                TapeOp::Depthwise {
                    x,
                    w,
                    stride,
                    padding,
                } => {
                    let (gx, gw) = ops::depthwise_conv2d_vjp(
                        &self.values[x.0],
                        &self.values[w.0],
                        stride,
                        padding,
                        &g,
                    )?;
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                }
                TapeOp::Pointwise { x, w } => {
                    let (gx, gw) =
                        ops::pointwise_conv2d_vjp(&self.values[x.0], &self.values[w.0], &g)?;
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                }
                TapeOp::BiasAdd { x, b } => {
                    let (gx, gb) = ops::bias_add_vjp(self.values[b.0].shape(), &g)?;
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[b.0], gb);
                }
                TapeOp::Affine { x, scale, shift } => {
                    let (gx, gs, gb) =
                        ops::affine_channels_vjp(&self.values[x.0], &self.values[scale.0], &g)?;
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[scale.0], gs);
                    accumulate(&mut grads[shift.0], gb);
                }
                TapeOp::Mish { x } => {
                    let gx = ops::mish_vjp(&self.values[x.0], &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                TapeOp::Sigmoid { x } => {
                    let gx = ops::sigmoid_vjp(&self.values[x.0], &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                TapeOp::Pool {
                    x,
                    kind,
                    window,
                    stride,
                } => {
                    let gx = match kind {
                        PoolKind::Avg => {
                            ops::avg_pool_vjp(self.values[x.0].shape(), window, stride, &g)?
                        }
                        PoolKind::Max => ops::max_pool_vjp(&self.values[x.0], window, stride, &g)?,
                    };
                    accumulate(&mut grads[x.0], gx);
                }
                TapeOp::AdaptiveAvgPool { x } => {
                    let gx = ops::adaptive_avg_pool_vjp(self.values[x.0].shape(), &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                TapeOp::GlobalAvgPool { x } => {
                    let gx = ops::global_avg_pool_vjp(self.values[x.0].shape(), &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                TapeOp::ResizeNearest { x } => {
                    let gx = ops::resize_nearest_vjp(self.values[x.0].shape(), &g)?;
                    accumulate(&mut grads[x.0], gx);
                }
                TapeOp::Concat { xs } => {
                    let sections: Vec<usize> = xs
                        .iter()
                        .map(|v| self.values[v.0].shape().channels)
                        .collect();
                    let parts = ops::concat_channels_vjp(&sections, &g)?;
                    for (v, part) in xs.iter().zip(parts) {
                        accumulate(&mut grads[v.0], part);
                    }
                }
                TapeOp::Add { xs } => {
                    for (v, part) in xs.iter().zip(ops::add_vjp(xs.len(), &g)) {
                        accumulate(&mut grads[v.0], part);
                    }
                }
                TapeOp::ScaleChannels { x, gate } => {
                    let (gx, gg) =
                        ops::scale_channels_vjp(&self.values[x.0], &self.values[gate.0], &g)?;
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[gate.0], gg);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, incoming: Tensor<T>) {
    match slot {
        None => *slot = Some(incoming),
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(incoming.data()) {
                *e = *e + *v;
            }
        }
    }
}
