//! Dense rank-4 tensors in batch-channel-height-width layout, plus the
//! empirical multiply-accumulate counter every compute primitive feeds.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Element type for tensors: `f32` for normal use, `f64` for gradient-check
/// mode. The bound routes through `num_traits::Float` so the crate works
/// without `std` (libm supplies the transcendentals there).
pub trait Real:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dimensions of a rank-4 tensor, in (batch, channels, height, width) order.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    /// Total number of elements.
    pub const fn volume(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Flat index of element (b, c, y, x) in row-major NCHW order.
    #[inline]
    pub const fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.channels + c) * self.height + y) * self.width + x
    }

    fn validate(&self) -> Result<()> {
        for (context, value) in [
            ("shape batch", self.batch),
            ("shape channels", self.channels),
            ("shape height", self.height),
            ("shape width", self.width),
        ] {
            if value == 0 {
                return Err(Error::InvalidDim { context, value });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense rank-4 tensor. Values are immutable in normal use; all compute
/// primitives are pure functions from tensors to a fresh tensor.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Wraps `data` (row-major NCHW) in a tensor, checking the volume.
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.volume() {
            return Err(Error::DataLength {
                expected: shape.volume(),
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.volume()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.volume()],
        }
    }

    /// Builds a tensor by evaluating `f(b, c, y, x)` at every coordinate.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.volume());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.shape.index(b, c, y, x);
        self.data[i] = value;
    }

    /// Elementwise map into a fresh tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts element type, e.g. `f32` weights to `f64` for grad checks.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Running count of multiply-accumulate operations, attributed to the layer
/// scope active when each primitive ran. Additions are counted as zero by
/// every primitive; only actual multiply-accumulates feed this.
///
/// The total always equals the sum of the per-layer entries, and it only ever
/// grows. A counter must not be shared by concurrent evaluations.
#[derive(Clone, Debug, Default)]
pub struct MacCounter {
    total: u64,
    per_layer: BTreeMap<String, u64>,
    scope: String,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the layer name subsequent MACs are attributed to.
    pub fn set_scope(&mut self, name: &str) {
        self.scope = name.to_string();
    }

    /// Records `macs` multiply-accumulates under the current scope.
    pub fn add(&mut self, macs: u64) {
        self.total += macs;
        *self.per_layer.entry(self.scope.clone()).or_insert(0) += macs;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// MACs attributed to `name` (0 when the layer never ran).
    pub fn of(&self, name: &str) -> u64 {
        self.per_layer.get(name).copied().unwrap_or(0)
    }

    pub fn per_layer(&self) -> &BTreeMap<String, u64> {
        &self.per_layer
    }
}
