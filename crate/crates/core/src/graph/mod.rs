//! Immutable computation graphs over the tensor primitives.
//!
//! A [`GraphBuilder`] appends nodes in topological order, inferring every
//! output shape at construction time, so a finished [`Network`] is fully
//! shaped before anything runs. Construction is deterministic: the same
//! builder calls with the same seed produce identical node names, shapes,
//! parameters, and initial values.

mod backbone;
mod csl;
mod detector;
mod fpn;

pub use backbone::{build_backbone, BackboneSpec, BackboneTaps, GroupSpec};
pub use csl::{build_csl_module, build_se_block, CslModuleSpec, CslVariant};
pub use detector::{build_detector, DetectorConfig, HeadLayout, HeadSpec};
pub use fpn::{build_fpn_repeat, expand_pyramid, pyramid_level_sizes, FpnSpec, MiddleRule};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{self, Padding, PoolKind};
use crate::tape::{GradTape, Var};
use crate::tensor::{MacCounter, Real, Shape, Tensor};

/// Index of a node within its network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct NodeId(pub(crate) usize);

/// Index of a named parameter within its network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct ParamId(pub(crate) usize);

/// A named parameter tensor.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Primitive layer kinds a graph node can apply.
#[derive(Clone, Debug)]
pub enum LayerOp {
    /// The graph input placeholder.
    Input,
    Conv {
        weights: ParamId,
        bias: Option<ParamId>,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    DepthwiseConv {
        weights: ParamId,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Pointwise {
        weights: ParamId,
        bias: Option<ParamId>,
    },
    Affine {
        scale: ParamId,
        shift: ParamId,
    },
    Mish,
    Sigmoid,
    AvgPool {
        window: usize,
        stride: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    AdaptiveAvgPool {
        out_h: usize,
        out_w: usize,
    },
    GlobalAvgPool,
    ResizeNearest {
        out_h: usize,
        out_w: usize,
    },
    Concat,
    Add,
    /// Multiplies input 0 by the per-channel gate of input 1.
    ScaleChannels,
}

impl LayerOp {
    /// Parameters this layer references, in a fixed order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            LayerOp::Conv { weights, bias, .. } | LayerOp::Pointwise { weights, bias } => {
                let mut ids = vec![*weights];
                ids.extend(bias.iter().copied());
                ids
            }
            LayerOp::DepthwiseConv { weights, .. } => vec![*weights],
            LayerOp::Affine { scale, shift } => vec![*scale, *shift],
            _ => Vec::new(),
        }
    }
}

/// One node of a computation graph.
#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: LayerOp,
    pub inputs: Vec<NodeId>,
    /// Shape at the nominal batch size the graph was built for.
    pub out_shape: Shape,
}

enum ParamInit {
    UniformFanIn(usize),
    Ones,
    Zeros,
}

/// Incrementally builds a [`Network`]. Nodes are appended in evaluation
/// order; names must be unique.
pub struct GraphBuilder<T> {
    nodes: Vec<Node>,
    params: Vec<Parameter<T>>,
    names: BTreeSet<String>,
    rng: ChaCha8Rng,
}

impl<T: Real> GraphBuilder<T> {
    /// Starts a graph with a single input of the given shape. Parameter
    /// initialization draws from a ChaCha stream seeded with `seed`.
    pub fn new(input_shape: Shape, seed: u64) -> Self {
        let mut names = BTreeSet::new();
        names.insert("input".to_string());
        GraphBuilder {
            nodes: vec![Node {
                name: "input".to_string(),
                op: LayerOp::Input,
                inputs: Vec::new(),
                out_shape: input_shape,
            }],
            params: Vec::new(),
            names,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    /// Output shape the node will produce at the nominal batch size.
    pub fn shape_of(&self, id: NodeId) -> Shape {
        self.nodes[id.0].out_shape
    }

    fn add_node(
        &mut self,
        name: &str,
        op: LayerOp,
        inputs: Vec<NodeId>,
        out_shape: Shape,
    ) -> Result<NodeId> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::DuplicateName {
                name: name.to_string(),
            });
        }
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            out_shape,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn new_param(&mut self, name: String, shape: Shape, init: ParamInit) -> ParamId {
        let value = match init {
            ParamInit::UniformFanIn(fan_in) => {
                let bound = num_traits::Float::sqrt(1.0 / fan_in as f64);
                let rng = &mut self.rng;
                Tensor::from_fn(shape, |_, _, _, _| {
                    let u: f64 = rng.random();
                    T::from_f64((2.0 * u - 1.0) * bound)
                })
            }
            ParamInit::Ones => Tensor::filled(shape, T::one()),
            ParamInit::Zeros => Tensor::zeros(shape),
        };
        self.params.push(Parameter { name, value });
        ParamId(self.params.len() - 1)
    }

    /// Creates a standalone weight parameter, e.g. for a layer shared
    /// between several nodes.
    pub fn shared_pointwise_params(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        bias: bool,
    ) -> (ParamId, Option<ParamId>) {
        let w = self.new_param(
            format!("{name}.weight"),
            Shape::new(out_ch, in_ch, 1, 1),
            ParamInit::UniformFanIn(in_ch),
        );
        let b = bias.then(|| {
            self.new_param(
                format!("{name}.bias"),
                Shape::new(1, out_ch, 1, 1),
                ParamInit::Zeros,
            )
        });
        (w, b)
    }

    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
        if kernel % 2 == 0 {
            return Err(Error::EvenKernel { kernel });
        }
        if stride != 1 && stride != 2 {
            return Err(Error::UnsupportedStride { stride });
        }
        let (oh, ow) = ops::conv_output_hw(xs.height, xs.width, kernel, stride, padding)?;
        let weights = self.new_param(
            format!("{name}.weight"),
            Shape::new(out_ch, xs.channels, kernel, kernel),
            ParamInit::UniformFanIn(xs.channels * kernel * kernel),
        );
        let bias = bias.then(|| {
            self.new_param(
                format!("{name}.bias"),
                Shape::new(1, out_ch, 1, 1),
                ParamInit::Zeros,
            )
        });
        self.add_node(
            name,
            LayerOp::Conv {
                weights,
                bias,
                kernel,
                stride,
                padding,
            },
            vec![x],
            Shape::new(xs.batch, out_ch, oh, ow),
        )
    }

    pub fn depthwise(
        &mut self,
        name: &str,
        x: NodeId,
        multiplier: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
        if kernel % 2 == 0 {
            return Err(Error::EvenKernel { kernel });
        }
        if multiplier == 0 {
            return Err(Error::InvalidDim {
                context: "depthwise multiplier",
                value: 0,
            });
        }
        let (oh, ow) = ops::conv_output_hw(xs.height, xs.width, kernel, stride, padding)?;
        let weights = self.new_param(
            format!("{name}.weight"),
            Shape::new(xs.channels * multiplier, 1, kernel, kernel),
            ParamInit::UniformFanIn(kernel * kernel),
        );
        self.add_node(
            name,
            LayerOp::DepthwiseConv {
                weights,
                kernel,
                stride,
                padding,
            },
            vec![x],
            Shape::new(xs.batch, xs.channels * multiplier, oh, ow),
        )
    }

    pub fn pointwise(
        &mut self,
        name: &str,
        x: NodeId,
        out_ch: usize,
        bias: bool,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
        let (weights, bias) = self.shared_pointwise_params(name, xs.channels, out_ch, bias);
        self.pointwise_shared(name, x, weights, bias)
    }

    /// Applies an existing pointwise weight (and optional bias) parameter;
    /// several nodes may reference the same ids.
    pub fn pointwise_shared(
        &mut self,
        name: &str,
        x: NodeId,
        weights: ParamId,
        bias: Option<ParamId>,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
        let ws = self.params[weights.0].value.shape();
        if ws.channels != xs.channels {
            return Err(Error::ShapeMismatch {
                context: "pointwise weight in-channels vs input channels",
                left: xs,
                right: ws,
            });
        }
        self.add_node(
            name,
            LayerOp::Pointwise { weights, bias },
            vec![x],
            Shape::new(xs.batch, ws.batch, xs.height, xs.width),
        )
    }

    /// Per-channel affine with scale initialized to one and shift to zero;
    /// the folded, inference-time form of a normalization layer.
    pub fn affine(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x);
        let pshape = Shape::new(1, xs.channels, 1, 1);
        let scale = self.new_param(format!("{name}.scale"), pshape, ParamInit::Ones);
        let shift = self.new_param(format!("{name}.shift"), pshape, ParamInit::Zeros);
        self.add_node(name, LayerOp::Affine { scale, shift }, vec![x], xs)
    }

    pub fn mish(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x);
        self.add_node(name, LayerOp::Mish, vec![x], xs)
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x);
        self.add_node(name, LayerOp::Sigmoid, vec![x], xs)
    }

    fn pool(
        &mut self,
        name: &str,
        x: NodeId,
        kind: PoolKind,
        window: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
        if window > xs.height || window > xs.width {
            return Err(Error::WindowTooLarge {
                window,
                height: xs.height,
                width: xs.width,
            });
        }
        let oh = (xs.height - window) / stride + 1;
        let ow = (xs.width - window) / stride + 1;
        let op = match kind {
            PoolKind::Avg => LayerOp::AvgPool { window, stride },
            PoolKind::Max => LayerOp::MaxPool { window, stride },
        };
        self.add_node(name, op, vec![x], Shape::new(xs.batch, xs.channels, oh, ow))
    }

    pub fn avg_pool(
        &mut self,
        name: &str,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId> {
        self.pool(name, x, PoolKind::Avg, window, stride)
    }

    pub fn max_pool(
        &mut self,
        name: &str,
        x: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId> {
        self.pool(name, x, PoolKind::Max, window, stride)
    }

    pub fn adaptive_avg_pool(
        &mut self,
        name: &str,
        x: NodeId,
        out_h: usize,
        out_w: usize,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
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
        self.add_node(
            name,
            LayerOp::AdaptiveAvgPool { out_h, out_w },
            vec![x],
            Shape::new(xs.batch, xs.channels, out_h, out_w),
        )
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x);
        self.add_node(
            name,
            LayerOp::GlobalAvgPool,
            vec![x],
            Shape::new(xs.batch, xs.channels, 1, 1),
        )
    }

    pub fn resize_nearest(
        &mut self,
        name: &str,
        x: NodeId,
        out_h: usize,
        out_w: usize,
    ) -> Result<NodeId> {
        let xs = self.shape_of(x);
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidDim {
                context: "resize target",
                value: 0,
            });
        }
        self.add_node(
            name,
            LayerOp::ResizeNearest { out_h, out_w },
            vec![x],
            Shape::new(xs.batch, xs.channels, out_h, out_w),
        )
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or(Error::EmptyInput("concat"))?;
        let fs = self.shape_of(first);
        let mut channels = 0;
        for &x in xs {
            let s = self.shape_of(x);
            if s.batch != fs.batch || s.height != fs.height || s.width != fs.width {
                return Err(Error::ShapeMismatch {
                    context: "concat batch/spatial dims",
                    left: fs,
                    right: s,
                });
            }
            channels += s.channels;
        }
        self.add_node(
            name,
            LayerOp::Concat,
            xs.to_vec(),
            Shape::new(fs.batch, channels, fs.height, fs.width),
        )
    }

    pub fn add(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or(Error::EmptyInput("add"))?;
        let fs = self.shape_of(first);
        for &x in xs {
            if self.shape_of(x) != fs {
                return Err(Error::ShapeMismatch {
                    context: "add operand shapes",
                    left: fs,
                    right: self.shape_of(x),
                });
            }
        }
        self.add_node(name, LayerOp::Add, xs.to_vec(), fs)
    }

    pub fn scale_channels(&mut self, name: &str, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x);
        let gs = self.shape_of(gate);
        if gs.batch != xs.batch || gs.channels != xs.channels || gs.height != 1 || gs.width != 1 {
            return Err(Error::ShapeMismatch {
                context: "scale_channels gate shape",
                left: xs,
                right: gs,
            });
        }
        self.add_node(name, LayerOp::ScaleChannels, vec![x, gate], xs)
    }

    /// Seals the graph with the given output nodes.
    pub fn finish(self, outputs: Vec<NodeId>) -> Network<T> {
        let mut last_use = vec![usize::MAX; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for inp in &node.inputs {
                last_use[inp.0] = i;
            }
        }
        for out in &outputs {
            last_use[out.0] = usize::MAX;
        }
        Network {
            nodes: self.nodes,
            params: self.params,
            outputs,
            last_use,
        }
    }
}

/// A sealed, fully shaped computation graph. Immutable in normal use;
/// independent inputs may be evaluated concurrently as long as each
/// evaluation gets its own counter.
#[derive(Debug)]
pub struct Network<T> {
    nodes: Vec<Node>,
    params: Vec<Parameter<T>>,
    outputs: Vec<NodeId>,
    last_use: Vec<usize>,
}

/// A recorded forward pass through a network, ready for a reverse sweep.
pub struct TracedForward<T> {
    pub tape: GradTape<T>,
    pub outputs: Vec<Var>,
    pub input: Var,
    /// One tape leaf per network parameter, in parameter order.
    pub params: Vec<Var>,
}

impl<T: Real> Network<T> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Ids of every parameter, in declaration order.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_param(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let current = self.params[id.0].value.shape();
        if value.shape() != current {
            return Err(Error::ShapeMismatch {
                context: "set_param value shape",
                left: value.shape(),
                right: current,
            });
        }
        self.params[id.0].value = value;
        Ok(())
    }

    /// Shape the graph was built for (nominal batch size included).
    pub fn input_shape(&self) -> Shape {
        self.nodes[0].out_shape
    }

    /// Total parameter count, shared parameters counted once.
    pub fn total_params(&self) -> u64 {
        self.params
            .iter()
            .map(|p| p.value.shape().volume() as u64)
            .sum()
    }

    /// Parameters referenced by one node (no sharing dedup).
    pub fn node_params(&self, id: NodeId) -> u64 {
        self.nodes[id.0]
            .op
            .param_ids()
            .iter()
            .map(|p| self.params[p.0].value.shape().volume() as u64)
            .sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.input_shape();
        let got = x.shape();
        if got.channels != want.channels || got.height != want.height || got.width != want.width {
            return Err(Error::ShapeMismatch {
                context: "network input shape (batch may vary)",
                left: got,
                right: want,
            });
        }
        Ok(())
    }

    /// Runs the graph, attributing MACs per layer name into `counter`.
    /// Returns the output tensors in declaration order.
    pub fn forward(&self, x: &Tensor<T>, counter: &mut MacCounter) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let batch = x.shape().batch;
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            counter.set_scope(&node.name);
            let get = |id: NodeId| values[id.0].as_ref().expect("topological order");
            let result = match &node.op {
                LayerOp::Input => x.clone(),
                LayerOp::Conv {
                    weights,
                    bias,
                    stride,
                    padding,
                    ..
                } => {
                    let y = ops::conv2d(
                        get(node.inputs[0]),
                        &self.params[weights.0].value,
                        *stride,
                        *padding,
                        counter,
                    )?;
                    match bias {
                        Some(b) => ops::bias_add(&y, &self.params[b.0].value)?,
                        None => y,
                    }
                }
                LayerOp::DepthwiseConv {
                    weights,
                    stride,
                    padding,
                    ..
                } => ops::depthwise_conv2d(
                    get(node.inputs[0]),
                    &self.params[weights.0].value,
                    *stride,
                    *padding,
                    counter,
                )?,
                LayerOp::Pointwise { weights, bias } => {
                    let y = ops::pointwise_conv2d(
                        get(node.inputs[0]),
                        &self.params[weights.0].value,
                        counter,
                    )?;
                    match bias {
                        Some(b) => ops::bias_add(&y, &self.params[b.0].value)?,
                        None => y,
                    }
                }
                LayerOp::Affine { scale, shift } => ops::affine_channels(
                    get(node.inputs[0]),
                    &self.params[scale.0].value,
                    &self.params[shift.0].value,
                )?,
                LayerOp::Mish => ops::mish(get(node.inputs[0])),
                LayerOp::Sigmoid => ops::sigmoid(get(node.inputs[0])),
                LayerOp::AvgPool { window, stride } => {
                    ops::pool2d(get(node.inputs[0]), PoolKind::Avg, *window, *stride)?
                }
                LayerOp::MaxPool { window, stride } => {
                    ops::pool2d(get(node.inputs[0]), PoolKind::Max, *window, *stride)?
                }
                LayerOp::AdaptiveAvgPool { out_h, out_w } => {
                    ops::adaptive_avg_pool(get(node.inputs[0]), *out_h, *out_w)?
                }
                LayerOp::GlobalAvgPool => ops::global_avg_pool(get(node.inputs[0])),
                LayerOp::ResizeNearest { out_h, out_w } => {
                    ops::resize_nearest(get(node.inputs[0]), *out_h, *out_w)?
                }
                LayerOp::Concat => {
                    let xs: Vec<&Tensor<T>> = node.inputs.iter().map(|&id| get(id)).collect();
                    ops::concat_channels(&xs)?
                }
                LayerOp::Add => {
                    let xs: Vec<&Tensor<T>> = node.inputs.iter().map(|&id| get(id)).collect();
                    ops::add(&xs)?
                }
                LayerOp::ScaleChannels => {
                    ops::scale_channels(get(node.inputs[0]), get(node.inputs[1]))?
                }
            };
            let expected = Shape::new(
                batch,
                node.out_shape.channels,
                node.out_shape.height,
                node.out_shape.width,
            );
            if result.shape() != expected {
                return Err(Error::ShapeMismatch {
                    context: "node output shape",
                    left: result.shape(),
                    right: expected,
                });
            }
            values[i] = Some(result);
            for inp in &node.inputs {
                if self.last_use[inp.0] == i {
                    values[inp.0] = None;
                }
            }
        }
        Ok(self
            .outputs
            .iter()
            .map(|id| values[id.0].clone().expect("outputs retained"))
            .collect())
    }

    /// Runs the graph while recording onto a fresh tape, for reverse-mode
    /// gradients.
    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<TracedForward<T>> {
        self.check_input(x)?;
        let mut tape = GradTape::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        let mut vars: Vec<Option<Var>> = vec![None; self.nodes.len()];
        let mut input_var = None;
        for (i, node) in self.nodes.iter().enumerate() {
            let get = |id: NodeId| vars[id.0].expect("topological order");
            let v = match &node.op {
                LayerOp::Input => {
                    let v = tape.leaf(x.clone());
                    input_var = Some(v);
                    v
                }
                LayerOp::Conv {
                    weights,
                    bias,
                    stride,
                    padding,
                    ..
                } => {
                    let y =
                        tape.conv2d(get(node.inputs[0]), params[weights.0], *stride, *padding)?;
                    match bias {
                        Some(b) => tape.bias_add(y, params[b.0])?,
                        None => y,
                    }
                }
                LayerOp::DepthwiseConv {
                    weights,
                    stride,
                    padding,
                    ..
                } => tape.depthwise_conv2d(
                    get(node.inputs[0]),
                    params[weights.0],
                    *stride,
                    *padding,
                )?,
                LayerOp::Pointwise { weights, bias } => {
                    let y = tape.pointwise_conv2d(get(node.inputs[0]), params[weights.0])?;
                    match bias {
                        Some(b) => tape.bias_add(y, params[b.0])?,
                        None => y,
                    }
                }
                LayerOp::Affine { scale, shift } => {
                    tape.affine_channels(get(node.inputs[0]), params[scale.0], params[shift.0])?
                }
                LayerOp::Mish => tape.mish(get(node.inputs[0])),
                LayerOp::Sigmoid => tape.sigmoid(get(node.inputs[0])),
                LayerOp::AvgPool { window, stride } => {
                    tape.pool2d(get(node.inputs[0]), PoolKind::Avg, *window, *stride)?
                }
                LayerOp::MaxPool { window, stride } => {
                    tape.pool2d(get(node.inputs[0]), PoolKind::Max, *window, *stride)?
                }
                LayerOp::AdaptiveAvgPool { out_h, out_w } => {
                    tape.adaptive_avg_pool(get(node.inputs[0]), *out_h, *out_w)?
                }
                LayerOp::GlobalAvgPool => tape.global_avg_pool(get(node.inputs[0])),
                LayerOp::ResizeNearest { out_h, out_w } => {
                    tape.resize_nearest(get(node.inputs[0]), *out_h, *out_w)?
                }
                LayerOp::Concat => {
                    let xs: Vec<Var> = node.inputs.iter().map(|&id| get(id)).collect();
                    tape.concat_channels(&xs)?
                }
                LayerOp::Add => {
                    let xs: Vec<Var> = node.inputs.iter().map(|&id| get(id)).collect();
                    tape.add(&xs)?
                }
                LayerOp::ScaleChannels => {
                    tape.scale_channels(get(node.inputs[0]), get(node.inputs[1]))?
                }
            };
            vars[i] = Some(v);
        }
        Ok(TracedForward {
            outputs: self.outputs.iter().map(|id| vars[id.0].unwrap()).collect(),
            input: input_var.expect("graph has an input node"),
            params,
            tape,
        })
    }
}
