//! The cross-stage lightweight block and its squeeze-excitation companion.
//!
//! The block splits its work across two branches. A cheap skip branch makes
//! half the output channels with a pointwise convolution. The main branch is
//! pointwise-free: it expands candidates by running a depthwise convolution
//! over the skip output (multiplier `t`) and another over the block input,
//! concatenates both, fuses them with one more depthwise pass, and projects
//! down to the other half of the output with a linear pointwise convolution.
//! The two halves are concatenated.
//!
//! At stride 1 the plain variant's multiply-accumulates match
//! [`csl_macs`](crate::cost::csl_macs) term for term:
//! skip pointwise -> `skip_pw`, candidate depthwise -> `cand_dw`,
//! input depthwise -> `in_dw`, fused depthwise -> `fused_dw`,
//! projection pointwise -> `proj_pw`.

use alloc::format;

use super::{GraphBuilder, NodeId};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::tensor::Real;

/// Block flavor: `Attention` gates the fused maps with a squeeze-excitation
/// branch, `Downsample` halves the spatial extent inside the block.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CslVariant {
    Plain,
    Attention,
    Downsample,
}

/// Shape of one CSL block.
#[derive(Clone, Copy, Debug)]
pub struct CslModuleSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Candidate expansion ratio `t`.
    pub expansion: usize,
    pub kernel: usize,
    pub variant: CslVariant,
    /// Bottleneck divisor of the squeeze-excitation branch (attention only).
    pub se_reduction: usize,
}

impl CslModuleSpec {
    pub fn new(in_ch: usize, out_ch: usize, expansion: usize, variant: CslVariant) -> Self {
        CslModuleSpec {
            in_ch,
            out_ch,
            expansion,
            kernel: 3,
            variant,
            se_reduction: 4,
        }
    }

    /// Channel count after the expansion concat: `in_ch + t * out_ch / 2`.
    pub fn fused_channels(&self) -> usize {
        self.in_ch + self.expansion * self.out_ch / 2
    }

    fn validate(&self) -> Result<()> {
        if self.out_ch == 0 || self.out_ch % 2 != 0 {
            return Err(Error::ChannelSplit {
                out_ch: self.out_ch,
                expansion: self.expansion as f64,
            });
        }
        if self.in_ch == 0 {
            return Err(Error::InvalidDim {
                context: "csl in_ch",
                value: self.in_ch,
            });
        }
        if self.expansion == 0 {
            return Err(Error::Constraint {
                name: "csl expansion",
                detail: format!("expansion must be >= 1, got {}", self.expansion),
            });
        }
        if self.kernel % 2 == 0 {
            return Err(Error::EvenKernel {
                kernel: self.kernel,
            });
        }
        if self.variant == CslVariant::Attention && self.fused_channels() % self.se_reduction != 0 {
            return Err(Error::Constraint {
                name: "se reduction",
                detail: format!(
                    "fused channels {} not divisible by reduction {}",
                    self.fused_channels(),
                    self.se_reduction
                ),
            });
        }
        Ok(())
    }
}

/// Squeeze-excitation gate: global average pool, bottleneck pointwise pair,
/// sigmoid, then a per-channel rescale of `x`.
pub fn build_se_block<T: Real>(
    b: &mut GraphBuilder<T>,
    x: NodeId,
    reduction: usize,
    prefix: &str,
) -> Result<NodeId> {
    let ch = b.shape_of(x).channels;
    if reduction == 0 || ch % reduction != 0 {
        return Err(Error::Constraint {
            name: "se reduction",
            detail: format!("channels {ch} not divisible by reduction {reduction}"),
        });
    }
    let squeeze = b.global_avg_pool(&format!("{prefix}.squeeze"), x)?;
    let fc1 = b.pointwise(&format!("{prefix}.fc1"), squeeze, ch / reduction, true)?;
    let act = b.mish(&format!("{prefix}.fc1_mish"), fc1)?;
    let fc2 = b.pointwise(&format!("{prefix}.fc2"), act, ch, true)?;
    let gate = b.sigmoid(&format!("{prefix}.gate"), fc2)?;
    b.scale_channels(&format!("{prefix}.scale"), x, gate)
}

/// Emits one CSL block rooted at `x` and returns its output node.
///
/// Mish follows each depthwise stage and the skip pointwise; the projection
/// pointwise stays linear. The attention variant inserts the SE gate after
/// the fused depthwise stage; the downsample variant halves the expansion
/// output with adaptive average pooling and pools the skip branch 2x2/2
/// before the final concat.
pub fn build_csl_module<T: Real>(
    b: &mut GraphBuilder<T>,
    x: NodeId,
    spec: &CslModuleSpec,
    prefix: &str,
) -> Result<NodeId> {
    spec.validate()?;
    let xs = b.shape_of(x);
    if xs.channels != spec.in_ch {
        return Err(Error::ShapeMismatch {
            context: "csl input channels vs spec in_ch",
            left: xs,
            right: crate::tensor::Shape::new(xs.batch, spec.in_ch, xs.height, xs.width),
        });
    }
    if spec.variant == CslVariant::Downsample && (xs.height % 2 != 0 || xs.width % 2 != 0) {
        return Err(Error::Constraint {
            name: "csl downsample",
            detail: format!("spatial dims {}x{} must be even", xs.height, xs.width),
        });
    }
    let half = spec.out_ch / 2;

    // Skip branch: cheap pointwise to half the output channels.
    let skip_pw = b.pointwise(&format!("{prefix}.skip_pw"), x, half, false)?;
    let skip_bn = b.affine(&format!("{prefix}.skip_bn"), skip_pw)?;
    let skip = b.mish(&format!("{prefix}.skip_mish"), skip_bn)?;

    // Expansion: depthwise candidates from the skip output plus a depthwise
    // pass over the block input, concatenated input-first.
    let cand_dw = b.depthwise(
        &format!("{prefix}.cand_dw"),
        skip,
        spec.expansion,
        spec.kernel,
        1,
        Padding::Same,
    )?;
    let cand_bn = b.affine(&format!("{prefix}.cand_bn"), cand_dw)?;
    let cand = b.mish(&format!("{prefix}.cand_mish"), cand_bn)?;
    let in_dw = b.depthwise(
        &format!("{prefix}.in_dw"),
        x,
        1,
        spec.kernel,
        1,
        Padding::Same,
    )?;
    let in_bn = b.affine(&format!("{prefix}.in_bn"), in_dw)?;
    let inp = b.mish(&format!("{prefix}.in_mish"), in_bn)?;
    let mut expanded = b.concat(&format!("{prefix}.expand_cat"), &[inp, cand])?;

    if spec.variant == CslVariant::Downsample {
        let s = b.shape_of(expanded);
        expanded = b.adaptive_avg_pool(
            &format!("{prefix}.halve"),
            expanded,
            s.height / 2,
            s.width / 2,
        )?;
    }

    // Fuse everything with one more depthwise pass.
    let fused_dw = b.depthwise(
        &format!("{prefix}.fused_dw"),
        expanded,
        1,
        spec.kernel,
        1,
        Padding::Same,
    )?;
    let fused_bn = b.affine(&format!("{prefix}.fused_bn"), fused_dw)?;
    let mut fused = b.mish(&format!("{prefix}.fused_mish"), fused_bn)?;

    if spec.variant == CslVariant::Attention {
        fused = build_se_block(b, fused, spec.se_reduction, &format!("{prefix}.se"))?;
    }

    // Linear projection to the other half of the output.
    let proj_pw = b.pointwise(&format!("{prefix}.proj_pw"), fused, half, false)?;
    let main = b.affine(&format!("{prefix}.proj_bn"), proj_pw)?;

    let skip_out = if spec.variant == CslVariant::Downsample {
        b.avg_pool(&format!("{prefix}.skip_pool"), skip, 2, 2)?
    } else {
        skip
    };
    b.concat(&format!("{prefix}.out_cat"), &[skip_out, main])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{csl_macs, ConvShapeQuery};
    use crate::graph::GraphBuilder;
    use crate::tensor::{MacCounter, Shape, Tensor};

    fn module_net(spec: CslModuleSpec, h: usize, w: usize) -> crate::graph::Network<f64> {
        let mut b = GraphBuilder::new(Shape::new(1, spec.in_ch, h, w), 7);
        let x = b.input();
        let out = build_csl_module(&mut b, x, &spec, "m").unwrap();
        b.finish(alloc::vec![out])
    }

    #[test]
    fn plain_module_macs_match_decomposition() {
        let spec = CslModuleSpec::new(16, 16, 2, CslVariant::Plain);
        let net = module_net(spec, 32, 32);
        let x = Tensor::from_fn(Shape::new(1, 16, 32, 32), |_, c, y, x| {
            ((c + y + x) % 7) as f64 * 0.25
        });
        let mut counter = MacCounter::new();
        let out = net.forward(&x, &mut counter).unwrap();
        assert_eq!(out[0].shape(), Shape::new(1, 16, 32, 32));
        let analytic = csl_macs(&ConvShapeQuery::new(32, 32, 16, 16, 3, 2.0)).unwrap();
        assert_eq!(counter.total(), analytic.total);
        assert_eq!(counter.total(), 983_040);
    }

    #[test]
    fn downsample_variant_halves_spatial_dims() {
        let spec = CslModuleSpec::new(16, 16, 2, CslVariant::Downsample);
        let net = module_net(spec, 32, 32);
        let x = Tensor::filled(Shape::new(1, 16, 32, 32), 0.5);
        let out = net.forward(&x, &mut MacCounter::new()).unwrap();
        assert_eq!(out[0].shape(), Shape::new(1, 16, 16, 16));
    }

    #[test]
    fn zeroed_projection_and_skip_give_zero_output() {
        let spec = CslModuleSpec::new(8, 8, 2, CslVariant::Plain);
        let mut b = GraphBuilder::<f64>::new(Shape::new(1, 8, 6, 6), 3);
        let x = b.input();
        let out = build_csl_module(&mut b, x, &spec, "m").unwrap();
        let mut net = b.finish(alloc::vec![out]);
        for name in ["m.skip_pw.weight", "m.proj_pw.weight"] {
            let id = net.param_id(name).unwrap();
            let shape = net.param(id).value.shape();
            net.set_param(id, Tensor::zeros(shape)).unwrap();
        }
        let x = Tensor::filled(Shape::new(1, 8, 6, 6), 1.3);
        let out = net.forward(&x, &mut MacCounter::new()).unwrap();
        assert!(out[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_odd_output_channels() {
        let spec = CslModuleSpec::new(8, 7, 2, CslVariant::Plain);
        let mut b = GraphBuilder::<f64>::new(Shape::new(1, 8, 6, 6), 3);
        let x = b.input();
        let err = build_csl_module(&mut b, x, &spec, "m").unwrap_err();
        assert!(matches!(err, Error::ChannelSplit { .. }));
    }

    #[test]
    fn se_block_constant_gate_scales_input() {
        let mut b = GraphBuilder::<f64>::new(Shape::new(1, 32, 8, 8), 5);
        let x = b.input();
        let se = build_se_block(&mut b, x, 4, "se").unwrap();
        let mut net = b.finish(alloc::vec![se]);
        // Zero second-pointwise weights: gate = sigmoid(0) = 0.5 everywhere.
        let id = net.param_id("se.fc2.weight").unwrap();
        let shape = net.param(id).value.shape();
        net.set_param(id, Tensor::zeros(shape)).unwrap();
        let x = Tensor::filled(Shape::new(1, 32, 8, 8), 2.0);
        let out = net.forward(&x, &mut MacCounter::new()).unwrap();
        assert_eq!(out[0].shape(), Shape::new(1, 32, 8, 8));
        assert!(out[0].data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn se_block_rejects_bad_reduction() {
        let mut b = GraphBuilder::<f64>::new(Shape::new(1, 30, 8, 8), 5);
        let x = b.input();
        assert!(build_se_block(&mut b, x, 4, "se").is_err());
    }
}
