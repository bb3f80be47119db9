//! Backbone of CSL block groups emitting three scales at strides 8/16/32.

use alloc::format;
use alloc::vec::Vec;

use super::csl::{build_csl_module, CslModuleSpec, CslVariant};
use super::{GraphBuilder, NodeId};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::tensor::Real;

/// One group of CSL blocks sharing a width.
#[derive(Clone, Copy, Debug)]
pub struct GroupSpec {
    pub modules: usize,
    pub out_ch: usize,
    /// Pool 2x2 stride 2 before the group's blocks.
    pub downsample: bool,
}

/// Backbone layout: a stride-2 stem convolution followed by block groups.
/// The first block of every group carries the squeeze-excitation variant,
/// and every block uses expansion ratio 3. The outputs of the last three
/// groups are exported as the pyramid taps.
#[derive(Clone, Debug)]
pub struct BackboneSpec {
    pub stem_channels: usize,
    pub groups: Vec<GroupSpec>,
    pub se_reduction: usize,
}

/// Expansion ratio used by every backbone block.
pub const BACKBONE_EXPANSION: usize = 3;

/// The three exported scale nodes with their strides relative to the input.
#[derive(Clone, Copy, Debug)]
pub struct BackboneTaps {
    pub nodes: [NodeId; 3],
    pub strides: [usize; 3],
}

/// Builds the backbone under the `bone.` name prefix and returns its taps.
pub fn build_backbone<T: Real>(
    b: &mut GraphBuilder<T>,
    input: NodeId,
    spec: &BackboneSpec,
) -> Result<BackboneTaps> {
    if spec.groups.len() < 3 {
        return Err(Error::Constraint {
            name: "backbone groups",
            detail: format!(
                "need at least 3 groups for 3 taps, got {}",
                spec.groups.len()
            ),
        });
    }
    if spec.stem_channels == 0 {
        return Err(Error::InvalidDim {
            context: "stem channels",
            value: 0,
        });
    }
    let in_shape = b.shape_of(input);
    if in_shape.height % 32 != 0 || in_shape.width % 32 != 0 {
        return Err(Error::Constraint {
            name: "backbone stride bookkeeping",
            detail: format!(
                "input {}x{} must be divisible by 32 for exact 8/16/32 taps",
                in_shape.height, in_shape.width
            ),
        });
    }

    let stem = b.conv(
        "bone.stem.conv",
        input,
        spec.stem_channels,
        3,
        2,
        Padding::Same,
        false,
    )?;
    let stem = b.affine("bone.stem.bn", stem)?;
    let mut cur = b.mish("bone.stem.mish", stem)?;
    let mut stride = 2usize;

    let mut taps: Vec<(NodeId, usize)> = Vec::new();
    for (gi, group) in spec.groups.iter().enumerate() {
        if group.modules == 0 {
            return Err(Error::Constraint {
                name: "backbone group",
                detail: format!("group {gi} has no blocks"),
            });
        }
        if group.downsample {
            cur = b.avg_pool(&format!("bone.g{gi}.pool"), cur, 2, 2)?;
            stride *= 2;
        }
        for mi in 0..group.modules {
            let variant = if mi == 0 {
                CslVariant::Attention
            } else {
                CslVariant::Plain
            };
            let spec_m = CslModuleSpec {
                in_ch: b.shape_of(cur).channels,
                out_ch: group.out_ch,
                expansion: BACKBONE_EXPANSION,
                kernel: 3,
                variant,
                se_reduction: spec.se_reduction,
            };
            cur = build_csl_module(b, cur, &spec_m, &format!("bone.g{gi}.m{mi}"))?;
        }
        taps.push((cur, stride));
    }

    let last3: Vec<(NodeId, usize)> = taps[taps.len() - 3..].to_vec();
    let strides = [last3[0].1, last3[1].1, last3[2].1];
    if strides != [8, 16, 32] {
        return Err(Error::Constraint {
            name: "backbone stride bookkeeping",
            detail: format!("tap strides {:?} are not the required [8, 16, 32]", strides),
        });
    }
    Ok(BackboneTaps {
        nodes: [last3[0].0, last3[1].0, last3[2].0],
        strides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    fn small_spec() -> BackboneSpec {
        BackboneSpec {
            stem_channels: 4,
            groups: vec![
                GroupSpec {
                    modules: 1,
                    out_ch: 8,
                    downsample: true,
                },
                GroupSpec {
                    modules: 1,
                    out_ch: 8,
                    downsample: true,
                },
                GroupSpec {
                    modules: 1,
                    out_ch: 16,
                    downsample: true,
                },
                GroupSpec {
                    modules: 1,
                    out_ch: 16,
                    downsample: true,
                },
            ],
            se_reduction: 4,
        }
    }

    #[test]
    fn taps_sit_at_strides_8_16_32() {
        for size in [416usize, 224, 64] {
            let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, size, size), 0);
            let input = b.input();
            let taps = build_backbone(&mut b, input, &small_spec()).unwrap();
            assert_eq!(taps.strides, [8, 16, 32]);
            for (i, &node) in taps.nodes.iter().enumerate() {
                let s = b.shape_of(node);
                assert_eq!(s.height, size / taps.strides[i]);
                assert_eq!(s.width, size / taps.strides[i]);
            }
        }
    }

    #[test]
    fn first_module_of_each_group_is_attention() {
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 64, 64), 0);
        let input = b.input();
        build_backbone(&mut b, input, &small_spec()).unwrap();
        let net = b.finish(vec![]);
        for gi in 0..4 {
            let gate = format!("bone.g{gi}.m0.se.gate");
            assert!(net.nodes().iter().any(|n| n.name == gate), "missing {gate}");
        }
    }

    #[test]
    fn rejects_input_not_divisible_by_32() {
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 100, 100), 0);
        let input = b.input();
        let err = build_backbone(&mut b, input, &small_spec()).unwrap_err();
        assert!(
            matches!(err, Error::Constraint { name, .. } if name == "backbone stride bookkeeping")
        );
    }

    #[test]
    fn rejects_stride_bookkeeping_failure() {
        // No downsampling at all: taps cannot reach 8/16/32.
        let mut spec = small_spec();
        for g in &mut spec.groups {
            g.downsample = false;
        }
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 64, 64), 0);
        let input = b.input();
        let err = build_backbone(&mut b, input, &spec).unwrap_err();
        assert!(
            matches!(err, Error::Constraint { name, .. } if name == "backbone stride bookkeeping")
        );
    }
}
