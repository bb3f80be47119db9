//! Full detector assembly: backbone, pyramid, and a weight-shared 1x1 head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::backbone::{build_backbone, BackboneSpec, GroupSpec};
use super::fpn::{build_fpn_repeat, expand_pyramid, FpnSpec, MiddleRule};
use super::{GraphBuilder, Network};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape};

/// Channel order of the raw head output. Anchor-major means each anchor owns
/// a contiguous run of `4 + 1 + num_classes` channels laid out
/// (tx, ty, tw, th, objectness, class scores...).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum HeadLayout {
    #[default]
    AnchorMajor,
}

/// Detection head settings.
#[derive(Clone, Copy, Debug)]
pub struct HeadSpec {
    pub bias: bool,
    pub layout: HeadLayout,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            bias: true,
            layout: HeadLayout::AnchorMajor,
        }
    }
}

/// Declarative description of a detector build.
#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub input_size: usize,
    pub num_classes: usize,
    /// Anchors per pyramid level (`k`).
    pub anchors_per_level: usize,
    pub seed: u64,
    pub backbone: BackboneSpec,
    pub fpn: FpnSpec,
    pub head: HeadSpec,
}

impl Default for DetectorConfig {
    /// The shipped 416x416, 80-class configuration, tuned so the analytic
    /// totals land on the published budget (~1470 MMACs, ~3.2M parameters).
    fn default() -> Self {
        DetectorConfig {
            input_size: 416,
            num_classes: 80,
            anchors_per_level: 3,
            seed: 0,
            backbone: BackboneSpec {
                stem_channels: 32,
                groups: vec![
                    GroupSpec {
                        modules: 3,
                        out_ch: 40,
                        downsample: true,
                    },
                    GroupSpec {
                        modules: 4,
                        out_ch: 88,
                        downsample: true,
                    },
                    GroupSpec {
                        modules: 5,
                        out_ch: 192,
                        downsample: true,
                    },
                    GroupSpec {
                        modules: 5,
                        out_ch: 448,
                        downsample: true,
                    },
                ],
                se_reduction: 4,
            },
            fpn: FpnSpec {
                width: 112,
                repeats: 3,
                middle_rule: MiddleRule::GeometricMean,
            },
            head: HeadSpec::default(),
        }
    }
}

impl DetectorConfig {
    /// A deliberately tiny configuration for end-to-end gradient checks.
    pub fn toy() -> Self {
        DetectorConfig {
            input_size: 64,
            num_classes: 2,
            anchors_per_level: 2,
            seed: 0,
            backbone: BackboneSpec {
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
            },
            fpn: FpnSpec {
                width: 8,
                repeats: 1,
                middle_rule: MiddleRule::GeometricMean,
            },
            head: HeadSpec::default(),
        }
    }

    /// Raw channels the head emits per level: `k * (4 + 1 + num_classes)`.
    pub fn head_channels(&self) -> usize {
        self.anchors_per_level * (5 + self.num_classes)
    }

    /// Same configuration at a different input resolution.
    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |path: &str, detail: String| -> Error {
            Error::Config {
                path: String::from(path),
                detail,
            }
        };
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(bad(
                "input_size",
                format!("{} must be a positive multiple of 32", self.input_size),
            ));
        }
        if self.num_classes == 0 {
            return Err(bad("num_classes", String::from("must be at least 1")));
        }
        if self.anchors_per_level == 0 {
            return Err(bad("anchors_per_level", String::from("must be at least 1")));
        }
        if self.fpn.width == 0 || self.fpn.width % 2 != 0 {
            return Err(bad(
                "fpn.width",
                format!("{} must be positive and even", self.fpn.width),
            ));
        }
        if self.backbone.stem_channels == 0 {
            return Err(bad(
                "backbone.stem_channels",
                String::from("must be positive"),
            ));
        }
        for (i, g) in self.backbone.groups.iter().enumerate() {
            if g.modules == 0 {
                return Err(bad(
                    &format!("backbone.groups[{i}].modules"),
                    String::from("must be at least 1"),
                ));
            }
            if g.out_ch == 0 || g.out_ch % 2 != 0 {
                return Err(bad(
                    &format!("backbone.groups[{i}].channels"),
                    format!("{} must be positive and even", g.out_ch),
                ));
            }
        }
        Ok(())
    }
}

/// Builds the full detector graph. The five outputs are the raw head maps,
/// largest level first; decoding lives in [`post`](crate::post).
pub fn build_detector<T: Real>(cfg: &DetectorConfig) -> Result<Network<T>> {
    cfg.validate()?;
    let input_shape = Shape::new(1, 3, cfg.input_size, cfg.input_size);
    let mut b = GraphBuilder::<T>::new(input_shape, cfg.seed);
    let input = b.input();
    let taps = build_backbone(&mut b, input, &cfg.backbone)?;
    let levels = expand_pyramid(&mut b, &taps.nodes, cfg.fpn.width, cfg.fpn.middle_rule)?;
    let levels = build_fpn_repeat(&mut b, &levels, cfg.fpn.repeats)?;

    // One parameter set, applied to all five levels.
    let (head_w, head_b) =
        b.shared_pointwise_params("head", cfg.fpn.width, cfg.head_channels(), cfg.head.bias);
    let mut outputs = Vec::with_capacity(5);
    for (i, &level) in levels.iter().enumerate() {
        outputs.push(b.pointwise_shared(&format!("head.l{i}"), level, head_w, head_b)?);
    }
    Ok(b.finish(outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{MacCounter, Tensor};

    #[test]
    fn default_config_shapes_and_head_channels() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.head_channels(), 255);
        let net = build_detector::<f32>(&cfg).unwrap();
        let sizes: Vec<usize> = net
            .outputs()
            .iter()
            .map(|&id| net.node(id).out_shape.height)
            .collect();
        assert_eq!(sizes, vec![52, 37, 26, 18, 13]);
        for &id in net.outputs() {
            assert_eq!(net.node(id).out_shape.channels, 255);
        }
    }

    #[test]
    fn head_weights_are_shared_across_levels() {
        let cfg = DetectorConfig::toy();
        let mut net = build_detector::<f64>(&cfg).unwrap();
        let wid = net.param_id("head.weight").unwrap();
        for &out in net.outputs() {
            let ids = net.node(out).op.param_ids();
            assert!(ids.contains(&wid), "level head must reference head.weight");
        }
        // Updating the single parameter changes every level's output.
        let x = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, c, y, x| {
            ((c * 31 + y * 7 + x) % 13) as f64 * 0.05
        });
        let before = net.forward(&x, &mut MacCounter::new()).unwrap();
        let shape = net.param(wid).value.shape();
        net.set_param(wid, Tensor::filled(shape, 0.123)).unwrap();
        let after = net.forward(&x, &mut MacCounter::new()).unwrap();
        for (b, a) in before.iter().zip(&after) {
            assert_ne!(b.data(), a.data());
        }
    }

    #[test]
    fn config_errors_carry_key_paths() {
        let mut cfg = DetectorConfig::toy();
        cfg.fpn.width = 7;
        let err = build_detector::<f32>(&cfg).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "fpn.width"),
            other => panic!("unexpected error {other:?}"),
        }
        let mut cfg = DetectorConfig::toy();
        cfg.input_size = 100;
        let err = build_detector::<f32>(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config { path, .. } if path == "input_size"));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_detector::<f32>(&DetectorConfig::toy()).unwrap();
        let b = build_detector::<f32>(&DetectorConfig::toy()).unwrap();
        assert_eq!(a.nodes().len(), b.nodes().len());
        for (na, nb) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(na.name, nb.name);
            assert_eq!(na.out_shape, nb.out_shape);
        }
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
    }
}
