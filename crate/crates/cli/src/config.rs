//! Declarative detector configuration file (TOML key-value tree).

use std::path::Path;

use anyhow::{bail, Context};
use csl_core::graph::{
    BackboneSpec, DetectorConfig, FpnSpec, GroupSpec, HeadLayout, HeadSpec, MiddleRule,
};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default = "d_input_size")]
    pub input_size: usize,
    #[serde(default = "d_num_classes")]
    pub num_classes: usize,
    #[serde(default = "d_anchors_per_level")]
    pub anchors_per_level: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub fpn: FpnConfig,
    #[serde(default)]
    pub head: HeadConfig,
}

fn d_input_size() -> usize {
    416
}
fn d_num_classes() -> usize {
    80
}
fn d_anchors_per_level() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    #[serde(default = "d_se_reduction")]
    pub se_reduction: usize,
    pub groups: Vec<GroupConfig>,
}

fn d_se_reduction() -> usize {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub modules: usize,
    pub channels: usize,
    #[serde(default = "d_true")]
    pub downsample: bool,
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpnConfig {
    pub width: usize,
    pub repeats: usize,
    #[serde(default)]
    pub middle_rule: MiddleRuleName,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MiddleRuleName {
    #[default]
    GeometricMean,
    ArithmeticMean,
    PowerOfTwo,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default = "d_true")]
    pub bias: bool,
    #[serde(default)]
    pub layout: HeadLayoutName,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HeadLayoutName {
    #[default]
    AnchorMajor,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let core = DetectorConfig::default().backbone;
        BackboneConfig {
            stem_channels: core.stem_channels,
            se_reduction: core.se_reduction,
            groups: core
                .groups
                .iter()
                .map(|g| GroupConfig {
                    modules: g.modules,
                    channels: g.out_ch,
                    downsample: g.downsample,
                })
                .collect(),
        }
    }
}

impl Default for FpnConfig {
    fn default() -> Self {
        let core = DetectorConfig::default().fpn;
        FpnConfig {
            width: core.width,
            repeats: core.repeats,
            middle_rule: MiddleRuleName::GeometricMean,
        }
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            bias: true,
            layout: HeadLayoutName::AnchorMajor,
        }
    }
}

impl FileConfig {
    pub fn into_core(self) -> DetectorConfig {
        DetectorConfig {
            input_size: self.input_size,
            num_classes: self.num_classes,
            anchors_per_level: self.anchors_per_level,
            seed: self.seed,
            backbone: BackboneSpec {
                stem_channels: self.backbone.stem_channels,
                se_reduction: self.backbone.se_reduction,
                groups: self
                    .backbone
                    .groups
                    .iter()
                    .map(|g| GroupSpec {
                        modules: g.modules,
                        out_ch: g.channels,
                        downsample: g.downsample,
                    })
                    .collect(),
            },
            fpn: FpnSpec {
                width: self.fpn.width,
                repeats: self.fpn.repeats,
                middle_rule: match self.fpn.middle_rule {
                    MiddleRuleName::GeometricMean => MiddleRule::GeometricMean,
                    MiddleRuleName::ArithmeticMean => MiddleRule::ArithmeticMean,
                    MiddleRuleName::PowerOfTwo => MiddleRule::PowerOfTwo,
                },
            },
            head: HeadSpec {
                bias: self.head.bias,
                layout: match self.head.layout {
                    HeadLayoutName::AnchorMajor => HeadLayout::AnchorMajor,
                },
            },
        }
    }
}

/// Loads a detector config. Without a path the shipped default is used.
/// TOML errors carry the offending key path and location.
pub fn load(path: Option<&Path>) -> anyhow::Result<DetectorConfig> {
    match path {
        None => Ok(DetectorConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            if text.trim().is_empty() {
                bail!("config {}: file is empty", p.display());
            }
            let parsed: FileConfig = toml::from_str(&text)
                .map_err(|e| anyhow::anyhow!("config {}: {e}", p.display()))?;
            Ok(parsed.into_core())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn default_round_trips_through_the_schema() {
        let text = r#"
input_size = 416
num_classes = 80
anchors_per_level = 3
seed = 0

[backbone]
stem_channels = 32
se_reduction = 4

[[backbone.groups]]
modules = 3
channels = 40

[[backbone.groups]]
modules = 4
channels = 88

[[backbone.groups]]
modules = 5
channels = 192

[[backbone.groups]]
modules = 5
channels = 448

[fpn]
width = 112
repeats = 3
middle_rule = "geometric-mean"

[head]
bias = true
layout = "anchor-major"
"#;
        let parsed: FileConfig = toml::from_str(text).unwrap();
        let core = parsed.into_core();
        let def = DetectorConfig::default();
        assert_eq!(core.input_size, def.input_size);
        assert_eq!(core.backbone.groups.len(), def.backbone.groups.len());
        assert_eq!(core.fpn.width, def.fpn.width);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let err = toml::from_str::<FileConfig>("inptu_size = 416\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("inptu_size"), "{msg}");
    }

    #[test]
    fn bad_nested_value_names_the_key() {
        let err =
            toml::from_str::<FileConfig>("[fpn]\nwidth = \"wide\"\nrepeats = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("width") || msg.contains("line"), "{msg}");
    }

    #[test]
    fn missing_file_is_an_error_and_none_is_default() {
        assert!(load(Some(Path::new("/nonexistent/cfg.toml"))).is_err());
        let def = load(None).unwrap();
        assert_eq!(def.input_size, 416);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "num_classes = 20").unwrap();
        let cfg = load(Some(f.path())).unwrap();
        assert_eq!(cfg.num_classes, 20);
        assert_eq!(cfg.input_size, 416);
    }
}
