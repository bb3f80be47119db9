//! Five-level feature pyramid: three backbone taps are projected to a common
//! width, two middle scales are synthesized between them, and stacked fusion
//! blocks mix neighboring levels on alternating parities.

use alloc::format;
use alloc::vec::Vec;

use super::csl::{build_csl_module, CslModuleSpec, CslVariant};
use super::{GraphBuilder, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// How the resolution of an inserted middle level is derived from its two
/// neighbors.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MiddleRule {
    /// Rounded geometric mean of the neighbor extents (default).
    GeometricMean,
    /// Rounded arithmetic mean.
    ArithmeticMean,
    /// Power of two nearest to the geometric mean.
    PowerOfTwo,
}

impl MiddleRule {
    fn apply(&self, a: usize, b: usize) -> usize {
        let geo = num_traits::Float::sqrt((a * b) as f64);
        let v = match self {
            MiddleRule::GeometricMean => geo,
            MiddleRule::ArithmeticMean => (a + b) as f64 / 2.0,
            MiddleRule::PowerOfTwo => {
                let exp = num_traits::Float::round(num_traits::Float::log2(geo));
                num_traits::Float::powf(2.0f64, exp)
            }
        };
        num_traits::Float::round(v) as usize
    }
}

/// Pyramid layout: common channel width, fusion stack depth, and the middle
/// resolution rule.
#[derive(Clone, Copy, Debug)]
pub struct FpnSpec {
    pub width: usize,
    pub repeats: usize,
    pub middle_rule: MiddleRule,
}

/// Expansion ratio used by every pyramid block.
pub const FPN_EXPANSION: usize = 2;

/// The five level resolutions a detector at `input_size` produces: taps at
/// strides 8/16/32 with a middle level between each neighboring pair.
pub fn pyramid_level_sizes(input_size: usize, rule: MiddleRule) -> Result<[usize; 5]> {
    if input_size == 0 || input_size % 32 != 0 {
        return Err(Error::Config {
            path: alloc::string::String::from("input_size"),
            detail: format!("{input_size} must be a positive multiple of 32"),
        });
    }
    let taps = [input_size / 8, input_size / 16, input_size / 32];
    let m0 = rule.apply(taps[0], taps[1]);
    let m1 = rule.apply(taps[1], taps[2]);
    let sizes = [taps[0], m0, taps[1], m1, taps[2]];
    for pair in sizes.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::Constraint {
                name: "pyramid middle resolution",
                detail: format!("level sizes {sizes:?} are not strictly decreasing"),
            });
        }
    }
    Ok(sizes)
}

fn fusion_module<T: Real>(
    b: &mut GraphBuilder<T>,
    parts: &[NodeId],
    width: usize,
    prefix: &str,
) -> Result<NodeId> {
    let sum = b.add(&format!("{prefix}.sum"), parts)?;
    let spec = CslModuleSpec {
        in_ch: width,
        out_ch: width,
        expansion: FPN_EXPANSION,
        kernel: 3,
        variant: CslVariant::Plain,
        se_reduction: 4,
    };
    build_csl_module(b, sum, &spec, &format!("{prefix}.csl"))
}

/// Projects the three taps to `width` channels and inserts a middle level
/// between each pair, yielding five levels ordered largest first. Each
/// middle level is the fused sum of its neighbors resized to the middle
/// resolution, refined by one CSL block.
pub fn expand_pyramid<T: Real>(
    b: &mut GraphBuilder<T>,
    taps: &[NodeId],
    width: usize,
    rule: MiddleRule,
) -> Result<[NodeId; 5]> {
    if taps.len() != 3 {
        return Err(Error::Constraint {
            name: "pyramid taps",
            detail: format!("expected 3 scale inputs, got {}", taps.len()),
        });
    }
    for pair in taps.windows(2) {
        let (a, bshape) = (b.shape_of(pair[0]), b.shape_of(pair[1]));
        if bshape.height >= a.height || bshape.width >= a.width {
            return Err(Error::Constraint {
                name: "pyramid taps",
                detail: format!("tap sizes must strictly decrease, got {a} then {bshape}"),
            });
        }
    }
    let mut proj = Vec::with_capacity(3);
    for (i, &tap) in taps.iter().enumerate() {
        let pw = b.pointwise(&format!("fpn.proj{i}.pw"), tap, width, false)?;
        let bn = b.affine(&format!("fpn.proj{i}.bn"), pw)?;
        proj.push(b.mish(&format!("fpn.proj{i}.mish"), bn)?);
    }

    let mut levels: Vec<NodeId> = Vec::with_capacity(5);
    for i in 0..2 {
        let up = proj[i];
        let down = proj[i + 1];
        let (us, ds) = (b.shape_of(up), b.shape_of(down));
        let mid_h = rule.apply(us.height, ds.height);
        let mid_w = rule.apply(us.width, ds.width);
        if mid_h >= us.height || mid_h <= ds.height || mid_w >= us.width || mid_w <= ds.width {
            return Err(Error::Constraint {
                name: "pyramid middle resolution",
                detail: format!(
                    "middle {mid_h}x{mid_w} does not fall strictly between {}x{} and {}x{}",
                    us.height, us.width, ds.height, ds.width
                ),
            });
        }
        let from_up = b.resize_nearest(&format!("fpn.mid{i}.from_up"), up, mid_h, mid_w)?;
        let from_down = b.resize_nearest(&format!("fpn.mid{i}.from_down"), down, mid_h, mid_w)?;
        let mid = fusion_module(b, &[from_up, from_down], width, &format!("fpn.mid{i}"))?;
        levels.push(proj[i]);
        levels.push(mid);
    }
    levels.push(proj[2]);
    Ok([levels[0], levels[1], levels[2], levels[3], levels[4]])
}

/// Stacks `repeats` fusion blocks over five equal-width levels. Each block
/// first rebuilds the even-indexed levels (2nd and 4th) from their
/// neighbors, then the odd-indexed ones (1st, 3rd, 5th); boundary levels use
/// only the neighbors they have. Neighbors are resized to the target level's
/// resolution (identity at the same scale), summed with the level itself,
/// and refined by one CSL block. `repeats = 0` leaves the levels untouched.
pub fn build_fpn_repeat<T: Real>(
    b: &mut GraphBuilder<T>,
    levels: &[NodeId; 5],
    repeats: usize,
) -> Result<[NodeId; 5]> {
    let width = b.shape_of(levels[0]).channels;
    for &l in levels.iter() {
        if b.shape_of(l).channels != width {
            return Err(Error::ShapeMismatch {
                context: "fpn levels must share a channel count",
                left: b.shape_of(levels[0]),
                right: b.shape_of(l),
            });
        }
    }
    let mut cur = *levels;
    for r in 0..repeats {
        for (pass, indices) in [("even", &[1usize, 3][..]), ("odd", &[0usize, 2, 4][..])] {
            let snapshot = cur;
            for &i in indices {
                let target = b.shape_of(snapshot[i]);
                let prefix = format!("fpn.r{r}.{pass}.l{i}");
                let mut parts: Vec<NodeId> = Vec::with_capacity(3);
                if i > 0 {
                    parts.push(b.resize_nearest(
                        &format!("{prefix}.from_prev"),
                        snapshot[i - 1],
                        target.height,
                        target.width,
                    )?);
                }
                parts.push(snapshot[i]);
                if i + 1 < 5 {
                    parts.push(b.resize_nearest(
                        &format!("{prefix}.from_next"),
                        snapshot[i + 1],
                        target.height,
                        target.width,
                    )?);
                }
                cur[i] = fusion_module(b, &parts, width, &prefix)?;
            }
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    fn three_taps(b: &mut GraphBuilder<f32>) -> Vec<NodeId> {
        // Synthetic taps at 52/26/13 from a 416 input via strided resizes.
        let x = b.input();
        let t0 = b.resize_nearest("t0", x, 52, 52).unwrap();
        let t1 = b.resize_nearest("t1", x, 26, 26).unwrap();
        let t2 = b.resize_nearest("t2", x, 13, 13).unwrap();
        vec![t0, t1, t2]
    }

    #[test]
    fn middle_levels_sit_at_rounded_geometric_means() {
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 416, 416), 0);
        let taps = three_taps(&mut b);
        let levels = expand_pyramid(&mut b, &taps, 16, MiddleRule::GeometricMean).unwrap();
        let sizes: Vec<usize> = levels.iter().map(|&l| b.shape_of(l).height).collect();
        assert_eq!(sizes, vec![52, 37, 26, 18, 13]);
        for &l in &levels {
            assert_eq!(b.shape_of(l).channels, 16);
        }
    }

    #[test]
    fn alternative_middle_rules() {
        assert_eq!(MiddleRule::GeometricMean.apply(52, 26), 37);
        assert_eq!(MiddleRule::GeometricMean.apply(26, 13), 18);
        assert_eq!(MiddleRule::ArithmeticMean.apply(52, 26), 39);
        assert_eq!(MiddleRule::PowerOfTwo.apply(52, 26), 32);
        assert_eq!(MiddleRule::PowerOfTwo.apply(26, 13), 16);
    }

    #[test]
    fn zero_repeats_is_identity() {
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 416, 416), 0);
        let taps = three_taps(&mut b);
        let levels = expand_pyramid(&mut b, &taps, 8, MiddleRule::GeometricMean).unwrap();
        let out = build_fpn_repeat(&mut b, &levels, 0).unwrap();
        assert_eq!(out, levels);
    }

    #[test]
    fn repeats_preserve_level_shapes() {
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 416, 416), 0);
        let taps = three_taps(&mut b);
        let levels = expand_pyramid(&mut b, &taps, 8, MiddleRule::GeometricMean).unwrap();
        let before: Vec<_> = levels.iter().map(|&l| b.shape_of(l)).collect();
        let out = build_fpn_repeat(&mut b, &levels, 2).unwrap();
        let after: Vec<_> = out.iter().map(|&l| b.shape_of(l)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn middle_rule_must_separate_tiny_pyramids() {
        // Taps 4/2/1 collapse: round(sqrt(2)) = 1 equals the lower neighbor.
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 3, 32, 32), 0);
        let x = b.input();
        let t0 = b.resize_nearest("t0", x, 4, 4).unwrap();
        let t1 = b.resize_nearest("t1", x, 2, 2).unwrap();
        let t2 = b.resize_nearest("t2", x, 1, 1).unwrap();
        let err = expand_pyramid(&mut b, &[t0, t1, t2], 8, MiddleRule::GeometricMean).unwrap_err();
        assert!(
            matches!(err, Error::Constraint { name, .. } if name == "pyramid middle resolution")
        );
    }
}
