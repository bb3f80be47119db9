//! Scale-constrained anchor generation.
//!
//! Ground-truth boxes are partitioned into one bin per pyramid level by the
//! thresholds `[0, 1/2^(l-1), 1/2^(l-2), ..., 1]`, then each bin is
//! clustered independently with k-means under the IoU distance, so every
//! level's anchors stay in that level's scale range instead of collapsing
//! toward the smallest objects.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A box as a normalized (width, height) pair; positions are irrelevant for
/// anchor clustering. Loaded boxes satisfy `0 < w <= 1` and `0 < h <= 1`.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct BoxWH {
    pub w: f64,
    pub h: f64,
}

impl BoxWH {
    /// Validating constructor for normalized boxes.
    pub fn new(w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(Error::Constraint {
                name: "box size",
                detail: alloc::format!("({w}, {h}) is outside (0, 1]"),
            });
        }
        Ok(BoxWH { w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Scalar size used for scale binning.
    pub fn scale(&self, mode: ScaleMode) -> f64 {
        match mode {
            ScaleMode::GeometricMean => num_traits::Float::sqrt(self.w * self.h),
            ScaleMode::MaxSide => self.w.max(self.h),
        }
    }
}

/// Scalar scale proxy for a (w, h) box.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ScaleMode {
    /// `sqrt(w * h)` (default).
    #[default]
    GeometricMean,
    /// `max(w, h)`.
    MaxSide,
}

/// How a cluster is summarized into an anchor.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum CenterMode {
    /// Elementwise mean of the assigned boxes (default).
    #[default]
    Mean,
    /// The assigned box minimizing total IoU distance to the others.
    Medoid,
}

/// IoU of two boxes laid co-centered, the standard metric for (w, h)-only
/// anchor clustering.
pub fn iou_wh(a: &BoxWH, b: &BoxWH) -> f64 {
    let inter = a.w.min(b.w) * a.h.min(b.h);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Scale thresholds `[0, 1/2^(l-1), 1/2^(l-2), ..., 1]` for `l` levels.
pub fn scale_thresholds(levels: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(levels + 1);
    s.push(0.0);
    for i in 1..=levels {
        s.push(1.0 / (1u64 << (levels - i)) as f64);
    }
    s
}

/// Boxes partitioned into per-level scale bins.
#[derive(Clone, Debug)]
pub struct ScaleBins {
    /// `levels + 1` ascending thresholds.
    pub thresholds: Vec<f64>,
    /// Bin `i` holds boxes with `thresholds[i] <= scale < thresholds[i+1]`
    /// (the top bin closing at 1 inclusive).
    pub bins: Vec<Vec<BoxWH>>,
}

/// Partitions boxes by scale into `levels` bins. Empty bins are allowed;
/// callers flag them.
pub fn bin_by_scale(boxes: &[BoxWH], levels: usize, mode: ScaleMode) -> Result<ScaleBins> {
    if levels < 2 {
        return Err(Error::Constraint {
            name: "scale binning",
            detail: alloc::format!("need at least 2 levels, got {levels}"),
        });
    }
    let thresholds = scale_thresholds(levels);
    let mut bins = vec![Vec::new(); levels];
    for &b in boxes {
        let s = b.scale(mode);
        let mut idx = levels - 1;
        for i in 0..levels {
            if s >= thresholds[i] && s < thresholds[i + 1] {
                idx = i;
                break;
            }
        }
        // scale == 1 falls through the strict upper bounds into the top bin
        bins[idx].push(b);
    }
    Ok(ScaleBins { thresholds, bins })
}

/// Outcome of one k-means run.
#[derive(Clone, Debug)]
pub struct KmeansResult {
    /// Cluster centers sorted by area, ascending.
    pub centers: Vec<BoxWH>,
    pub iterations: usize,
    /// Mean IoU distance to the assigned center, sampled after each
    /// assignment step.
    pub objective_trace: Vec<f64>,
    /// Final assignment of each input box to a center index.
    pub assignments: Vec<usize>,
}

fn mean_center(boxes: &[BoxWH], members: &[usize]) -> BoxWH {
    let n = members.len() as f64;
    let (mut w, mut h) = (0.0, 0.0);
    for &i in members {
        w += boxes[i].w;
        h += boxes[i].h;
    }
    BoxWH { w: w / n, h: h / n }
}

fn medoid_center(boxes: &[BoxWH], members: &[usize]) -> BoxWH {
    let mut best = members[0];
    let mut best_cost = f64::INFINITY;
    for &i in members {
        let cost: f64 = members
            .iter()
            .map(|&j| 1.0 - iou_wh(&boxes[i], &boxes[j]))
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best = i;
        }
    }
    boxes[best]
}

/// K-means over (w, h) boxes with distance `1 - IoU`.
///
/// Initialization is farthest-point seeding from a deterministic seed;
/// assignment ties break toward the lowest center index; centers update as
/// the elementwise mean (or medoid) of their members; an emptied cluster is
/// re-seeded to the box farthest from its current center. Runs until the
/// assignment is stable or 300 iterations.
///
/// The mean of a cluster does not always reduce the summed IoU distance
/// (the mean minimizes squared Euclidean distance, not `1 - IoU`), so
/// during iteration each cluster keeps its previous center whenever the
/// candidate update would cost more. That guard makes the objective trace
/// non-increasing by construction: assignments are optimal for the centers
/// they see, accepted updates never raise a cluster's cost, and re-seeding
/// an empty cluster moves a center no box is assigned to. Once the
/// partition has stabilized, the returned centers are the summaries (mean
/// or medoid) of the final clusters themselves.
pub fn kmeans_iou(
    boxes: &[BoxWH],
    k: usize,
    seed: u64,
    center_mode: CenterMode,
) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::InvalidDim {
            context: "kmeans k",
            value: 0,
        });
    }
    if boxes.len() < k {
        return Err(Error::TooFewBoxes {
            have: boxes.len(),
            need: k,
        });
    }
    let n = boxes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Farthest-point seeding.
    let mut centers: Vec<BoxWH> = Vec::with_capacity(k);
    centers.push(boxes[rng.random_range(0..n)]);
    while centers.len() < k {
        let mut far_idx = 0;
        let mut far_dist = -1.0;
        for (i, b) in boxes.iter().enumerate() {
            let d = centers
                .iter()
                .map(|c| 1.0 - iou_wh(b, c))
                .fold(f64::INFINITY, f64::min);
            if d > far_dist {
                far_dist = d;
                far_idx = i;
            }
        }
        centers.push(boxes[far_idx]);
    }

    let mut assignments = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for iter in 0..300 {
        iterations = iter + 1;
        let mut changed = false;
        let mut objective = 0.0;
        for (i, b) in boxes.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centers.iter().enumerate() {
                let d = 1.0 - iou_wh(b, c);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            objective += best_d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        trace.push(objective / n as f64);
        if !changed && iter > 0 {
            break;
        }

        for ci in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == ci).collect();
            if members.is_empty() {
                // Re-seed to the box farthest from its assigned center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = 1.0 - iou_wh(&boxes[a], &centers[assignments[a]]);
                        let db = 1.0 - iou_wh(&boxes[b], &centers[assignments[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers[ci] = boxes[far];
            } else {
                let candidate = match center_mode {
                    CenterMode::Mean => mean_center(boxes, &members),
                    CenterMode::Medoid => medoid_center(boxes, &members),
                };
                let cluster_cost = |c: &BoxWH| -> f64 {
                    members.iter().map(|&i| 1.0 - iou_wh(&boxes[i], c)).sum()
                };
                if cluster_cost(&candidate) <= cluster_cost(&centers[ci]) {
                    centers[ci] = candidate;
                }
            }
        }
    }

    // Summarize the final clusters; empty ones keep their working center.
    for ci in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == ci).collect();
        if !members.is_empty() {
            centers[ci] = match center_mode {
                CenterMode::Mean => mean_center(boxes, &members),
                CenterMode::Medoid => medoid_center(boxes, &members),
            };
        }
    }

    // Sort centers by area ascending and remap the assignment indices.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].area().partial_cmp(&centers[b].area()).unwrap());
    let sorted: Vec<BoxWH> = order.iter().map(|&i| centers[i]).collect();
    let mut remap = vec![0usize; k];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        remap[old_idx] = new_idx;
    }
    for a in &mut assignments {
        *a = remap[*a];
    }
    Ok(KmeansResult {
        centers: sorted,
        iterations,
        objective_trace: trace,
        assignments,
    })
}

/// Anchors for one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelAnchors {
    pub anchors: Vec<BoxWH>,
    /// The bin had fewer than `k` boxes; anchors are evenly spaced square
    /// sizes spanning the bin instead of cluster centers.
    pub fallback: bool,
    /// At least one cluster center fell outside the bin and was rescaled to
    /// the nearest bin edge.
    pub clamped: bool,
}

/// Per-level anchor priors plus the thresholds that bound them.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub levels: Vec<LevelAnchors>,
    pub thresholds: Vec<f64>,
}

impl AnchorSet {
    /// Total anchor count, `levels * k`.
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.anchors.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings for [`generate_anchor_set`].
#[derive(Clone, Copy, Debug)]
pub struct AnchorGenConfig {
    pub levels: usize,
    pub per_level: usize,
    pub seed: u64,
    pub scale_mode: ScaleMode,
    pub center_mode: CenterMode,
}

impl AnchorGenConfig {
    pub fn new(levels: usize, per_level: usize, seed: u64) -> Self {
        AnchorGenConfig {
            levels,
            per_level,
            seed,
            scale_mode: ScaleMode::default(),
            center_mode: CenterMode::default(),
        }
    }
}

fn clamp_to_bin(anchor: BoxWH, lo: f64, hi: f64, top: bool, mode: ScaleMode) -> (BoxWH, bool) {
    let s = anchor.scale(mode);
    // Upper edges are exclusive except at the top bin, which closes at 1.
    let hi_target = if top { hi } else { hi * (1.0 - 1e-9) };
    let target = if s < lo {
        lo
    } else if (top && s > hi) || (!top && s >= hi) {
        hi_target
    } else {
        return (anchor, false);
    };
    let f = target / s;
    (
        BoxWH {
            w: (anchor.w * f).min(1.0),
            h: (anchor.h * f).min(1.0),
        },
        true,
    )
}

/// Bins boxes by scale, clusters each bin, and emits `k` anchors per level.
/// Underfull bins fall back to evenly spaced square sizes spanning the bin;
/// out-of-bin cluster centers are rescaled to the bin edge. Both conditions
/// are flagged, never silent. Deterministic for a given seed.
pub fn generate_anchor_set(boxes: &[BoxWH], cfg: &AnchorGenConfig) -> Result<AnchorSet> {
    if boxes.is_empty() {
        return Err(Error::EmptyInput("generate_anchor_set"));
    }
    let binned = bin_by_scale(boxes, cfg.levels, cfg.scale_mode)?;
    let k = cfg.per_level;
    if k == 0 {
        return Err(Error::InvalidDim {
            context: "anchors per level",
            value: 0,
        });
    }
    let mut levels = Vec::with_capacity(cfg.levels);
    for (i, bin) in binned.bins.iter().enumerate() {
        let (lo, hi) = (binned.thresholds[i], binned.thresholds[i + 1]);
        let top = i == cfg.levels - 1;
        if bin.len() < k {
            let step = (hi - lo) / k as f64;
            let anchors = (0..k)
                .map(|j| {
                    let s = (lo + (j as f64 + 0.5) * step).min(1.0);
                    BoxWH { w: s, h: s }
                })
                .collect();
            levels.push(LevelAnchors {
                anchors,
                fallback: true,
                clamped: false,
            });
            continue;
        }
        let result = kmeans_iou(bin, k, cfg.seed, cfg.center_mode)?;
        let mut clamped = false;
        let anchors = result
            .centers
            .into_iter()
            .map(|c| {
                let (a, was_clamped) = clamp_to_bin(c, lo, hi, top, cfg.scale_mode);
                clamped |= was_clamped;
                a
            })
            .collect();
        levels.push(LevelAnchors {
            anchors,
            fallback: false,
            clamped,
        });
    }
    Ok(AnchorSet {
        levels,
        thresholds: binned.thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_reference_values() {
        let a = BoxWH { w: 2.0, h: 2.0 };
        let b = BoxWH { w: 4.0, h: 4.0 };
        assert!((iou_wh(&a, &b) - 0.25).abs() < 1e-12);
        assert_eq!(iou_wh(&a, &a), 1.0);
        let eps = 1e-9;
        let tall = BoxWH { w: 1.0, h: eps };
        let wide = BoxWH { w: eps, h: 1.0 };
        let v = iou_wh(&tall, &wide);
        assert!((v - eps * eps / (2.0 * eps - eps * eps)).abs() < 1e-15);
        assert!(v < 1e-8);
    }

    #[test]
    fn thresholds_for_five_levels() {
        let s = scale_thresholds(5);
        assert_eq!(
            s,
            vec![0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 1.0]
        );
    }

    #[test]
    fn binning_places_reference_boxes() {
        let boxes = [
            BoxWH { w: 0.3, h: 0.3 },
            BoxWH { w: 1.0, h: 1.0 },
            BoxWH { w: 0.05, h: 0.05 },
        ];
        let bins = bin_by_scale(&boxes, 5, ScaleMode::GeometricMean).unwrap();
        assert_eq!(bins.bins[3], vec![BoxWH { w: 0.3, h: 0.3 }]);
        assert_eq!(bins.bins[4], vec![BoxWH { w: 1.0, h: 1.0 }]);
        assert_eq!(bins.bins[0], vec![BoxWH { w: 0.05, h: 0.05 }]);
    }

    #[test]
    fn binning_partitions_every_box_once() {
        let boxes: Vec<BoxWH> = (1..=50)
            .map(|i| BoxWH {
                w: i as f64 / 50.0,
                h: (51 - i) as f64 / 50.0,
            })
            .collect();
        let bins = bin_by_scale(&boxes, 5, ScaleMode::GeometricMean).unwrap();
        assert_eq!(bins.bins.iter().map(|b| b.len()).sum::<usize>(), 50);
        for (i, bin) in bins.bins.iter().enumerate() {
            for b in bin {
                let s = b.scale(ScaleMode::GeometricMean);
                assert!(s >= bins.thresholds[i]);
                let hi = bins.thresholds[i + 1];
                assert!(if i == 4 { s <= hi } else { s < hi });
            }
        }
    }

    #[test]
    fn kmeans_single_cluster_mean() {
        let boxes = [BoxWH { w: 2.0, h: 2.0 }, BoxWH { w: 4.0, h: 4.0 }];
        let r = kmeans_iou(&boxes, 1, 0, CenterMode::Mean).unwrap();
        assert_eq!(r.centers, vec![BoxWH { w: 3.0, h: 3.0 }]);
    }

    #[test]
    fn kmeans_k_equals_n_is_a_fixed_point() {
        let boxes = [
            BoxWH { w: 0.1, h: 0.1 },
            BoxWH { w: 0.3, h: 0.2 },
            BoxWH { w: 0.7, h: 0.9 },
        ];
        let r = kmeans_iou(&boxes, 3, 42, CenterMode::Mean).unwrap();
        let mut got = r.centers.clone();
        got.sort_by(|a, b| a.area().partial_cmp(&b.area()).unwrap());
        let mut want = boxes.to_vec();
        want.sort_by(|a, b| a.area().partial_cmp(&b.area()).unwrap());
        assert_eq!(got, want);
        assert!(r.objective_trace.last().unwrap() < &1e-12);
    }

    #[test]
    fn kmeans_rejects_too_few_boxes() {
        let boxes = [BoxWH { w: 0.5, h: 0.5 }];
        assert_eq!(
            kmeans_iou(&boxes, 2, 0, CenterMode::Mean).unwrap_err(),
            Error::TooFewBoxes { have: 1, need: 2 }
        );
    }

    #[test]
    fn kmeans_is_deterministic() {
        let boxes: Vec<BoxWH> = (0..20)
            .map(|i| BoxWH {
                w: 0.1 + 0.04 * (i % 5) as f64,
                h: 0.1 + 0.03 * (i % 7) as f64,
            })
            .collect();
        let a = kmeans_iou(&boxes, 4, 9, CenterMode::Mean).unwrap();
        let b = kmeans_iou(&boxes, 4, 9, CenterMode::Mean).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn degenerate_bin_of_identical_boxes_yields_that_box() {
        let boxes = vec![BoxWH { w: 0.3, h: 0.3 }; 5];
        let cfg = AnchorGenConfig::new(5, 3, 0);
        let set = generate_anchor_set(&boxes, &cfg).unwrap();
        // Scale 0.3 lands in bin 3; its anchors are all (0.3, 0.3).
        assert!(!set.levels[3].fallback);
        for a in &set.levels[3].anchors {
            assert_eq!(*a, BoxWH { w: 0.3, h: 0.3 });
        }
        // Other bins had no boxes and fall back, flagged.
        for i in [0usize, 1, 2, 4] {
            assert!(set.levels[i].fallback);
            assert_eq!(set.levels[i].anchors.len(), 3);
        }
        assert_eq!(set.len(), 15);
    }

    #[test]
    fn fallback_anchors_span_their_bin() {
        let boxes = vec![BoxWH { w: 0.3, h: 0.3 }; 5];
        let set = generate_anchor_set(&boxes, &AnchorGenConfig::new(5, 3, 0)).unwrap();
        for (i, level) in set.levels.iter().enumerate() {
            for a in &level.anchors {
                let s = a.scale(ScaleMode::GeometricMean);
                assert!(
                    s >= set.thresholds[i] && s < set.thresholds[i + 1] || (i == 4 && s <= 1.0)
                );
            }
        }
    }
}
