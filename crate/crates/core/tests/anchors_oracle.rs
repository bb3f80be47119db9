//! Clustering checked against an exhaustive-seeding oracle on small
//! instances, plus pipeline-level determinism.

use csl_core::anchors::{
    generate_anchor_set, iou_wh, kmeans_iou, AnchorGenConfig, BoxWH, CenterMode, ScaleMode,
};

fn cost(boxes: &[BoxWH], centers: &[BoxWH]) -> f64 {
    boxes
        .iter()
        .map(|b| {
            centers
                .iter()
                .map(|c| 1.0 - iou_wh(b, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / boxes.len() as f64
}

/// Best cost reachable by one full Lloyd step (assign, mean-update,
/// re-assign) from every possible k-subset seeding.
fn exhaustive_single_step_oracle(boxes: &[BoxWH], k: usize) -> f64 {
    let n = boxes.len();
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let seeds: Vec<BoxWH> = subset.iter().map(|&i| boxes[i]).collect();
        // One Lloyd step.
        let mut members = vec![Vec::new(); k];
        for (bi, b) in boxes.iter().enumerate() {
            let mut ci = 0;
            let mut d = f64::INFINITY;
            for (i, c) in seeds.iter().enumerate() {
                let di = 1.0 - iou_wh(b, c);
                if di < d {
                    d = di;
                    ci = i;
                }
            }
            members[ci].push(bi);
        }
        let updated: Vec<BoxWH> = members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if m.is_empty() {
                    seeds[i]
                } else {
                    let inv = 1.0 / m.len() as f64;
                    BoxWH {
                        w: m.iter().map(|&j| boxes[j].w).sum::<f64>() * inv,
                        h: m.iter().map(|&j| boxes[j].h).sum::<f64>() * inv,
                    }
                }
            })
            .collect();
        best = best.min(cost(boxes, &updated));

        // Next k-subset in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] != i + n - k {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn planted_instance(seed: u64, clusters: usize, per_cluster: usize) -> Vec<BoxWH> {
    let centers = [(0.08, 0.1), (0.35, 0.3), (0.75, 0.8), (0.5, 0.15)];
    let mut boxes = Vec::new();
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 1000) as f64 / 1000.0
    };
    for c in 0..clusters {
        let (cw, ch) = centers[c % centers.len()];
        for _ in 0..per_cluster {
            boxes.push(BoxWH {
                w: (cw + (next() - 0.5) * 0.02).clamp(0.01, 1.0),
                h: (ch + (next() - 0.5) * 0.02).clamp(0.01, 1.0),
            });
        }
    }
    boxes
}

#[test]
fn converged_cost_beats_exhaustive_single_step_on_small_instances() {
    for seed in 0..8u64 {
        for (clusters, per_cluster, k) in [(2usize, 6usize, 2usize), (3, 4, 3), (2, 5, 2)] {
            let boxes = planted_instance(seed, clusters, per_cluster);
            assert!(boxes.len() <= 12);
            let result = kmeans_iou(&boxes, k, seed, CenterMode::Mean).unwrap();
            let final_cost = cost(&boxes, &result.centers);
            let oracle = exhaustive_single_step_oracle(&boxes, k);
            assert!(
                final_cost <= oracle + 1e-9,
                "seed {seed} clusters {clusters}: converged {final_cost} vs oracle {oracle}"
            );
        }
    }
}

#[test]
fn two_tight_clusters_recover_the_planted_partition() {
    let boxes = planted_instance(3, 2, 6);
    let result = kmeans_iou(&boxes, 2, 0, CenterMode::Mean).unwrap();
    // Boxes 0..6 share one label, 6..12 the other.
    let first = result.assignments[0];
    assert!(result.assignments[..6].iter().all(|&a| a == first));
    let second = result.assignments[6];
    assert_ne!(first, second);
    assert!(result.assignments[6..].iter().all(|&a| a == second));
    // Centers stay within each cluster's bounding box.
    for (ci, members) in [(first, &boxes[..6]), (second, &boxes[6..])] {
        let c = result.centers[ci];
        let (wmin, wmax) = members.iter().fold((f64::MAX, f64::MIN), |(lo, hi), b| {
            (lo.min(b.w), hi.max(b.w))
        });
        assert!(c.w >= wmin && c.w <= wmax);
    }
}

#[test]
fn medoid_mode_returns_member_boxes() {
    let boxes = planted_instance(1, 3, 4);
    let result = kmeans_iou(&boxes, 3, 1, CenterMode::Medoid).unwrap();
    for c in &result.centers {
        assert!(boxes.iter().any(|b| b == c), "medoid must be an input box");
    }
}

#[test]
fn anchor_pipeline_is_deterministic_and_in_bin() {
    let mut boxes = Vec::new();
    for i in 0..40 {
        let f = i as f64 / 40.0;
        boxes.push(BoxWH {
            w: 0.02 + 0.9 * f,
            h: 0.03 + 0.85 * f * f,
        });
    }
    let cfg = AnchorGenConfig::new(5, 3, 11);
    let a = generate_anchor_set(&boxes, &cfg).unwrap();
    let b = generate_anchor_set(&boxes, &cfg).unwrap();
    assert_eq!(a.len(), 15);
    for (la, lb) in a.levels.iter().zip(&b.levels) {
        assert_eq!(la.anchors, lb.anchors);
    }
    for (i, level) in a.levels.iter().enumerate() {
        for anchor in &level.anchors {
            let s = anchor.scale(ScaleMode::GeometricMean);
            let (lo, hi) = (a.thresholds[i], a.thresholds[i + 1]);
            if i == 4 {
                assert!(s >= lo && s <= hi, "level {i} anchor scale {s}");
            } else {
                assert!(s >= lo && s < hi, "level {i} anchor scale {s}");
            }
        }
    }
}
