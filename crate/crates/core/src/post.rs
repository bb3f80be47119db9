//! Decoding raw head outputs into detections, and soft-NMS suppression.
//!
//! Only the width/height path has two modes: exponential decoding
//! `w = w_anchor * e^t` and additive decoding `w = w_anchor + t`. The x/y
//! and scoring paths follow the usual one-stage convention — sigmoid cell
//! offsets for the center, `sigmoid(objectness) * sigmoid(best class)` for
//! the score — which this crate adopts as a documented choice.

use alloc::vec::Vec;

use crate::anchors::BoxWH;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Width/height decoding rule.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DecodeMode {
    /// `w = w_anchor * e^{t}`; cannot go negative but can exceed 1.
    Exponential,
    /// `w = w_anchor + t`; negatives clamp to 0 (flagged).
    Additive,
}

/// One decoded box. `x, y` is the box center; all coordinates are
/// normalized to [0, 1].
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: usize,
    pub score: f64,
}

/// Width/height pair produced by [`decode_wh`], with a flag when clamping
/// to [0, 1] changed the value.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct DecodedWh {
    pub w: f64,
    pub h: f64,
    pub clamped: bool,
}

/// Decodes a (tw, th) offset pair against an anchor. With zero offsets both
/// modes return the anchor unchanged.
pub fn decode_wh(anchor: &BoxWH, tw: f64, th: f64, mode: DecodeMode) -> DecodedWh {
    let (w, h) = match mode {
        DecodeMode::Exponential => (
            anchor.w * num_traits::Float::exp(tw),
            anchor.h * num_traits::Float::exp(th),
        ),
        DecodeMode::Additive => (anchor.w + tw, anchor.h + th),
    };
    let (cw, ch) = (w.clamp(0.0, 1.0), h.clamp(0.0, 1.0));
    DecodedWh {
        w: cw,
        h: ch,
        clamped: cw != w || ch != h,
    }
}

/// Detections from one level plus bookkeeping flags.
#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    pub detections: Vec<Detection>,
    /// Count of boxes whose width or height had to be clamped into [0, 1].
    pub clamped: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + num_traits::Float::exp(-x))
    } else {
        let e = num_traits::Float::exp(x);
        e / (1.0 + e)
    }
}

/// Decodes one level's raw head map (batch 1) against that level's anchors.
///
/// The channel layout is anchor-major: anchor `a` owns channels
/// `a*(5+num_classes) ..` as (tx, ty, tw, th, objectness, class scores...).
/// Each (cell, anchor) yields one candidate with `x = (cell_x +
/// sigmoid(tx)) / grid_w` (y likewise), the best class by sigmoid score
/// (ties to the lowest id), and `score = sigmoid(obj) * sigmoid(class)`.
/// Candidates scoring below `score_thresh` are dropped.
pub fn decode_level<T: Real>(
    raw: &Tensor<T>,
    anchors: &[BoxWH],
    num_classes: usize,
    mode: DecodeMode,
    score_thresh: f64,
) -> Result<DecodeOutcome> {
    let s = raw.shape();
    if s.batch != 1 {
        return Err(Error::Layout {
            detail: alloc::format!("decode expects batch 1, got {}", s.batch),
        });
    }
    if num_classes == 0 {
        return Err(Error::InvalidDim {
            context: "decode num_classes",
            value: 0,
        });
    }
    let per_anchor = 5 + num_classes;
    let expected = anchors.len() * per_anchor;
    if anchors.is_empty() || s.channels != expected {
        return Err(Error::Layout {
            detail: alloc::format!(
                "raw tensor has {} channels but {} anchors x (5 + {} classes) needs {}",
                s.channels,
                anchors.len(),
                num_classes,
                expected
            ),
        });
    }
    let (gh, gw) = (s.height, s.width);
    let mut detections = Vec::new();
    let mut clamped = 0;
    for cy in 0..gh {
        for cx in 0..gw {
            for (a, anchor) in anchors.iter().enumerate() {
                let ch = |i: usize| raw.at(0, a * per_anchor + i, cy, cx).as_f64();
                let x = (cx as f64 + sigmoid(ch(0))) / gw as f64;
                let y = (cy as f64 + sigmoid(ch(1))) / gh as f64;
                let wh = decode_wh(anchor, ch(2), ch(3), mode);
                if wh.clamped {
                    clamped += 1;
                }
                let obj = sigmoid(ch(4));
                let mut class_id = 0;
                let mut class_score = sigmoid(ch(5));
                for c in 1..num_classes {
                    let sc = sigmoid(ch(5 + c));
                    if sc > class_score {
                        class_score = sc;
                        class_id = c;
                    }
                }
                let score = obj * class_score;
                if score >= score_thresh {
                    detections.push(Detection {
                        x,
                        y,
                        w: wh.w,
                        h: wh.h,
                        class_id,
                        score,
                    });
                }
            }
        }
    }
    Ok(DecodeOutcome {
        detections,
        clamped,
    })
}

/// Corner-style IoU of two center-format boxes.
pub fn corner_iou(a: &Detection, b: &Detection) -> f64 {
    let ax1 = a.x - a.w / 2.0;
    let ay1 = a.y - a.h / 2.0;
    let ax2 = a.x + a.w / 2.0;
    let ay2 = a.y + a.h / 2.0;
    let bx1 = b.x - b.w / 2.0;
    let by1 = b.y - b.h / 2.0;
    let bx2 = b.x + b.w / 2.0;
    let by2 = b.y + b.h / 2.0;
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn selection_order(a: &Detection, b: &Detection) -> core::cmp::Ordering {
    // Highest score first; ties prefer the smaller class id, then smaller x.
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(core::cmp::Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.x.partial_cmp(&b.x).unwrap_or(core::cmp::Ordering::Equal))
}

/// Gaussian soft-NMS. Iteratively keeps the highest-scoring remaining
/// detection and decays every same-class survivor by
/// `exp(-IoU^2 / sigma)`; survivors falling below `final_thresh` are
/// dropped. Scores never increase, and the first selection is never
/// reordered. `sigma` must be positive.
pub fn soft_nms(dets: &[Detection], sigma: f64, final_thresh: f64) -> Vec<Detection> {
    assert!(sigma > 0.0, "soft_nms sigma must be positive");
    let mut remaining: Vec<Detection> = dets.to_vec();
    let mut kept = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| selection_order(a, b))
            .map(|(i, _)| i)
            .unwrap();
        let chosen = remaining.swap_remove(best);
        for d in &mut remaining {
            if d.class_id == chosen.class_id {
                let iou = corner_iou(&chosen, d);
                d.score *= num_traits::Float::exp(-(iou * iou) / sigma);
            }
        }
        remaining.retain(|d| d.score >= final_thresh);
        kept.push(chosen);
    }
    kept
}
