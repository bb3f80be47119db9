//! COCO-style annotation ingestion and results serialization.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context};
use csl_core::anchors::BoxWH;
use csl_core::post::Detection;
use serde::{Deserialize, Serialize};

#[derive(Debug, Deserialize)]
pub struct Dataset {
    #[serde(default)]
    pub images: Vec<Image>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Deserialize)]
pub struct Image {
    pub id: u64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Deserialize)]
pub struct Annotation {
    pub image_id: u64,
    /// Pixel-space [x, y, width, height].
    pub bbox: [f64; 4],
}

/// Boxes loaded from an annotation file, with degenerate-box bookkeeping.
#[derive(Debug)]
pub struct LoadedBoxes {
    pub boxes: Vec<BoxWH>,
    /// Zero-area boxes that were dropped.
    pub dropped: usize,
}

/// Parses a COCO-style annotation document and normalizes every bbox by its
/// image's extent. Zero-area boxes are dropped (counted); an annotation
/// referencing an unknown image id is an error.
pub fn load_boxes(path: &Path) -> anyhow::Result<LoadedBoxes> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading annotations {}", path.display()))?;
    let dataset: Dataset = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("annotations {}: {e}", path.display()))?;
    let sizes: HashMap<u64, (f64, f64)> = dataset
        .images
        .iter()
        .map(|im| (im.id, (im.width, im.height)))
        .collect();
    let mut boxes = Vec::with_capacity(dataset.annotations.len());
    let mut dropped = 0;
    for (idx, ann) in dataset.annotations.iter().enumerate() {
        let Some(&(iw, ih)) = sizes.get(&ann.image_id) else {
            bail!(
                "annotations {}: annotation #{idx} references unknown image_id {}",
                path.display(),
                ann.image_id
            );
        };
        if iw <= 0.0 || ih <= 0.0 {
            bail!(
                "annotations {}: image {} has non-positive size {iw}x{ih}",
                path.display(),
                ann.image_id
            );
        }
        let (w, h) = (ann.bbox[2] / iw, ann.bbox[3] / ih);
        if w <= 0.0 || h <= 0.0 {
            dropped += 1;
            continue;
        }
        boxes.push(BoxWH {
            w: w.min(1.0),
            h: h.min(1.0),
        });
    }
    Ok(LoadedBoxes { boxes, dropped })
}

/// One COCO results row; bbox is pixel-space [x, y, width, height] with
/// (x, y) the top-left corner.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    pub image_id: u64,
    pub category_id: usize,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Converts detections (normalized center format) into COCO results rows at
/// the given pixel extent.
pub fn to_results(
    dets: &[Detection],
    image_id: u64,
    image_w: f64,
    image_h: f64,
) -> Vec<ResultRecord> {
    dets.iter()
        .map(|d| ResultRecord {
            image_id,
            category_id: d.class_id,
            bbox: [
                (d.x - d.w / 2.0) * image_w,
                (d.y - d.h / 2.0) * image_h,
                d.w * image_w,
                d.h * image_h,
            ],
            score: d.score,
        })
        .collect()
}

/// Human-readable detection table.
pub fn detection_table(dets: &[Detection]) -> String {
    let mut out = String::from("  #  class      score         x         y         w         h\n");
    for (i, d) in dets.iter().enumerate() {
        out.push_str(&format!(
            "{i:>3}  {:>5}  {:>9.5}  {:>8.5}  {:>8.5}  {:>8.5}  {:>8.5}\n",
            d.class_id, d.score, d.x, d.y, d.w, d.h
        ));
    }
    out
}
