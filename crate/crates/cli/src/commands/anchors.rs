use anyhow::anyhow;
use csl_core::anchors::{generate_anchor_set, AnchorGenConfig, CenterMode, ScaleMode};

use crate::{anchors_io, coco, resolve_seed, AnchorsArgs, Failure};

pub fn run(args: AnchorsArgs) -> Result<(), Failure> {
    let loaded = coco::load_boxes(&args.annotations).map_err(Failure::usage)?;
    if loaded.dropped > 0 {
        eprintln!(
            "warning: dropped {} degenerate (zero-area) boxes",
            loaded.dropped
        );
    }
    if loaded.boxes.is_empty() {
        return Err(Failure::check(anyhow!(
            "annotation file contains no usable boxes"
        )));
    }
    let cfg = AnchorGenConfig {
        levels: args.levels,
        per_level: args.per_level,
        seed: resolve_seed(args.seed, 0),
        scale_mode: match args.scale_mode.as_str() {
            "max-side" => ScaleMode::MaxSide,
            _ => ScaleMode::GeometricMean,
        },
        center_mode: match args.center_mode.as_str() {
            "medoid" => CenterMode::Medoid,
            _ => CenterMode::Mean,
        },
    };
    let set = generate_anchor_set(&loaded.boxes, &cfg).map_err(|e| Failure::usage(e.into()))?;

    // Occupancy comes from re-binning; the set itself only carries flags.
    let bins = csl_core::anchors::bin_by_scale(&loaded.boxes, args.levels, cfg.scale_mode)
        .map_err(|e| Failure::usage(e.into()))?;
    let counts: Vec<usize> = bins.bins.iter().map(|b| b.len()).collect();
    print!(
        "{}",
        anchors_io::occupancy_histogram(&set.thresholds, &counts)
    );
    for (i, level) in set.levels.iter().enumerate() {
        if level.fallback {
            eprintln!(
                "warning: level {i} had {} boxes for {} anchors; using fallback sizes",
                counts[i], args.per_level
            );
        } else if level.clamped {
            eprintln!("warning: level {i} anchors clamped to the bin edge");
        }
    }

    let txt = args.out_prefix.with_extension("txt");
    let csv = args.out_prefix.with_extension("csv");
    std::fs::write(&txt, anchors_io::to_text(&set)).map_err(|e| Failure::usage(e.into()))?;
    std::fs::write(&csv, anchors_io::to_csv(&set)).map_err(|e| Failure::usage(e.into()))?;
    println!(
        "wrote {} anchors across {} levels to {} and {}",
        set.len(),
        args.levels,
        txt.display(),
        csv.display()
    );
    Ok(())
}
