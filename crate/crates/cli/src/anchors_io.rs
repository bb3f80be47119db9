//! Anchor file formats: a plain-text listing and a machine-readable CSV.

use std::path::Path;

use anyhow::{bail, Context};
use csl_core::anchors::{AnchorSet, BoxWH};

/// One line per level: `level i: (w,h) (w,h) ...` with flags appended.
pub fn to_text(set: &AnchorSet) -> String {
    let mut out = String::new();
    for (i, level) in set.levels.iter().enumerate() {
        out.push_str(&format!("level {i}:"));
        for a in &level.anchors {
            out.push_str(&format!(" ({:.6},{:.6})", a.w, a.h));
        }
        if level.fallback {
            out.push_str("  # fallback: bin had fewer boxes than anchors");
        } else if level.clamped {
            out.push_str("  # clamped to bin edge");
        }
        out.push('\n');
    }
    out
}

/// CSV with columns level, index, width, height, fallback, clamped.
pub fn to_csv(set: &AnchorSet) -> String {
    let mut out = String::from("level,index,width,height,fallback,clamped\n");
    for (i, level) in set.levels.iter().enumerate() {
        for (j, a) in level.anchors.iter().enumerate() {
            out.push_str(&format!(
                "{i},{j},{:.9},{:.9},{},{}\n",
                a.w, a.h, level.fallback, level.clamped
            ));
        }
    }
    out
}

/// Reads the CSV back into per-level anchor lists.
pub fn read_csv(path: &Path) -> anyhow::Result<Vec<Vec<BoxWH>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading anchors {}", path.display()))?;
    let mut levels: Vec<Vec<BoxWH>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            bail!(
                "{}: line {} has {} fields",
                path.display(),
                ln + 1,
                fields.len()
            );
        }
        let level: usize = fields[0]
            .parse()
            .with_context(|| format!("{}: line {} level", path.display(), ln + 1))?;
        let w: f64 = fields[2]
            .parse()
            .with_context(|| format!("{}: line {} width", path.display(), ln + 1))?;
        let h: f64 = fields[3]
            .parse()
            .with_context(|| format!("{}: line {} height", path.display(), ln + 1))?;
        if levels.len() <= level {
            levels.resize(level + 1, Vec::new());
        }
        levels[level].push(BoxWH { w, h });
    }
    if levels.is_empty() {
        bail!("{}: no anchors found", path.display());
    }
    Ok(levels)
}

/// Bin occupancy histogram for the anchors report.
pub fn occupancy_histogram(thresholds: &[f64], counts: &[usize]) -> String {
    let mut out = String::from("bin occupancy:\n");
    let max = counts.iter().copied().max().unwrap_or(1).max(1);
    for (i, &n) in counts.iter().enumerate() {
        let bar = "#".repeat(n * 40 / max);
        out.push_str(&format!(
            "  level {i} [{:.4}, {:.4}): {n:>6} {bar}\n",
            thresholds[i],
            thresholds[i + 1]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use csl_core::anchors::{generate_anchor_set, AnchorGenConfig};

    fn sample_set() -> AnchorSet {
        let boxes: Vec<BoxWH> = (1..=30)
            .map(|i| BoxWH {
                w: i as f64 / 31.0,
                h: i as f64 / 31.0,
            })
            .collect();
        generate_anchor_set(&boxes, &AnchorGenConfig::new(5, 3, 0)).unwrap()
    }

    #[test]
    fn csv_round_trips_through_read() {
        let set = sample_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, to_csv(&set)).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), 5);
        for (level, anchors) in back.iter().enumerate() {
            assert_eq!(anchors.len(), 3);
            for (j, a) in anchors.iter().enumerate() {
                let orig = set.levels[level].anchors[j];
                assert!((a.w - orig.w).abs() < 1e-9);
                assert!((a.h - orig.h).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn text_listing_has_one_line_per_level() {
        let set = sample_set();
        let text = to_text(&set);
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("level 0:"));
    }
}
