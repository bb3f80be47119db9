use anyhow::{anyhow, Context};
use csl_core::graph::pyramid_level_sizes;
use csl_core::post::{decode_level, soft_nms, DecodeMode, Detection};
use csl_core::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{anchors_io, coco, config, resolve_seed, tensor_file, DecodeArgs, Failure};

pub fn run(args: DecodeArgs) -> Result<(), Failure> {
    let cfg = config::load(args.config.as_deref()).map_err(Failure::usage)?;
    let anchors = anchors_io::read_csv(&args.anchors).map_err(Failure::usage)?;
    let mode = match args.mode.as_str() {
        "additive" => DecodeMode::Additive,
        _ => DecodeMode::Exponential,
    };
    if args.sigma <= 0.0 {
        return Err(Failure::usage(anyhow!("--sigma must be positive")));
    }

    // Gather (level, raw tensor) pairs from a file or a seeded generator.
    let raws: Vec<(usize, Tensor<f32>)> = if args.random {
        let sizes = pyramid_level_sizes(cfg.input_size, cfg.fpn.middle_rule)
            .map_err(|e| Failure::usage(e.into()))?;
        if anchors.len() != sizes.len() {
            return Err(Failure::usage(anyhow!(
                "anchor file has {} levels but the config pyramid has {}",
                anchors.len(),
                sizes.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(args.seed, cfg.seed));
        sizes
            .iter()
            .enumerate()
            .map(|(i, &sz)| {
                let ch = anchors[i].len() * (5 + cfg.num_classes);
                let t = Tensor::<f32>::from_fn(Shape::new(1, ch, sz, sz), |_, _, _, _| {
                    rng.random::<f32>() * 8.0 - 4.0
                });
                (i, t)
            })
            .collect()
    } else {
        let path = args
            .raw
            .as_deref()
            .ok_or_else(|| Failure::usage(anyhow!("pass --raw FILE or --random")))?;
        if tensor_file::is_weights_file(path).map_err(Failure::usage)? {
            let entries = tensor_file::read_named_tensors(path).map_err(Failure::usage)?;
            entries
                .into_iter()
                .map(|(name, t)| {
                    let level: usize = name
                        .strip_prefix("level")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| {
                            Failure::usage(anyhow!("entry `{name}` is not named levelN"))
                        })?;
                    Ok((level, t))
                })
                .collect::<Result<Vec<_>, Failure>>()?
        } else {
            let t = tensor_file::read_tensor(path).map_err(Failure::usage)?;
            vec![(args.level, t)]
        }
    };

    if let Some(path) = &args.dump_raw {
        let entries: Vec<(String, Tensor<f32>)> = raws
            .iter()
            .map(|(level, t)| (format!("level{level}"), t.clone()))
            .collect();
        tensor_file::write_named_tensors(path, &entries).map_err(Failure::usage)?;
        eprintln!("saved {} raw tensors to {}", entries.len(), path.display());
    }

    let mut all: Vec<Detection> = Vec::new();
    let mut clamped = 0usize;
    for (level, raw) in &raws {
        let level_anchors = anchors.get(*level).ok_or_else(|| {
            Failure::usage(anyhow!(
                "level {level} not present in anchor file ({} levels)",
                anchors.len()
            ))
        })?;
        let outcome = decode_level(raw, level_anchors, cfg.num_classes, mode, args.thresh)
            .context("decoding raw tensor")
            .map_err(Failure::usage)?;
        clamped += outcome.clamped;
        all.extend(outcome.detections);
    }
    if clamped > 0 {
        eprintln!("warning: {clamped} boxes clamped into [0, 1]");
    }
    let kept = soft_nms(&all, args.sigma, args.final_thresh);

    if args.table {
        print!("{}", coco::detection_table(&kept));
    } else {
        let px = args.image_size as f64;
        let records = coco::to_results(&kept, args.image_id, px, px);
        let json = serde_json::to_string_pretty(&records).map_err(|e| Failure::usage(e.into()))?;
        match &args.out {
            Some(path) => {
                std::fs::write(path, json).map_err(|e| Failure::usage(e.into()))?;
                eprintln!("wrote {} detections to {}", kept.len(), path.display());
            }
            None => println!("{json}"),
        }
    }
    Ok(())
}
