use anyhow::{anyhow, Context};
use csl_core::cost::{network_cost, speedup_limit, speedup_ratio, ConvShapeQuery};
use csl_core::graph::build_detector;
use csl_core::tensor::{MacCounter, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{config, resolve_seed, Failure, VerifyArgs};

pub fn run(args: VerifyArgs) -> Result<(), Failure> {
    let mut cfg = config::load(args.config.as_deref()).map_err(Failure::usage)?;
    if let Some(size) = args.input_size {
        cfg.input_size = size;
    }
    if args.trials == 0 {
        return Err(Failure::usage(anyhow!("--trials must be at least 1")));
    }
    let seed = resolve_seed(args.seed, cfg.seed);
    let net = build_detector::<f32>(&cfg)
        .context("building detector")
        .map_err(Failure::usage)?;

    let mut failures = 0usize;
    let mut analytic_totals = Vec::new();
    for trial in 0..args.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let x = Tensor::<f32>::from_fn(
            Shape::new(1, 3, cfg.input_size, cfg.input_size),
            |_, _, _, _| rng.random::<f32>(),
        );
        let mut counter = MacCounter::new();
        net.forward(&x, &mut counter)
            .context("forward pass")
            .map_err(Failure::usage)?;
        let mut report = network_cost(&net);
        report.attach_empirical(&counter);
        if let Some(layer) = &args.corrupt {
            for row in &mut report.rows {
                if row.name.contains(layer.as_str()) {
                    row.empirical_macs = row.empirical_macs.map(|e| e + 1);
                }
            }
        }
        let mismatches = report.mismatches();
        if mismatches.is_empty() {
            println!(
                "trial {trial}: all {} layers match ({} MACs total)",
                report.rows.len(),
                report.total_analytic()
            );
        } else {
            failures += mismatches.len();
            for row in mismatches {
                println!(
                    "trial {trial}: MISMATCH {}: analytic {} vs empirical {}",
                    row.name,
                    row.analytic_macs,
                    row.empirical_macs.unwrap_or(0)
                );
            }
        }
        analytic_totals.push(report.total_analytic());
    }
    if analytic_totals.windows(2).any(|p| p[0] != p[1]) {
        return Err(Failure::check(anyhow!(
            "analytic totals varied across trials: {analytic_totals:?}"
        )));
    }

    // Asymptotic speed-up convergence at a large channel count.
    for t in [2.0f64, 3.0] {
        let q = ConvShapeQuery::new(1, 1, 8192, 8192, 3, t);
        let exact = speedup_ratio(&q).map_err(|e| Failure::usage(e.into()))?;
        let limit = speedup_limit(t);
        let dev = (exact - limit).abs() / limit;
        println!(
            "speed-up t={t}: exact {exact:.4}, closed form {limit:.4}, deviation {:.3}%",
            dev * 100.0
        );
        if dev > 0.01 {
            failures += 1;
            println!("speed-up t={t}: DIVERGED beyond 1%");
        }
    }
    println!("note: {}", csl_core::cost::speedup_note());

    if failures > 0 {
        return Err(Failure::check(anyhow!("{failures} verification failures")));
    }
    Ok(())
}
