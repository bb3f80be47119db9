use anyhow::anyhow;
use csl_core::gradcheck::run_full_suite;

use crate::{resolve_seed, Failure, GradcheckArgs};

pub fn run(args: GradcheckArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed, 0);
    let fault = args.inject_fault.then_some(1.0);
    println!(
        "gradient checks at size `{}` (seed {seed}): primitives at (1, 4, 6, 6), \
         CSL blocks at (1, 8, 8, 8), detector end-to-end at (1, 3, 64, 64)",
        args.size
    );
    let results = run_full_suite(seed, fault).map_err(|e| Failure::check(e.into()))?;
    let mut worst: f64 = 0.0;
    let mut failed = 0usize;
    for r in &results {
        let status = if r.passed() { "ok " } else { "FAIL" };
        println!(
            "  [{status}] {:<28} max rel err {:>12.3e}  (tol {:.0e}, {} coords)",
            r.name, r.max_rel_err, r.tolerance, r.coords
        );
        worst = worst.max(r.max_rel_err);
        if !r.passed() {
            failed += 1;
        }
    }
    println!("max relative error: {worst:.3e}");
    if failed > 0 {
        return Err(Failure::check(anyhow!("{failed} gradient checks failed")));
    }
    Ok(())
}
