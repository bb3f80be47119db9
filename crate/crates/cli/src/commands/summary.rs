use anyhow::Context;
use csl_core::cost::{network_cost, speedup_note};
use csl_core::graph::build_detector;

use crate::{config, Failure, SummaryArgs};

pub fn run(args: SummaryArgs) -> Result<(), Failure> {
    let mut cfg = config::load(args.config.as_deref()).map_err(Failure::usage)?;
    if let Some(size) = args.input_size {
        cfg.input_size = size;
    }
    let net = build_detector::<f32>(&cfg)
        .context("building detector")
        .map_err(Failure::usage)?;
    let report = network_cost(&net);
    match args.format.as_str() {
        "csv" => print!("{}", report.to_csv()),
        _ => {
            print!("{}", report.to_table());
            println!("note: {}", speedup_note());
        }
    }
    Ok(())
}
