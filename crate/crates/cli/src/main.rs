//! `csl` — build, price, verify, and exercise the CSL detector kit.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csl_cli::{anchors_io, coco, config, tensor_file};

#[derive(Parser)]
#[command(
    name = "csl",
    version,
    about = "Lightweight cross-stage detector kit: cost model, graph builder, anchors, decoding"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the per-layer cost table (analytic MACs and parameters).
    Summary(SummaryArgs),
    /// Run forward passes and assert analytic costs equal counted MACs.
    Verify(VerifyArgs),
    /// Cluster ground-truth boxes into per-level anchors.
    Anchors(AnchorsArgs),
    /// Decode raw head tensors into detections with soft-NMS.
    Decode(DecodeArgs),
    /// Check reverse-mode gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SummaryArgs {
    /// Detector config file (TOML); omitted = shipped default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's input resolution.
    #[arg(long)]
    input_size: Option<usize>,
    /// Output format.
    #[arg(long, default_value = "table", value_parser = ["table", "csv"])]
    format: String,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Forward passes with fresh random inputs.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Seed for the random inputs (CSL_SEED overrides the default).
    #[arg(long)]
    seed: Option<u64>,
    /// Corrupt the empirical count of the named layer (failure-path fixture).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct AnchorsArgs {
    /// COCO-style annotation JSON.
    #[arg(long)]
    annotations: PathBuf,
    /// Pyramid level count (l).
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Anchors per level (k).
    #[arg(long, default_value_t = 3)]
    per_level: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Box scale proxy.
    #[arg(long, default_value = "geometric-mean", value_parser = ["geometric-mean", "max-side"])]
    scale_mode: String,
    /// Cluster summary rule.
    #[arg(long, default_value = "mean", value_parser = ["mean", "medoid"])]
    center_mode: String,
    /// Output prefix; writes <prefix>.txt and <prefix>.csv.
    #[arg(long, default_value = "anchors")]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    /// Raw head tensor: a single-tensor file (with --level) or a named
    /// sequence with entries level0..level4.
    #[arg(long, conflicts_with = "random")]
    raw: Option<PathBuf>,
    /// Generate seeded random raw tensors for every level instead.
    #[arg(long)]
    random: bool,
    /// Anchor CSV as written by `csl anchors`.
    #[arg(long)]
    anchors: PathBuf,
    /// Level a single-tensor --raw file belongs to.
    #[arg(long, default_value_t = 0)]
    level: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Width/height decoding rule.
    #[arg(long, default_value = "exp", value_parser = ["exp", "additive"])]
    mode: String,
    /// Gaussian soft-NMS width.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Score threshold applied while decoding.
    #[arg(long, default_value_t = 0.3)]
    thresh: f64,
    /// Soft-NMS survival threshold.
    #[arg(long, default_value_t = 0.001)]
    final_thresh: f64,
    /// Pixel extent for the COCO results output.
    #[arg(long, default_value_t = 416)]
    image_size: usize,
    #[arg(long, default_value_t = 1)]
    image_id: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the COCO results JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a human-readable table instead of JSON.
    #[arg(long)]
    table: bool,
    /// Save the decoded raw tensors as a named container (entries
    /// level0..levelN) so a --random run can be replayed from a file.
    #[arg(long)]
    dump_raw: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check scale; `toy` runs primitives, CSL blocks, and the 64x64
    /// end-to-end detector.
    #[arg(long, default_value = "toy", value_parser = ["toy"])]
    size: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Bias the first comparison to exercise the failure path.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Failure carrying the process exit code: 1 for verification failures,
/// 2 for usage and config errors.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: anyhow::Error) -> Self {
        Failure { code: 2, err }
    }
    fn check(err: anyhow::Error) -> Self {
        Failure { code: 1, err }
    }
}

/// Seed precedence: explicit flag, then CSL_SEED, then the fallback
/// (usually the config's seed).
fn resolve_seed(flag: Option<u64>, fallback: u64) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Ok(v) = std::env::var("CSL_SEED") {
        if let Ok(s) = v.parse() {
            return s;
        }
    }
    fallback
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Summary(args) => commands::summary::run(args),
        Cmd::Verify(args) => commands::verify::run(args),
        Cmd::Anchors(args) => commands::anchors::run(args),
        Cmd::Decode(args) => commands::decode::run(args),
        Cmd::Gradcheck(args) => commands::gradcheck::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
