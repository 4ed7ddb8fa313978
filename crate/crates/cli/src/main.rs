//! `dstyle`: command-line front end for domain stylization.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 I/O error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "dstyle",
    version,
    about = "Mask-guided stylization of synthetic image datasets"
)]
struct Cli {
    /// Worker threads (defaults to all cores). Output does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stylize one content image with one style image.
    Stylize(StylizeArgs),
    /// Run the iterated stylize/segment loop over two datasets.
    Ds(DsArgs),
    /// Shift the hue of every labeled region by a seeded random angle.
    Randomize(RandomizeArgs),
    /// Per-class and frequency-weighted Fréchet distance between two datasets.
    Fid(FidArgs),
    /// Write windowed color features of a labeled dataset to a DSFT file.
    Extract(ExtractArgs),
    /// Score a saved segmenter on a labeled dataset.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
struct SmoothArgs {
    /// Skip the guided-filter smoothing step.
    #[arg(long)]
    no_smooth: bool,
    /// Guided-filter window radius in pixels.
    #[arg(long, default_value_t = 4)]
    smooth_radius: usize,
    /// Guided-filter regularization.
    #[arg(long, default_value_t = 1e-2)]
    smooth_eps: f64,
    /// Regions with fewer pixels use a mean/scalar-variance transfer.
    #[arg(long, default_value_t = 16)]
    min_region_px: usize,
}

#[derive(Args, Debug)]
struct StylizeArgs {
    /// Content image (PNG).
    #[arg(long)]
    content: PathBuf,
    /// Content mask (8-bit grayscale PNG). Whole image is one region when omitted.
    #[arg(long)]
    content_mask: Option<PathBuf>,
    /// Style image (PNG).
    #[arg(long)]
    style: PathBuf,
    /// Style mask (8-bit grayscale PNG). Whole image is one region when omitted.
    #[arg(long)]
    style_mask: Option<PathBuf>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
    /// Seed (accepted for interface uniformity; single-pair stylization draws nothing).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    smooth: SmoothArgs,
}

#[derive(Args, Debug)]
struct DsArgs {
    /// Manifest of synthetic images with ground-truth masks.
    #[arg(long)]
    synthetic_manifest: PathBuf,
    /// Manifest of real images; any mask entries are ignored.
    #[arg(long)]
    real_manifest: PathBuf,
    /// Style images drawn per synthetic image.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Number of mask-guided rounds.
    #[arg(long, default_value_t = 2)]
    t: usize,
    /// JSON object mapping class id to coarse class id, applied to stylization masks.
    #[arg(long)]
    coarse_map: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Labeled real images used only to score each round's segmenter.
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    /// Keep every round's images and masks (false deletes them once the next round exists).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    keep_intermediate: bool,
    /// Write 0 for per-round seconds so the output tree is fully reproducible.
    #[arg(long)]
    no_timings: bool,
    #[command(flatten)]
    smooth: SmoothArgs,
}

#[derive(Args, Debug)]
struct RandomizeArgs {
    /// Manifest of images with masks.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this shift in degrees for every region instead of random draws.
    #[arg(long)]
    fixed_shift: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    A,
    B,
}

#[derive(Args, Debug)]
struct FidArgs {
    /// Manifest of the first labeled dataset.
    #[arg(long)]
    a: PathBuf,
    /// Manifest of the second labeled dataset.
    #[arg(long)]
    b: PathBuf,
    /// `color:<radius>` to compute windowed color features, or `file:<dir>` to read
    /// precomputed `<dir>/a.dsft` and `<dir>/b.dsft`.
    #[arg(long, default_value = "color:2")]
    extractor: String,
    /// Which dataset's masks provide the class weights.
    #[arg(long, value_enum, default_value_t = Side::B)]
    weights_from: Side,
    /// Minimum rows per class per side (default: feature dim + 2).
    #[arg(long)]
    min_samples: Option<usize>,
    /// CSV report path; a JSON mirror is written next to it.
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Manifest of images with masks.
    #[arg(long)]
    manifest: PathBuf,
    /// Window radius of the color features.
    #[arg(long, default_value_t = 2)]
    radius: usize,
    /// Output DSFT file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Segmenter JSON written by `ds`.
    #[arg(long)]
    segmenter: PathBuf,
    /// Manifest of images with ground-truth masks.
    #[arg(long)]
    manifest: PathBuf,
    /// Number of classes K; labels must be below K.
    #[arg(long)]
    classes: usize,
    /// Metrics JSON output path.
    #[arg(long)]
    out_json: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global thread pool is configured once");
    }
    let result = match cli.command {
        Command::Stylize(args) => commands::stylize(args),
        Command::Ds(args) => commands::ds(args),
        Command::Randomize(args) => commands::randomize(args),
        Command::Fid(args) => commands::fid(args),
        Command::Extract(args) => commands::extract(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
