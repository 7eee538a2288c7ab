//! `tilewise`: plan slicings, inspect layouts, estimate cost and run checks.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tilewise_core::config::OutputFormat;
use tilewise_core::cost::Strategy;
use tilewise_core::ImageSize;

#[derive(Debug, Parser)]
#[command(name = "tilewise", version, about = "Adaptive slicing and cost tools for high-resolution vision encoders")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON config; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub format: Option<OutputFormat>,
    /// Overrides the configured maximum slice count.
    #[arg(long, global = true)]
    pub max_slices: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice grid, per-slice patch grids and token counts for one image.
    Plan { image: ImageSize },
    /// Separator layout of the compressed tokens.
    Schema {
        image: ImageSize,
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Compress seeded (or supplied) slice tokens with the resampler.
    Compress(CompressArgs),
    /// Compare analytic and finite-difference resampler gradients.
    GradCheck(GradCheckArgs),
    /// FLOP estimates.
    #[command(subcommand)]
    Cost(CostCommand),
    /// Fixed-tile counting and padding simulators.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Numerical checks of the partition rule.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Resample a position-embedding table to a new patch grid.
    InterpPe(InterpArgs),
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    pub image: ImageSize,
    /// Token width for seeded inputs.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Binary token table (`count x 1 x dim`) used for every block instead of
    /// seeded tokens.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 4)]
    pub queries: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Fails when the relative error reaches this value.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Subcommand)]
pub enum CostCommand {
    /// Cost of one strategy on one image.
    Estimate {
        image: ImageSize,
        #[arg(long, default_value = "uhd")]
        strategy: Strategy,
        #[arg(long, default_value_t = 0)]
        text_tokens: u64,
    },
    /// Ratio of two strategies' total FLOPs.
    Compare {
        #[arg(long)]
        a: Strategy,
        #[arg(long)]
        b: Strategy,
        #[arg(long)]
        image: ImageSize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Predicted counts with an object group swept over the canvas.
    Heatmap {
        #[arg(long, default_value = "768x768")]
        canvas: ImageSize,
        #[arg(long, default_value_t = 64)]
        step: u32,
        /// JSON list of objects positioned relative to the anchor.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Resolution regimes of a counting scene at several scales.
    Phases {
        /// JSON scene; defaults to a 3x3 grid of red circles on 512x512.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0, 3.0])]
        scales: Vec<f64>,
    },
    /// Useful fraction of a square-padded encoding; `--out` renders the probe.
    Padding {
        /// `W:H`, e.g. `1:4`.
        #[arg(long, default_value = "1:4")]
        aspect: String,
        #[arg(long, default_value_t = 336)]
        side: u32,
    },
    /// Render a JSON scene to a binary PPM.
    Render {
        #[arg(long)]
        scene: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    Proofs {
        #[arg(long, value_parser = parse_count)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 20)]
        n_max: u32,
        #[arg(long, default_value_t = 1000)]
        sweep_density: u32,
        #[arg(long, default_value_t = 2000)]
        quadrature_cells: u32,
    },
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    /// Binary table (`rows x cols x dim`); defaults to a seeded 24x24 table.
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long)]
    pub cols: u32,
    #[arg(long)]
    pub rows: u32,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
}

/// Accepts plain integers and `1e6`-style counts.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 1.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(v as u64),
        _ => Err(format!("{s:?} is not a positive whole number")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
