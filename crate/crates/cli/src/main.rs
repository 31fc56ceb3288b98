//! Command-line driver: segment, tile, synth, em-run, heatmap, score, and
//! the full pipeline. Set `SLIDEGRADE_LOG=info` (or `debug`) for progress
//! output.

mod commands;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "slidegrade",
    about = "Semi-supervised EM grading of slide images",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a foreground mask from a slide PNG.
    Segment(commands::SegmentArgs),
    /// Cut a masked slide into labeled patches.
    Tile(commands::TileArgs),
    /// Generate synthetic slides with ground-truth annotations.
    Synth(commands::SynthArgs),
    /// Run the EM loop over a tiled patch corpus.
    EmRun(commands::EmRunArgs),
    /// Render heatmap and classmap PNGs from a model and patch manifest.
    Heatmap(commands::HeatmapArgs),
    /// Score classmaps and patch manifests against ground truth.
    Score(commands::ScoreArgs),
    /// Run the whole synth -> segment -> tile -> EM -> render -> score
    /// pipeline.
    Pipeline(commands::PipelineArgs),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("SLIDEGRADE_LOG")
            .write_style("SLIDEGRADE_LOG_STYLE"),
    )
    .init();

    let cli = Cli::parse();
    match cli.command {
        Command::Segment(args) => commands::segment(args),
        Command::Tile(args) => commands::tile(args),
        Command::Synth(args) => commands::synth(args),
        Command::EmRun(args) => commands::em_run(args),
        Command::Heatmap(args) => commands::heatmap(args),
        Command::Score(args) => commands::score(args),
        Command::Pipeline(args) => commands::pipeline(args),
    }
}
