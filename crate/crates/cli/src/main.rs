mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "colony",
    version,
    about = "Colony detection and segmentation runs, evaluation and overlays"
)]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataset manifest from annotations.
    #[command(subcommand)]
    Import(ImportCommand),
    /// Detect and segment every image, then evaluate and render.
    Run(Overrides),
    /// Detection metrics for a saved prediction set.
    EvalDet(Overrides),
    /// Segmentation metrics for a saved prediction set.
    EvalSeg(Overrides),
    /// Draw TP/FP/FN overlays for a saved prediction set.
    Render(Overrides),
    /// Export predictions as COCO pre-annotations.
    ExportPreann(commands::ExportArgs),
}

#[derive(Debug, Subcommand)]
enum ImportCommand {
    /// COCO-style box annotation file.
    Coco(commands::CocoArgs),
    /// Folder of PNG masks paired to images by file name.
    Masks(commands::MaskArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Import(ImportCommand::Coco(a)) => commands::import_coco(a),
        Command::Import(ImportCommand::Masks(a)) => commands::import_masks(a),
        Command::ExportPreann(a) => commands::export_preann(a),
        Command::Run(o) => {
            commands::layered(cli.config.as_deref(), o).and_then(|c| commands::run(&c))
        }
        Command::EvalDet(o) => {
            commands::layered(cli.config.as_deref(), o).and_then(|c| commands::eval_det(&c))
        }
        Command::EvalSeg(o) => {
            commands::layered(cli.config.as_deref(), o).and_then(|c| commands::eval_seg(&c))
        }
        Command::Render(o) => {
            commands::layered(cli.config.as_deref(), o).and_then(|c| commands::render(&c))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
