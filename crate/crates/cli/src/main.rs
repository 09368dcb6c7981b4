//! Command-line entry points: pretraining, linear probes, kNN evaluation
//! and visualization.

mod artifacts;
mod commands;
mod run_config;

use clap::{Parser, Subcommand};
use commands::VizMode;
use run_config::{load_merged, Overrides};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "pretext", version, about = "Self-supervised pretraining by transformation classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain the transformation classifier (and, with LCI enabled, the
    /// adversarial inpainter and patch discriminator).
    Pretrain {
        /// Output directory for checkpoints, metrics and previews.
        #[arg(long, default_value = "runs/pretrain")]
        out: PathBuf,
        /// Expand the transform-subset ablation grid into sequential runs
        /// sharing the seed.
        #[arg(long)]
        ablate: bool,
    },
    /// Train linear probes on frozen per-stage features.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated stages, e.g. "conv1,conv2,conv3,conv4,conv5".
        #[arg(long, default_value = "conv1,conv2,conv3,conv4,conv5")]
        stages: String,
        /// Include a randomly initialized baseline row.
        #[arg(long)]
        random_init: bool,
        #[arg(long, default_value = "runs/probe")]
        out: PathBuf,
    },
    /// Leave-one-out kNN accuracy over frozen conv5 features.
    Knn {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated neighbor counts.
        #[arg(long, default_value = "1,5,10,20,50")]
        k: String,
        #[arg(long, default_value = "runs/knn")]
        out: PathBuf,
    },
    /// Render first-layer filters, inpainting pairs or retrieval strips.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: VizMode,
        #[arg(long, default_value = "runs/viz")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = load_merged(&cli.overrides).and_then(|cfg| match &cli.command {
        Command::Pretrain { out, ablate } => commands::cmd_pretrain(&cfg, out, *ablate),
        Command::Probe {
            checkpoint,
            stages,
            random_init,
            out,
        } => commands::cmd_probe(&cfg, checkpoint, stages, *random_init, out),
        Command::Knn { checkpoint, k, out } => commands::cmd_knn(&cfg, checkpoint, k, out),
        Command::Viz {
            checkpoint,
            mode,
            out,
        } => commands::cmd_viz(&cfg, checkpoint, *mode, out),
    });
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
