mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "videngage", version, about = "Engagement prediction for short videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (media files + manifest.jsonl).
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write keyframes, spectrograms and rendered prompts for a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a toy-backbone model; writes model.ckpt, loss.csv, train_report.json.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every record of a manifest into a predictions CSV.
    Predict {
        /// Trained model; carries its own preprocessing settings.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace records with unreadable media by the fallback score.
        #[arg(long)]
        skip_errors: bool,
    },
    /// Score a predictions CSV against a labeled manifest.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine prediction files by (weighted) score averaging.
    Ensemble {
        /// JSON ensemble spec.
        #[arg(long, conflicts_with = "inputs", required_unless_present = "inputs")]
        spec: Option<PathBuf>,
        /// Prediction files to average uniformly.
        #[arg(long, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate members and the ensemble against this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        report: Option<PathBuf>,
    },
    /// Serve the remote backbone protocol with a stub model.
    StubServer {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        /// `brightness`, or a fixed text returned for every generation.
        #[arg(long, default_value = "brightness")]
        reply: String,
        #[arg(long, default_value_t = 16)]
        hidden_dim: usize,
    },
}

/// Config file plus the per-run overrides.
#[derive(Args, Clone, Default)]
pub struct RunArgs {
    /// Flat TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_frames: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub strict_duration: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { n, seed, out } => commands::synth(n as usize, seed, &out),
        Command::Preprocess { manifest, run, out } => commands::preprocess(&manifest, &run, &out),
        Command::Train { manifest, run, out } => commands::train(&manifest, &run, out.as_deref()),
        Command::Predict {
            checkpoint,
            run,
            manifest,
            out,
            skip_errors,
        } => commands::predict(checkpoint.as_deref(), &run, &manifest, &out, skip_errors),
        Command::Eval { predictions, manifest, out } => commands::eval(&predictions, &manifest, out.as_deref()),
        Command::Ensemble {
            spec,
            inputs,
            out,
            manifest,
            report,
        } => commands::ensemble(spec.as_deref(), inputs, &out, manifest.as_deref(), report.as_deref()),
        Command::StubServer { addr, reply, hidden_dim } => commands::stub_server(&addr, &reply, hidden_dim),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
