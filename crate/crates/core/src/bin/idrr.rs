use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idrr::cli::{self, CommandOutput};
use idrr::config::GridSpec;
use idrr::pipeline::SplitChoice;

/// Implicit discourse relation recognition with a multi-granularity encoder.
///
/// Relative output paths land under $IDRR_OUTPUT_ROOT (default `runs`). The
/// last line printed is always a JSON object with a `status` field.
#[derive(Parser)]
#[command(name = "idrr", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE merges from a `word count` frequency file.
    LearnBpe {
        frequencies: PathBuf,
        #[arg(long, default_value_t = 1000)]
        merges: usize,
        #[arg(long, default_value = "merges.txt")]
        out: PathBuf,
    },
    /// Train the stand-in contextual model and write per-instance vectors.
    PrepContextual {
        config: PathBuf,
        #[arg(long, default_value = "contextual.jsonl")]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, manifest and trace.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained run on one split.
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitChoice,
    },
    /// Train one model per grid row and report dev/test metrics.
    Ablate {
        config: PathBuf,
        /// Grid file with `ladder` and `[axes]`.
        #[arg(long, conflicts_with = "preset")]
        grid: Option<PathBuf>,
        /// accumulative, residual, layers or none.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write attention heatmaps (PGM and CSV) for the given instance ids.
    ExportAttention {
        run_dir: PathBuf,
        #[arg(long = "id", required = true)]
        ids: Vec<String>,
        #[arg(long, default_value = "attention")]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::LearnBpe { .. } => "learn-bpe",
            Command::PrepContextual { .. } => "prep-contextual",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::ExportAttention { .. } => "export-attention",
        }
    }

    fn run(&self) -> idrr::Result<CommandOutput> {
        match self {
            Command::LearnBpe { frequencies, merges, out } => cli::cmd_learn_bpe(frequencies, *merges, out),
            Command::PrepContextual { config, out } => cli::cmd_prep_contextual(config, out),
            Command::Train { config, out } => cli::cmd_train(config, out.as_deref()),
            Command::Eval { run_dir, split } => cli::cmd_eval(run_dir, *split),
            Command::Ablate { config, grid, preset, out } => {
                let grid = match (grid, preset) {
                    (Some(path), _) => GridSpec::load(path)?,
                    (None, Some(name)) => cli::preset_grid(name)?,
                    (None, None) => GridSpec::default(),
                };
                cli::cmd_ablate(config, &grid, out.as_deref())
            }
            Command::ExportAttention { run_dir, ids, out } => cli::cmd_export_attention(run_dir, ids, out),
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let name = args.command.name();
    match args.command.run() {
        Ok(out) => {
            for line in &out.lines {
                println!("{line}");
            }
            println!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", cli::error_summary(name, &e));
            ExitCode::FAILURE
        }
    }
}
