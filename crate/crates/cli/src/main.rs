use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fenwarp::commands::{self, OptimizePaths};
use fenwarp::config::RunConfig;
use fenwarp::error::{CliError, EXIT_NUMERIC};
use fenwarp::formats;

#[derive(Parser)]
#[command(name = "fenwarp", version, about = "Optimize 4D scene deformations by flow distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize the scene meshes and write an initial checkpoint.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a checkpoint against the configured oracle.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log; defaults to the output path with a `.tsv` extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Final tracks; defaults to the output path with a `.ptrk` extension.
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Write deformed meshes for a frame range and the tracks of a checkpoint.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        to: Option<usize>,
    },
    /// Print the per-step noise level, learning rates, guidance and weights.
    Schedule {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check invariants and audit gradients of a checkpoint.
    Audit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e| CliError::io(&PathBuf::from("<stdout>"), e);
    match cli.command {
        Command::Init { config, out: path } => {
            let state = commands::cmd_init(&config, &path)?;
            for (i, o) in state.objects.iter().enumerate() {
                writeln!(
                    out,
                    "object {i}: {} shell, {} interior, {} coarse, {} fine",
                    o.shell.len(),
                    o.interior.len(),
                    o.model.coarse.len(),
                    o.model.fine.len()
                )
                .map_err(io_err)?;
            }
        }
        Command::Optimize {
            config,
            checkpoint,
            out: path,
            metrics,
            tracks,
        } => {
            let paths = OptimizePaths {
                metrics: metrics.unwrap_or_else(|| path.with_extension("tsv")),
                tracks: tracks.unwrap_or_else(|| path.with_extension("ptrk")),
                checkpoint,
                out: path,
            };
            commands::cmd_optimize(&config, &paths)?;
        }
        Command::Export {
            checkpoint,
            out_dir,
            from,
            to,
        } => {
            let files = commands::cmd_export(&checkpoint, &out_dir, from, to)?;
            writeln!(out, "wrote {} files to {}", files.len(), out_dir.display()).map_err(io_err)?;
        }
        Command::Schedule { config } => {
            let cfg = RunConfig::load(&config)?;
            commands::write_schedule(&mut out, &commands::schedule(&cfg)?).map_err(io_err)?;
        }
        Command::Audit {
            checkpoint,
            samples,
            seed,
        } => {
            let state = formats::load_checkpoint(&checkpoint)?;
            let checks = commands::audit(&state, samples, seed);
            commands::write_audit(&mut out, &checks).map_err(io_err)?;
            if checks.iter().any(|c| !c.pass) {
                return Ok(ExitCode::from(EXIT_NUMERIC as u8));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
