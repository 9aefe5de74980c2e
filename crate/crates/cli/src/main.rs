use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pqda::commands::{self, Flags};
use pqda::{CliError, ExperimentConfig, TestRange};

#[derive(Parser, Debug)]
#[command(name = "pqda", version, about = "Score-based sequential data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `key = value` lines; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Continue from the checkpoint in the output directory.
    #[arg(long, global = true)]
    resume: bool,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    /// Where per-episode diagnostics are computed.
    #[arg(long, global = true, value_enum)]
    test_range: Option<TestRange>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the two-scale Lorenz-96 system and record the slow variables.
    Simulate,
    /// Run the episodic sampler over a dataset.
    Assimilate { data: PathBuf },
    /// Run the ensemble Kalman filter baseline over a dataset.
    Enkf { data: PathBuf },
    /// Score the posterior stored in a checkpoint.
    Evaluate { data: PathBuf, checkpoint: PathBuf },
    /// Draw metric panels from one or more metrics CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> pqda::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    if let Some(r) = cli.test_range {
        cfg.diagnostics.test_range = r;
    }
    if cli.resume && !matches!(cli.command, Command::Assimilate { .. }) {
        return Err(CliError::Usage("--resume only applies to assimilate".into()));
    }
    let flags = Flags {
        force: cli.force,
        resume: cli.resume,
    };
    match cli.command {
        Command::Simulate => {
            let s = commands::simulate(&cfg, flags)?;
            eprintln!(
                "wrote {} rows x {} components (train_end {}) to {}",
                s.len(),
                s.dim(),
                s.train_end,
                cfg.output.dir.display()
            );
        }
        Command::Assimilate { data } => {
            commands::assimilate(&cfg, &data, flags, |s| {
                eprintln!(
                    "episode {}/{}: {} tempering steps, calibration {:.4}, nrmse {:.4}, r2 {:.4}",
                    s.episode,
                    s.total,
                    s.record.alphas.len(),
                    s.metrics[1],
                    s.metrics[2],
                    s.metrics[3]
                );
            })?;
        }
        Command::Enkf { data } => {
            let rows = commands::enkf(&cfg, &data, flags)?;
            eprintln!("wrote {} episode rows", rows.len());
        }
        Command::Evaluate { data, checkpoint } => {
            let r = commands::evaluate(&cfg, &data, &checkpoint, flags)?;
            eprintln!(
                "episode {}: calibration {:.4}, nrmse {:.4}, r2 {:.4}",
                r[0], r[1], r[2], r[3]
            );
        }
        Command::Plot { csv } => {
            let out = commands::plot(&cfg, &csv, flags)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pqda: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
