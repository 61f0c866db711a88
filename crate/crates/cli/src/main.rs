use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use topoprior_cli::ablate::{cmd_ablate, AblationMatrix};
use topoprior_cli::commands::{cmd_eval, cmd_generate, cmd_train};
use topoprior_cli::prepare::cmd_prepare;
use topoprior_cli::{CliError, RunConfig};

/// Centroid-prior point-cloud GAN: prepare data, train, generate, evaluate.
#[derive(Debug, Parser)]
#[command(name = "topoprior", version)]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Subsample and normalize raw clouds into a dataset directory.
    Prepare {
        /// Directory of `.xyz`/`.txt`/`.pcf`/`.bin` clouds.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train on the configured dataset directory.
    Train {
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample clouds from a checkpoint and render SVG previews.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        count: usize,
        /// Also write each cloud as xyz text.
        #[arg(long)]
        xyz: bool,
    },
    /// Score a checkpoint against a reference set (FPD and JSD).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        references: PathBuf,
        /// Compare the references with themselves instead of generating.
        #[arg(long)]
        self_compare: bool,
    },
    /// Train and evaluate every cell of an ablation matrix.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare { input } => {
            let cfg = load_config(&cli)?;
            let report = cmd_prepare(input, &cfg.output_dir, cfg.n_points, cfg.seed)?;
            for (path, err) in &report.failures {
                eprintln!("error: {}: {err}", path.display());
            }
            println!("prepared {} clouds into {}", report.written.len(), cfg.output_dir.display());
        }
        Command::Train { resume } => {
            let cfg = load_config(&cli)?;
            let summary = cmd_train(&cfg, resume.as_deref())?;
            println!("trained to step {}; checkpoint {}", summary.steps, summary.final_checkpoint.display());
        }
        Command::Generate { checkpoint, count, xyz } => {
            let cfg = cli.config.as_ref().map(|_| load_config(&cli)).transpose()?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.as_ref().map(|c| c.output_dir.join("samples")))
                .unwrap_or_else(|| PathBuf::from("samples"));
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let written = cmd_generate(checkpoint, cfg.as_ref(), *count, &out, seed, *xyz)?;
            println!("wrote {} clouds to {}", written.len(), out.display());
        }
        Command::Eval { checkpoint, references, self_compare } => {
            let cfg = load_config(&cli)?;
            let report = cmd_eval(checkpoint.as_deref(), references, &cfg, *self_compare)?;
            println!("FPD (x1e-3): {}", report.fpd_milli());
            println!("JSD: {}", report.jsd);
        }
        Command::Ablate { matrix } => {
            let m = AblationMatrix::load(matrix)?;
            let out = cli.out.clone().unwrap_or_else(|| m.base.output_dir.clone());
            let m = match cli.seed {
                Some(seed) => AblationMatrix { base: RunConfig { seed, ..m.base.clone() }, ..m },
                None => m,
            };
            let table = cmd_ablate(&m, &out)?;
            print!("{}", table.to_markdown());
            if !table.failures.is_empty() {
                for f in &table.failures {
                    eprintln!("error: {f}");
                }
                return Err(CliError::Failed(format!("{} ablation cell(s) failed", table.failures.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

