// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memlab::pipeline::{ExperimentConfig, Pipeline, Stage};
use memlab::{Error, Result};

/// Memorization experiments on small transformers trained from scratch.
#[derive(Debug, Parser)]
#[command(name = "memlab", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(short, long, global = true, default_value = "configs/small.toml")]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for example-level parallelism.
    #[arg(short, long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the planted corpus and its manifest.
    GenCorpus,
    /// Train every model of every family.
    Train,
    /// Memorization scores for every model.
    Score,
    /// Compression ratios of memorized sequences.
    Compress,
    /// Noise ladder, similarity profiles and residual norms.
    Noise,
    /// Logit-lens curves per cohort.
    Lens,
    /// Attention-head ablation.
    Ablate,
    /// Overlap tables, layer profiles and heatmap.
    Stats,
    /// Assemble the report.
    Report,
    /// Run every stage in order.
    All,
    /// Print the digest of every artifact in the run manifest.
    Digests,
    /// Validate the config and print it with defaults filled in.
    ShowConfig,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    let pipeline = Pipeline::new(cfg)?;
    let stage = match cli.command {
        Command::GenCorpus => Stage::GenCorpus,
        Command::Train => Stage::Train,
        Command::Score => Stage::Score,
        Command::Compress => Stage::Compress,
        Command::Noise => Stage::Noise,
        Command::Lens => Stage::Lens,
        Command::Ablate => Stage::Ablate,
        Command::Stats => Stage::Stats,
        Command::Report => Stage::Report,
        Command::All => {
            for stage in Stage::ALL {
                eprintln!("running {stage}");
                pipeline.run(stage)?;
            }
            return Ok(());
        }
        Command::Digests => {
            for (path, digest) in pipeline.artifact_digests()? {
                println!("{digest}  {path}");
            }
            return Ok(());
        }
        Command::ShowConfig => {
            print!("{}", pipeline.config().to_toml()?);
            return Ok(());
        }
    };
    pipeline.run(stage)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
