use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lnlab_cli::artifacts::verify_manifest;
use lnlab_cli::pipeline::Results;
use lnlab_cli::{emit_report, run_experiment, ExperimentConfig, Pipeline, RunDir};

#[derive(Parser)]
#[command(name = "lnlab", version, about = "LayerNorm ablation experiments on tiny transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, else
    /// `<output root>/<config stem>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "LNLAB_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline selected by a config.
    Run(RunArgs),
    /// Re-render plots and report of a finished run.
    Report { run_dir: PathBuf },
    /// Run bound verification with the settings of a config.
    VerifyBounds(RunArgs),
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let stem = args
        .config
        .file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    args.output_root.join(stem)
}

fn run(args: &RunArgs, pipeline: Option<Pipeline>) -> anyhow::Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(p) = pipeline {
        cfg = cfg.with_pipeline(p);
    }
    let out = out_dir(args, &cfg);
    let outcome = run_experiment(&cfg, &out).with_context(|| format!("pipeline {:?} failed", cfg.pipeline))?;
    println!("{}", String::from_utf8_lossy(&std::fs::read(out.join("report.txt"))?));
    println!("{} files written to {}", outcome.manifest.files.len() + 1, out.display());
    if let Results::BoundVerify(v) = &outcome.summary.results {
        if v.random_violations() > 0 {
            eprintln!("{} bound violations on random-init models", v.random_violations());
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report(dir: &Path) -> anyhow::Result<ExitCode> {
    verify_manifest(dir)?;
    let mut run = RunDir::open(dir)?;
    emit_report(&mut run)?;
    run.finish()?;
    println!("{}", std::fs::read_to_string(dir.join("report.txt"))?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, None),
        Command::Report { run_dir } => report(run_dir),
        Command::VerifyBounds(args) => run(args, Some(Pipeline::BoundVerify)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
