//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covbook_core::pipeline::{
    run_experiment, stage_build_codebook, stage_evaluate, stage_gen_data, stage_label,
    stage_sweep, stage_train_encoder, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "covbook",
    about = "Learns transmit-covariance codebooks and neural feedback encoders, \
             and evaluates transmit strategies on synthetic channel data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and reports.
    #[arg(long)]
    out: PathBuf,
    /// Replace every stage seed with one derived from this value.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, SNR-filter and split the channel dataset.
    GenData(CommonArgs),
    /// Learn codebooks from the training split.
    BuildCodebook(CommonArgs),
    /// Write the optimal feedback indices of the training split.
    Label(CommonArgs),
    /// Random-search and train the feedback encoders.
    TrainEncoder(CommonArgs),
    /// Evaluate the configured strategies on the test split.
    Evaluate(CommonArgs),
    /// Mean spectral efficiency over pilot counts.
    SweepPilots(CommonArgs),
    /// Run every stage the config describes.
    Run(CommonArgs),
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig, covbook_core::Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seeds(seed);
    }
    std::fs::create_dir_all(&args.out)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), (String, covbook_core::Error)> {
    let staged = |stage: &str, e: covbook_core::Error| (stage.to_string(), e);
    match cli.command {
        Command::GenData(args) => {
            let cfg = load(&args).map_err(|e| staged("gen-data", e))?;
            stage_gen_data(&cfg, &args.out).map_err(|e| staged("gen-data", e))?;
        }
        Command::BuildCodebook(args) => {
            let cfg = load(&args).map_err(|e| staged("build-codebook", e))?;
            stage_build_codebook(&cfg, &args.out).map_err(|e| staged("build-codebook", e))?;
        }
        Command::Label(args) => {
            let cfg = load(&args).map_err(|e| staged("label", e))?;
            stage_label(&cfg, &args.out).map_err(|e| staged("label", e))?;
        }
        Command::TrainEncoder(args) => {
            let cfg = load(&args).map_err(|e| staged("train-encoder", e))?;
            stage_train_encoder(&cfg, &args.out).map_err(|e| staged("train-encoder", e))?;
        }
        Command::Evaluate(args) => {
            let cfg = load(&args).map_err(|e| staged("evaluate", e))?;
            let report = stage_evaluate(&cfg, &args.out).map_err(|e| staged("evaluate", e))?;
            print!("{}", report.to_text());
        }
        Command::SweepPilots(args) => {
            let cfg = load(&args).map_err(|e| staged("sweep-pilots", e))?;
            stage_sweep(&cfg, &args.out).map_err(|e| staged("sweep-pilots", e))?;
            println!("sweep written to {}", args.out.join("fig3_sweep.csv").display());
        }
        Command::Run(args) => {
            let summary = run_experiment(&args.config, &args.out, args.seed)
                .map_err(|e| (e.stage_name().unwrap_or("run").to_string(), e))?;
            println!("stages run: {}", summary.stages_run.join(", "));
            if !summary.report.box_rows.is_empty() || summary.report.sweep.is_some() {
                print!("{}", summary.report.to_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, err)) => {
            eprintln!("error in stage '{stage}': {err}");
            ExitCode::FAILURE
        }
    }
}
