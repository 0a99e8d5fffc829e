use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zdgan_cli::config::PAPER_CFG;
use zdgan_cli::{pipeline, CliError, ExperimentConfig, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "zdgan", version, about = "WGAN-GP minority augmentation and IDS evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the raw train/test files.
    Preprocess(Common),
    /// Fit one generator per (variant, minority class).
    TrainGan(Common),
    /// Sample synthetic rows from the trained generators.
    Synthesize(Common),
    /// Build the per-arm training sets.
    Mix(Common),
    /// Train the detectors of every arm.
    TrainIds(Common),
    /// Score the detectors on the test split.
    Evaluate(Common),
    /// Full run with one attack class held out of training.
    Loao(Common),
    /// Write summary tables and plot data.
    Report(Common),
    /// Run every stage.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config; the built-in paper defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides experiment.out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// section.key=value, applied after the config file.
    #[arg(long = "stage-override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Reuse finished stages whose artifacts still verify.
    #[arg(long)]
    resume: bool,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (common, until, single, loao) = match cli.command {
        Command::Preprocess(c) => (c, Stage::Preprocess, true, false),
        Command::TrainGan(c) => (c, Stage::TrainGan, true, false),
        Command::Synthesize(c) => (c, Stage::Synthesize, true, false),
        Command::Mix(c) => (c, Stage::Mix, true, false),
        Command::TrainIds(c) => (c, Stage::TrainIds, true, false),
        Command::Evaluate(c) => (c, Stage::Evaluate, true, false),
        Command::Report(c) => (c, Stage::Report, true, false),
        Command::Loao(c) => (c, Stage::Report, false, true),
        Command::All(c) => (c, Stage::Report, false, false),
    };
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_str(PAPER_CFG)?,
    };
    if loao {
        cfg.set("experiment.task", "loao")?;
    }
    cfg.apply_overrides(&common.overrides)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.experiment.out.clone());
    // single-stage commands build on whatever earlier stages left behind
    let opts = RunOptions { out, resume: common.resume || single, until };
    let manifest = pipeline::run(&cfg, &opts)?;
    for s in &manifest.stages {
        let how = if s.reused { "reused" } else { "ran" };
        println!("{:<11} {how:<6} {:>8.2}s  {}", s.name, s.seconds, s.dir);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
