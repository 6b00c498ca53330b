//! Command-line front end: `simulate | track | evaluate | all`.
//!
//! Exit codes: 0 on success, 1 when tracking is lost (partial outputs are
//! still written) or the pipeline fails, 2 on unreadable or invalid input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evtrack::config::{ConfigError, DetectorKind, RunConfig};
use evtrack::pipeline::{cmd_evaluate, cmd_simulate, cmd_track, write_manifest, PipelineError};
use evtrack::tracker::TrackerError;

#[derive(Debug, Parser)]
#[command(
    name = "evtrack",
    version,
    about = "Event-camera keypoint tracking and object pose estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults describe the reference cuboid sweep.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Step between compared poses, in truth samples.
    #[arg(long, global = true)]
    delta: Option<usize>,
    #[arg(long, global = true, value_enum)]
    detector: Option<DetectorKind>,
    /// Directory for all outputs and the manifest.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Render events and the ground-truth trajectory.
    Simulate,
    /// Track keypoints and solve poses over a recorded stream.
    Track,
    /// Relative pose error of the estimate against the truth.
    Evaluate,
    /// Simulate, track and evaluate in one run.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Track => "track",
            Command::Evaluate => "evaluate",
            Command::All => "all",
        }
    }
}

enum Failure {
    Input(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let input = matches!(
            e,
            PipelineError::Config(_)
                | PipelineError::Io { .. }
                | PipelineError::EventFile { .. }
                | PipelineError::TrajectoryFile { .. }
                | PipelineError::SensorMismatch { .. }
                | PipelineError::Tracker(TrackerError::Io(_))
        );
        if input {
            Failure::Input(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(delta) = cli.delta {
        config.evaluation.delta = delta;
    }
    if let Some(detector) = cli.detector {
        config.tracking.detector = detector;
    }
    if let Some(output) = &cli.output {
        config.paths.output = output.clone();
    }
    config.validate()?;
    Ok(config)
}

/// Runs the requested stages; returns whether tracking was lost.
fn run(cli: &Cli) -> Result<bool, Failure> {
    let config = load_config(cli)?;
    let mut outputs = Vec::new();
    let mut lost = false;
    let cmd = cli.command;
    if matches!(cmd, Command::Simulate | Command::All) {
        outputs.extend(cmd_simulate(&config)?);
    }
    if matches!(cmd, Command::Track | Command::All) {
        let (paths, out) = cmd_track(&config)?;
        outputs.extend(paths);
        if let Some(e) = &out.lost {
            eprintln!("evtrack: {e}; wrote {} poses", out.estimate.len());
            lost = true;
        }
        if out.flagged_windows > 0 {
            log::info!("{} windows held the previous pose", out.flagged_windows);
        }
    }
    if matches!(cmd, Command::Evaluate | Command::All) {
        let (paths, report) = cmd_evaluate(&config)?;
        outputs.extend(paths);
        println!(
            "R_rel {:.6} deg/s  T_rel {:.6} cm/s  (m = {}, delta = {})",
            report.r_rel_deg_per_s, report.t_rel_cm_per_s, report.m, report.delta
        );
    }
    write_manifest(&config, cmd.name(), &outputs)?;
    Ok(lost)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("evtrack: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("evtrack: {msg}");
            ExitCode::from(2)
        }
    }
}
