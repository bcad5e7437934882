//! Command-line workbench: drive synthesis, ensemble simulation,
//! correlation analysis, and geometry reconstruction, one verb per stage.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error
//! (invalid JSON, schema violation, unknown preset).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinprog::config::ExperimentConfig;
use spinprog::io::OutputFormat;
use spinprog::pipeline::{run_pipeline, Stage};
use spinprog::presets;
use spinprog::Error;

#[derive(Parser)]
#[command(
    name = "spinprog",
    version,
    about = "Programmable spin-exchange toolkit: synthesize drive waveforms, run \
             truncated-Wigner ensembles, estimate correlations, and reconstruct geometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the drive waveform and dispersion for a configuration.
    Synth(RunArgs),
    /// Synthesize, then run the trajectory ensemble.
    Simulate(RunArgs),
    /// Simulate, then estimate correlation matrices, profiles, and the
    /// structure factor with a model fit.
    Analyze(RunArgs),
    /// Analyze, then fit distances and embed coordinates via MDS with
    /// inferred precision-matrix couplings.
    Embed(RunArgs),
    /// Embed, then reconstruct the coarse-grained bulk graph.
    Bulk(RunArgs),
    /// Run every stage end to end.
    Pipeline(RunArgs),
    /// List available presets.
    #[command(name = "preset-list")]
    PresetList,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in preset (see preset-list).
    #[arg(long)]
    preset: Option<String>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trajectory count.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Artifact format for matrices: csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, OutputFormat), Error> {
        let format: OutputFormat = self.format.parse().map_err(Error::Config)?;
        let mut config = match (&self.config, &self.preset) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)?;
                ExperimentConfig::from_json_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            (None, Some(name)) => presets::preset(name)?,
            (None, None) => {
                return Err(Error::Config("provide --config or --preset".into()))
            }
            (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(trajectories) = self.trajectories {
            config.trajectories = trajectories;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok((config, format))
    }
}

fn run_stage(args: &RunArgs, stage: Stage) -> Result<(), Error> {
    let (config, format) = args.load()?;
    let report = run_pipeline(&config, format, stage)?;
    println!(
        "wrote {} artifacts to {} in {} ms",
        report.artifacts.len(),
        report.output_dir.display(),
        report.wall_clock_ms
    );
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

fn is_config_error(err: &Error) -> bool {
    matches!(err, Error::Config(_) | Error::Json(_))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => run_stage(args, Stage::Synth),
        Command::Simulate(args) => run_stage(args, Stage::Simulate),
        Command::Analyze(args) => run_stage(args, Stage::Analyze),
        Command::Embed(args) => run_stage(args, Stage::Embed),
        Command::Bulk(args) => run_stage(args, Stage::Bulk),
        Command::Pipeline(args) => run_stage(args, Stage::Bulk),
        Command::PresetList => {
            for (name, description) in presets::preset_descriptions() {
                println!("{name:12} {description}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_config_error(&e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
