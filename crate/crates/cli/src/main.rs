//! `roomforge` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roomforge::pipeline::{run_pipeline, run_single_stage, PipelineConfig, PipelineError, StageRecord};
use roomforge::Stage;

#[derive(Debug, Parser)]
#[command(name = "roomforge", version, about = "Text prompts to placed 3D assets in a floor plan")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults to the built-in demo config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate, score and rank prompts.
    Prompts,
    /// Render oracle views for the selected assets.
    Views,
    /// Fit a voxel radiance field per asset.
    Train,
    /// Extract, clean and color meshes.
    Mesh,
    /// Place meshes into the floor plan and export the scene.
    Assemble,
    /// Ray-trace preview images of the assembled room.
    Preview,
    /// Run all six stages in order.
    Run,
    /// Check the configuration and referenced files, then exit.
    ValidateConfig,
}

const CONFIG_ERROR: u8 = 2;
const STAGE_ERROR: u8 = 3;

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) => CONFIG_ERROR,
        _ => STAGE_ERROR,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.output = o.clone();
    }
    Ok(cfg)
}

fn print_record(r: &StageRecord) {
    let status = format!("{:?}", r.status).to_lowercase();
    let detail = r.error.as_deref().or(r.note.as_deref()).unwrap_or("");
    println!("{:<9} {:<9} {:>8.2}s  {detail}", r.stage.name(), status, r.seconds);
}

fn stage_of(c: &Command) -> Option<Stage> {
    Some(match c {
        Command::Prompts => Stage::Prompts,
        Command::Views => Stage::Views,
        Command::Train => Stage::Train,
        Command::Mesh => Stage::Mesh,
        Command::Assemble => Stage::Assemble,
        Command::Preview => Stage::Preview,
        Command::Run | Command::ValidateConfig => return None,
    })
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::ValidateConfig => {
            cfg.validate()?;
            println!("configuration ok: {} assets, {}³ fields, {} views, output {}", cfg.asset_count, cfg.train.resolution, cfg.cameras.count, cfg.paths.output.display());
            Ok(())
        }
        Command::Run => {
            let result = run_pipeline(&cfg);
            if let Ok(m) = roomforge::pipeline::RunManifest::load_or_new(&cfg) {
                m.stages.iter().for_each(print_record);
            }
            let m = result?;
            println!("manifest: {}", cfg.paths.output.join(roomforge::pipeline::MANIFEST_FILE).display());
            println!("{} of {} stages executed", m.executed().len(), m.stages.len());
            Ok(())
        }
        other => {
            let stage = stage_of(other).expect("single-stage command");
            let record = run_single_stage(stage, &cfg)?;
            print_record(&record);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
