//! `mpq`: command-line driver for the mixed-precision quantization pipeline.
//!
//! Every subcommand reads upstream artifacts from the output directory,
//! writes its own there atomically and leaves a `manifest-<command>.json`
//! that can be passed back through `--config` to reproduce the run.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::run::Run;

#[derive(Debug, Parser)]
#[command(name = "mpq", version, about = "Hessian-aware mixed-precision quantization pipeline")]
struct Cli {
    /// JSON pipeline config, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset or ingest the configured CSV.
    GenData,
    /// Train the float model.
    Train,
    /// Estimate per-layer Hessian traces.
    Trace,
    /// Choose per-layer bit widths under a BOPs budget.
    Allocate {
        /// BOPs budget, overriding the config.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Quantization-aware fine-tuning over the homogeneous-candidate grid.
    Sweep {
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Quantization-aware training and integer lowering.
    Quantize,
    /// Export the integer model as a quantized graph.
    ExportIr,
    /// Run the graph pass pipeline.
    OptIr,
    /// Evaluate a graph on the validation split.
    RunIr,
    /// Estimate FPGA resources for the chosen schema.
    Estimate,
    /// Join sweep results with resource estimates.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Trace => "trace",
            Command::Allocate { .. } => "allocate",
            Command::Sweep { .. } => "sweep",
            Command::Quantize => "quantize",
            Command::ExportIr => "export-ir",
            Command::OptIr => "opt-ir",
            Command::RunIr => "run-ir",
            Command::Estimate => "estimate",
            Command::Report => "report",
        }
    }
}

fn execute(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Command::Allocate { budget: Some(b) } = cli.command {
        cfg.allocation.budget = Some(b);
    }
    if let Command::Sweep { jobs: Some(0) } = cli.command {
        return Err(error::CliError::Config("--jobs must be >= 1".into()));
    }
    cfg.validate()?;
    let mut run = Run::new(cfg, cli.command.name())?;
    let outcome = match cli.command {
        Command::GenData => commands::gen_data(&mut run),
        Command::Train => commands::train_cmd(&mut run),
        Command::Trace => commands::trace(&mut run),
        Command::Allocate { .. } => commands::allocate(&mut run),
        Command::Sweep { jobs } => commands::sweep_cmd(&mut run, jobs),
        Command::Quantize => commands::quantize(&mut run),
        Command::ExportIr => commands::export_ir(&mut run),
        Command::OptIr => commands::opt_ir(&mut run),
        Command::RunIr => commands::run_ir(&mut run),
        Command::Estimate => commands::estimate_cmd(&mut run),
        Command::Report => commands::report(&mut run),
    };
    // An infeasible allocation still leaves its artifact and manifest.
    if let Err(e @ error::CliError::Infeasible { .. }) = outcome {
        run.finish()?;
        return Err(e);
    }
    let summary = outcome?;
    let manifest = run.finish()?;
    Ok(format!("{summary}\nmanifest: {}", manifest.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
