mod calib;
mod files;
mod register;
mod serve;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "drillguide", version, about = "Virtual drill guide: calibration, registration, simulation and live state server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tool calibration from a recording of tracker poses.
    Calib {
        #[command(subcommand)]
        kind: calib::CalibKind,
    },
    /// Bone or hand-eye registration.
    Register {
        #[command(subcommand)]
        kind: register::RegisterKind,
    },
    /// Synthetic recordings with known ground truth.
    Generate(simulate::GenerateArgs),
    /// Seeded drilling trials; writes a metrics CSV and optional logs.
    Simulate(simulate::SimulateArgs),
    /// Energy audit of a trajectory log.
    Audit(simulate::AuditArgs),
    /// Live simulation behind a websocket.
    Serve(serve::ServeArgs),
}

/// Scenario file argument shared by several subcommands.
pub(crate) fn load_scenario(path: Option<&PathBuf>) -> anyhow::Result<drillguide::sim::Scenario> {
    use anyhow::Context;
    match path {
        None => Ok(drillguide::sim::Scenario::bundled()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let s = drillguide::sim::Scenario::from_json(&text).with_context(|| format!("invalid scenario {}", p.display()))?;
            Ok(s)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calib { kind } => calib::run(kind),
        Command::Register { kind } => register::run(kind),
        Command::Generate(a) => simulate::generate(a),
        Command::Simulate(a) => simulate::simulate(a),
        Command::Audit(a) => simulate::audit(a),
        Command::Serve(a) => serve::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
