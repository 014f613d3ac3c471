use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

mod commands;

#[derive(Parser)]
#[command(name = "setsens", version, about = "Set-valued sensitivity analysis for deep ReLU networks")]
struct Cli {
    /// JSON object whose keys override the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate teacher-labelled Gaussian data and the teacher checkpoint.
    Synth(commands::SynthArgs),
    /// Train a network by gradient descent and write a checkpoint.
    Train(commands::TrainArgs),
    /// Per-layer Lipschitz-like moduli at a checkpoint.
    Kappa(commands::KappaArgs),
    /// Estimate the solution set after a data perturbation.
    Estimate(commands::EstimateArgs),
    /// Empirical inclusion check by retraining, plus derivative oracles.
    Verify(commands::VerifyArgs),
    /// Reproduce the two-weight example: report, landscapes and solution sets.
    Toy(commands::ToyArgs),
}

pub struct Failure {
    kind: &'static str,
    message: String,
}

impl From<setsens::Error> for Failure {
    fn from(e: setsens::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            kind: "config",
            message: message.into(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Overlay the keys of the `--config` object onto the parsed flags.
fn resolve<T: Serialize + DeserializeOwned>(args: T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else { return Ok(args) };
    let overlay: Value = setsens::io::read_json(path)?;
    let Value::Object(overlay) = overlay else {
        return Err(Failure::config(format!("{} is not a JSON object", path.display())));
    };
    let mut base = serde_json::to_value(&args).map_err(|e| Failure::config(e.to_string()))?;
    let fields = base.as_object_mut().expect("argument structs serialise to objects");
    for (k, v) in overlay {
        if !fields.contains_key(&k) {
            return Err(Failure::config(format!("unknown config key `{k}`")));
        }
        fields.insert(k, v);
    }
    serde_json::from_value(base).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(resolve(a, cfg)?),
        Command::Train(a) => commands::train(resolve(a, cfg)?),
        Command::Kappa(a) => commands::kappa(resolve(a, cfg)?),
        Command::Estimate(a) => commands::estimate(resolve(a, cfg)?),
        Command::Verify(a) => commands::verify(resolve(a, cfg)?),
        Command::Toy(a) => commands::toy(resolve(a, cfg)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "kind": f.kind, "message": f.message }));
            ExitCode::FAILURE
        }
    }
}
