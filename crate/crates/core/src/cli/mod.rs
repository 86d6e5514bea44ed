//! Command-line front end: config loading, stage dispatch, error records.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::verify;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// `(key, message)` pairs.
    #[error("invalid configuration: {}", .0.iter().map(|(k, m)| format!("{k}: {m}")).collect::<Vec<_>>().join("; "))]
    Config(Vec<(String, String)>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        Self::Config(vec![(key.to_string(), message.into())])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    pub fn record(&self) -> serde_json::Value {
        match self {
            Self::Config(d) => json!({
                "error": "config",
                "exit_code": 2,
                "diagnostics": d.iter().map(|(k, m)| json!({ "key": k, "message": m })).collect::<Vec<_>>(),
            }),
            Self::Runtime(m) => json!({ "error": "runtime", "exit_code": 1, "message": m }),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    crate::datagen::DataError,
    crate::vqmodel::VqError,
    crate::cpd::CpdError,
    crate::downstream::DownstreamError,
    crate::numkernel::KernelError
);

#[derive(Debug, Parser)]
#[command(name = "vqprofile", version, about = "Discrete behavioural profiles, change points and emotion prediction")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train_vq.train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; defaults to `out_dir`, or the VQPROFILE_OUT variable.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with ground-truth regimes, events and labels.
    Synth,
    /// Clip, split on gaps, partition patients and fit the robust scaler.
    Preprocess,
    /// Train the VQ autoencoder and report imputation error.
    TrainVq,
    /// Extract per-day profile sequences with the frozen encoder.
    Profile,
    /// Run change-point detection and alarm scoring over profile sequences.
    Cpd,
    /// ROC curves and AUC of the alarm scores against events.
    EvalEvents,
    /// Train and evaluate the emotion classifier.
    Emotion,
    /// Embedding dimension by dictionary size grid.
    Ablate,
    /// Run the oracle suites, or re-execute recorded runs with `--replay`.
    Verify {
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Collect plot-ready tables from existing outputs.
    Report,
    /// synth through report, excluding ablate.
    All,
    /// Print the effective configuration as TOML.
    Config,
}

impl Command {
    fn stage_name(&self) -> Option<&'static str> {
        Some(match self {
            Self::Synth => "synth",
            Self::Preprocess => "preprocess",
            Self::TrainVq => "train-vq",
            Self::Profile => "profile",
            Self::Cpd => "cpd",
            Self::EvalEvents => "eval-events",
            Self::Emotion => "emotion",
            Self::Ablate => "ablate",
            Self::Report => "report",
            _ => return None,
        })
    }
}

fn print_manifest(m: &manifest::RunManifest) {
    println!("{}", json!({ "command": m.command, "seconds": m.wall_clock_seconds, "metrics": m.metrics }));
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Verify { replay: None } = cli.command {
        let suites = verify::all_suites();
        for s in &suites {
            println!("{}", serde_json::to_string(s).map_err(|e| CliError::Runtime(e.to_string()))?);
        }
        let failed: Vec<&str> = suites.iter().filter(|s| !s.pass).map(|s| s.name.as_str()).collect();
        return if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::Runtime(format!("failed suites: {}", failed.join(", "))))
        };
    }
    if let Command::Verify { replay: Some(dir) } = &cli.command {
        let outcomes = commands::replay(dir)?;
        for o in &outcomes {
            println!("{}", serde_json::to_string(o).map_err(|e| CliError::Runtime(e.to_string()))?);
        }
        return match outcomes.iter().find(|o| !o.pass) {
            None => Ok(()),
            Some(o) => Err(CliError::Runtime(format!("replay of {} differs: {}", o.stage, o.mismatches.join("; ")))),
        };
    }
    let cfg = config::load(cli.config.as_deref(), &cli.set, cli.seed, cli.out.as_deref())?;
    match &cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::All => {
            for name in commands::PIPELINE {
                print_manifest(&commands::execute(name, &cfg)?);
            }
            Ok(())
        }
        c => {
            let name = c.stage_name().expect("remaining commands are stages");
            print_manifest(&commands::execute(name, &cfg)?);
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print a JSON error record on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            eprintln!("{}", CliError::config("<arguments>", e.kind().to_string()).record());
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
