mod commands;
mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Needs, Options, RunConfig};
use error::CliError;

/// LLM-prompted network intrusion detection.
#[derive(Debug, Parser)]
#[command(name = "llm-nids", version, about)]
struct Cli {
    /// Log progress to stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask the model to pick and rank features from the catalog
    SelectFeatures {
        #[command(flatten)]
        options: Options,
    },
    /// Classify one flow with in-context examples drawn from a labeled CSV
    Detect {
        /// Flow to classify: a JSON object of feature values, or a file holding one
        #[arg(long)]
        flow: String,
        /// Labeled flow CSV to draw in-context examples from
        #[arg(long)]
        examples: PathBuf,
        /// Number of in-context examples
        #[arg(long = "n-examples")]
        n_examples: Option<usize>,
        #[command(flatten)]
        options: Options,
    },
    /// Score one strategy and example count on the labeled datasets
    Evaluate {
        /// Number of in-context examples
        #[arg(long)]
        examples: Option<usize>,
        #[command(flatten)]
        options: Options,
    },
    /// Evaluate every strategy × example count cell
    Sweep {
        #[command(flatten)]
        options: Options,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SelectFeatures { .. } => "select-features",
            Command::Detect { .. } => "detect",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
        }
    }
}

fn resolve(command: &Command) -> Result<RunConfig, CliError> {
    let (mut options, needs) = match command {
        Command::SelectFeatures { options } => (options.clone(), Needs::default()),
        Command::Detect { options, .. } => (options.clone(), Needs::default()),
        Command::Evaluate { options, .. } | Command::Sweep { options } => {
            (options.clone(), Needs { datasets: true })
        }
    };
    match command {
        Command::Detect { n_examples, .. } => options.n_examples = *n_examples,
        Command::Evaluate { examples, .. } => options.n_examples = *examples,
        _ => {}
    }
    RunConfig::resolve(options, needs)
}

fn execute(command: &Command, config: &RunConfig, out: &Path) -> Result<commands::Outcome, CliError> {
    let backend = commands::build_backend(config, out)?;
    let session = commands::session(config, &backend)?;
    match command {
        Command::SelectFeatures { .. } => commands::select(config, &session, out),
        Command::Detect { flow, examples, .. } => commands::detect_one(config, &session, out, flow, examples),
        Command::Evaluate { .. } => commands::evaluate_one(config, &session, out),
        Command::Sweep { .. } => commands::sweep(config, &session, out),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(&cli.command)?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::io(out.display(), e))?;
    let started = Utc::now();
    let result = execute(&cli.command, &config, &out);
    let error = match &result {
        Ok(o) => o.failure.as_ref().map(ToString::to_string),
        Err(e) => Some(e.to_string()),
    };
    let exit_code = match &result {
        Ok(o) => o.failure.as_ref().map_or(0, CliError::exit_code),
        Err(e) => e.exit_code(),
    };
    write_manifest(&out, cli.command.name(), &config, started, exit_code, error)?;
    let outcome = result?;
    print!("{}", outcome.stdout);
    if !outcome.stdout.ends_with('\n') {
        println!();
    }
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: &RunConfig,
    started: chrono::DateTime<Utc>,
    exit_code: u8,
    error: Option<String>,
) -> Result<(), CliError> {
    let mut artifacts: Vec<String> = fs::read_dir(out)
        .map_err(|e| CliError::io(out.display(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    artifacts.sort();
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "started_at": started.to_rfc3339_opts(SecondsFormat::Millis, true),
        "finished_at": Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        "exit_code": exit_code,
        "error": error,
        "config": config.echo(),
        "artifacts": artifacts,
    });
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(path.display(), e))
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
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
