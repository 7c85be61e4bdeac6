//! Run configuration: a JSON file, overridden field by field by flags, over
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use llm_nids::eval::{DEFAULT_EXAMPLE_COUNTS, DEFAULT_EXAMPLE_FRACTION};
use llm_nids::llm_client::{HttpConfig, Session};
use llm_nids::prompting::{HeuristicQuestions, IclStrategy};
use llm_nids::selection::DEFAULT_FEATURE_COUNT;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

/// Every configurable field. The config file and the flags share this shape,
/// so a manifest's config echo can be fed back with `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// JSON config file; flags override its values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Backend kind
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
    /// Chat-completions URL for the http backend
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Model name for the http backend
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Environment variable holding the API key
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// HTTP request timeout in seconds
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// Transport retries per HTTP request
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http_retries: Option<u32>,
    /// JSON-lines reply script for the scripted backend
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,

    /// Feature catalog CSV (name,unit,description)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    /// Labeled flow CSV; repeat to concatenate several files
    #[arg(long = "dataset")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub datasets: Option<Vec<PathBuf>>,
    /// Comma-separated feature names to use instead of running selection
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    /// selection.json from an earlier select-features run
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<PathBuf>,
    /// Number of features the model is asked to select
    #[arg(long = "count")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_count: Option<usize>,

    /// In-context learning strategy
    #[arg(long, value_parser = ["illustrative", "heuristic", "interactive"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Heuristic questions, one per line
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub questions: Option<PathBuf>,
    /// Number of in-context examples (set by the subcommand's own flag)
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_examples: Option<usize>,
    /// Comma-separated strategies for a sweep
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<String>>,
    /// Comma-separated example counts for a sweep
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_counts: Option<Vec<usize>>,

    /// Seed for splitting and example sampling
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Attempts per answer before giving up on an unclear reply
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_cap: Option<u32>,
    /// Concurrent scoring threads
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Share of labeled flows reserved for the example pool
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_fraction: Option<f64>,
    /// Score at most this many test flows
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_scored: Option<usize>,
    /// Keep only benign flows and this attack type
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_type: Option<String>,
    /// Sampling temperature
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Completion token limit
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    /// Directory receiving every artifact of the run
    #[arg(long = "out")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl Options {
    /// Fields set in `top` win.
    fn overlay(mut self, top: Options) -> Options {
        overlay!(self, top;
            backend, endpoint, model, api_key_env, timeout_secs, http_retries, script,
            catalog, datasets, features, selection, feature_count,
            strategy, questions, n_examples, strategies, example_counts,
            seed, retry_cap, workers, example_fraction, max_scored, attack_type,
            temperature, max_output_tokens, output_dir,
        );
        self
    }

    fn rebase_paths(&mut self, dir: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [&mut self.script, &mut self.catalog, &mut self.selection, &mut self.questions, &mut self.output_dir]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        for p in self.datasets.iter_mut().flatten() {
            join(p);
        }
    }
}

pub fn read_config_file(path: &Path) -> Result<Options, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut options: Options = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
    // Paths in a config file are relative to the file itself.
    if let Some(dir) = path.parent() {
        options.rebase_paths(dir);
    }
    Ok(options)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    Names(Vec<String>),
    SelectionFile(PathBuf),
    /// Ask the model.
    Select,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub http: HttpConfig,
    pub script: Option<PathBuf>,
    pub catalog: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub features: FeatureSource,
    pub feature_count: usize,
    pub strategy: IclStrategy,
    pub questions: Option<PathBuf>,
    pub n_examples: usize,
    pub strategies: Vec<IclStrategy>,
    pub example_counts: Vec<usize>,
    pub seed: u64,
    pub retry_cap: u32,
    pub workers: usize,
    pub example_fraction: f64,
    pub max_scored: Option<usize>,
    pub attack_type: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub output_dir: PathBuf,
}

pub const DEFAULT_OUTPUT_DIR: &str = "out";

/// What a subcommand needs beyond the common fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub datasets: bool,
}

impl RunConfig {
    /// Loads the config file named in `flags` (if any), applies the flags on
    /// top, fills defaults, and validates.
    pub fn resolve(flags: Options, needs: Needs) -> Result<Self, CliError> {
        let merged = match &flags.config {
            Some(path) => read_config_file(path)?.overlay(flags),
            None => flags,
        };
        Self::from_options(merged, needs)
    }

    fn from_options(o: Options, needs: Needs) -> Result<Self, CliError> {
        let usage = |m: &str| CliError::Usage(m.to_string());
        let backend = o.backend.unwrap_or(BackendKind::Http);
        let mut http = HttpConfig::default();
        if let Some(v) = o.endpoint.clone() {
            http.endpoint = v;
        }
        if let Some(v) = o.model.clone() {
            http.model = v;
        }
        if let Some(v) = o.api_key_env.clone() {
            http.api_key_env = v;
        }
        if let Some(v) = o.timeout_secs {
            http.timeout_secs = v;
        }
        if let Some(v) = o.http_retries {
            http.retry.max_retries = v;
        }
        if backend == BackendKind::Scripted && o.script.is_none() {
            return Err(usage("the scripted backend needs --script"));
        }
        let catalog = o.catalog.clone().ok_or_else(|| usage("--catalog is required"))?;
        let datasets = o.datasets.clone().unwrap_or_default();
        if needs.datasets && datasets.is_empty() {
            return Err(usage("at least one --dataset is required"));
        }
        let features = match (&o.features, &o.selection) {
            (Some(_), Some(_)) => return Err(usage("give either --features or --selection, not both")),
            (Some(names), None) if names.is_empty() => return Err(usage("--features is empty")),
            (Some(names), None) => FeatureSource::Names(names.iter().map(|n| n.trim().to_string()).collect()),
            (None, Some(path)) => FeatureSource::SelectionFile(path.clone()),
            (None, None) => FeatureSource::Select,
        };

        let questions = match &o.questions {
            Some(path) => {
                let file = fs::File::open(path)
                    .map_err(|e| CliError::Config(format!("cannot read questions {}: {e}", path.display())))?;
                Some(HeuristicQuestions::from_lines(std::io::BufReader::new(file)).map_err(|e| {
                    CliError::Config(format!("bad questions file {}: {e}", path.display()))
                })?)
            }
            None => None,
        };
        let parse_strategy = |name: &str| -> Result<IclStrategy, CliError> {
            let s: IclStrategy = name.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            Ok(match (&s, &questions) {
                (IclStrategy::Heuristic(_), Some(q)) => IclStrategy::Heuristic(q.clone()),
                _ => s,
            })
        };
        let strategy = parse_strategy(o.strategy.as_deref().unwrap_or("illustrative"))?;
        let strategies = match &o.strategies {
            Some(names) => names.iter().map(|n| parse_strategy(n)).collect::<Result<Vec<_>, _>>()?,
            None => IclStrategy::all()
                .into_iter()
                .map(|s| parse_strategy(s.name()))
                .collect::<Result<_, _>>()?,
        };
        let example_counts = o.example_counts.clone().unwrap_or_else(|| DEFAULT_EXAMPLE_COUNTS.to_vec());

        let config = RunConfig {
            backend,
            http,
            script: o.script.clone(),
            catalog,
            datasets,
            features,
            feature_count: o.feature_count.unwrap_or(DEFAULT_FEATURE_COUNT),
            strategy,
            questions: o.questions.clone(),
            n_examples: o.n_examples.unwrap_or(10),
            strategies,
            example_counts,
            seed: o.seed.unwrap_or(42),
            retry_cap: o.retry_cap.unwrap_or(Session::DEFAULT_RETRY_CAP),
            workers: o.workers.unwrap_or(1),
            example_fraction: o.example_fraction.unwrap_or(DEFAULT_EXAMPLE_FRACTION),
            max_scored: o.max_scored,
            attack_type: o.attack_type.clone(),
            temperature: o.temperature.unwrap_or(0.0),
            max_output_tokens: o.max_output_tokens.unwrap_or(512),
            output_dir: o.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.seed == 0 {
            return usage("--seed must be positive".into());
        }
        if self.retry_cap == 0 {
            return usage("--retry-cap must be positive".into());
        }
        if self.workers == 0 {
            return usage("--workers must be positive".into());
        }
        if self.n_examples == 0 || self.example_counts.contains(&0) {
            return usage("example counts must be positive".into());
        }
        if self.feature_count == 0 {
            return usage("--count must be positive".into());
        }
        if self.max_scored == Some(0) {
            return usage("--max-scored must be positive".into());
        }
        if self.strategies.is_empty() || self.example_counts.is_empty() {
            return usage("a sweep needs at least one strategy and one example count".into());
        }
        if !(self.example_fraction > 0.0 && self.example_fraction < 1.0) {
            return usage(format!("--example-fraction {} must lie strictly between 0 and 1", self.example_fraction));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return usage(format!("--temperature {} must lie in [0, 2]", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return usage("--max-output-tokens must be positive".into());
        }
        let mut paths: Vec<&Path> = vec![&self.catalog];
        paths.extend(self.datasets.iter().map(PathBuf::as_path));
        paths.extend(self.script.as_deref().filter(|_| self.backend == BackendKind::Scripted));
        if let FeatureSource::SelectionFile(p) = &self.features {
            paths.push(p);
        }
        for path in paths {
            if !path.is_file() {
                return Err(CliError::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// The effective configuration in config-file form, paths made absolute,
    /// for the run manifest.
    pub fn echo(&self) -> Options {
        let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        let (features, selection) = match &self.features {
            FeatureSource::Names(n) => (Some(n.clone()), None),
            FeatureSource::SelectionFile(p) => (None, Some(abs(p))),
            FeatureSource::Select => (None, None),
        };
        Options {
            config: None,
            backend: Some(self.backend),
            endpoint: Some(self.http.endpoint.clone()),
            model: Some(self.http.model.clone()),
            api_key_env: Some(self.http.api_key_env.clone()),
            timeout_secs: Some(self.http.timeout_secs),
            http_retries: Some(self.http.retry.max_retries),
            script: self.script.as_deref().map(abs),
            catalog: Some(abs(&self.catalog)),
            datasets: Some(self.datasets.iter().map(|p| abs(p)).collect()),
            features,
            selection,
            feature_count: Some(self.feature_count),
            strategy: Some(self.strategy.name().to_string()),
            questions: self.questions.as_deref().map(abs),
            n_examples: Some(self.n_examples),
            strategies: Some(self.strategies.iter().map(|s| s.name().to_string()).collect()),
            example_counts: Some(self.example_counts.clone()),
            seed: Some(self.seed),
            retry_cap: Some(self.retry_cap),
            workers: Some(self.workers),
            example_fraction: Some(self.example_fraction),
            max_scored: self.max_scored,
            attack_type: self.attack_type.clone(),
            temperature: Some(self.temperature),
            max_output_tokens: Some(self.max_output_tokens),
            output_dir: Some(abs(&self.output_dir)),
        }
    }
}
