use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use llm_nids::catalog::{load_catalog, load_flows, FeatureCatalog, FlowRecord, Scalar};
use llm_nids::detection::{detect, DetectError};
use llm_nids::eval::{evaluate, run_sweep, EvalError, EvalSettings, FlowResult, SweepConfig};
use llm_nids::llm_client::{
    AuditedBackend, ChatBackend, CompletionParams, HttpBackend, ScriptedStub, Session, TranscriptLog,
};
use llm_nids::prompting::{assemble_prompt, build_icl_block, sample_examples, InstructionsConfig, PromptContext};
use llm_nids::selection::{
    filter_selection, select_features, FeatureSelection, RankedFeature, SelectedFeatureSet, SelectionConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{BackendKind, FeatureSource, RunConfig};
use crate::error::CliError;

/// What a finished subcommand prints, plus an optional failure that should
/// still set a non-zero exit status after artifacts are written.
pub struct Outcome {
    pub stdout: String,
    pub failure: Option<CliError>,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, failure: None }
    }
}

pub const LLM_LOG: &str = "llm_calls.jsonl";

pub fn build_backend(config: &RunConfig, out: &Path) -> Result<AuditedBackend<Box<dyn ChatBackend>>, CliError> {
    let inner: Box<dyn ChatBackend> = match config.backend {
        BackendKind::Http => Box::new(HttpBackend::from_env(config.http.clone())?),
        BackendKind::Scripted => {
            let path = config.script.as_deref().ok_or_else(|| CliError::Usage("--script is required".into()))?;
            let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
            Box::new(ScriptedStub::from_jsonl(BufReader::new(file))?)
        }
    };
    let log_path = out.join(LLM_LOG);
    let file = File::create(&log_path).map_err(|e| CliError::io(log_path.display(), e))?;
    Ok(AuditedBackend::new(inner, TranscriptLog::new(BufWriter::new(file))))
}

pub fn session<'a>(config: &RunConfig, backend: &'a dyn ChatBackend) -> Result<Session<'a>, CliError> {
    let params = CompletionParams::new(config.temperature, config.max_output_tokens, Some(config.seed))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Session::new(backend).with_params(params).with_retry_cap(config.retry_cap))
}

fn read_catalog(config: &RunConfig) -> Result<FeatureCatalog, CliError> {
    let file = File::open(&config.catalog).map_err(|e| CliError::io(config.catalog.display(), e))?;
    Ok(load_catalog(BufReader::new(file))?)
}

fn read_flows(path: &Path, catalog: &FeatureCatalog) -> Result<Vec<FlowRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    load_flows(BufReader::new(file), catalog).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn read_datasets(config: &RunConfig, catalog: &FeatureCatalog) -> Result<Vec<FlowRecord>, CliError> {
    let mut all = Vec::new();
    for path in &config.datasets {
        all.extend(read_flows(path, catalog)?);
    }
    Ok(all)
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let path = out.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(path.display(), e))
}

fn write_jsonl<T: Serialize>(out: &Path, name: &str, rows: &[T]) -> Result<(), CliError> {
    let path = out.join(name);
    let io_err = |e| CliError::io(path.display(), e);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// On-disk form of a feature selection.
#[derive(Debug, Serialize, Deserialize)]
struct SelectionFile {
    kept: Vec<usize>,
    names: Vec<String>,
    ranked: Vec<RankedFeature>,
}

impl SelectionFile {
    fn new(set: &SelectedFeatureSet, catalog: &FeatureCatalog) -> Self {
        Self {
            kept: set.kept().to_vec(),
            names: set
                .kept()
                .iter()
                .filter_map(|&i| catalog.get(i).map(|e| e.name.clone()))
                .collect(),
            ranked: set.provenance().ranked.clone(),
        }
    }
}

fn features(
    config: &RunConfig,
    catalog: &FeatureCatalog,
    session: &Session<'_>,
    out: &Path,
) -> Result<SelectedFeatureSet, CliError> {
    match &config.features {
        FeatureSource::Names(names) => {
            let indices = names
                .iter()
                .map(|n| {
                    catalog
                        .index_of(n)
                        .ok_or_else(|| CliError::Config(format!("feature `{n}` is not in the catalog")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SelectedFeatureSet::from_indices(indices))
        }
        FeatureSource::SelectionFile(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
            let file: SelectionFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid selection file {}: {e}", path.display())))?;
            if let Some(r) = file.ranked.iter().find(|r| catalog.get(r.index).is_none()) {
                return Err(CliError::Config(format!("selection index {} is not in the catalog", r.index)));
            }
            Ok(filter_selection(FeatureSelection { ranked: file.ranked })?)
        }
        FeatureSource::Select => {
            let set = run_selection(config, catalog, session)?;
            write_json(out, "selection.json", &SelectionFile::new(&set, catalog))?;
            Ok(set)
        }
    }
}

fn run_selection(
    config: &RunConfig,
    catalog: &FeatureCatalog,
    session: &Session<'_>,
) -> Result<SelectedFeatureSet, CliError> {
    let selection = SelectionConfig {
        count: config.feature_count,
        ..SelectionConfig::default()
    };
    Ok(select_features(session, catalog, &selection)?)
}

pub fn select(config: &RunConfig, session: &Session<'_>, out: &Path) -> Result<Outcome, CliError> {
    let catalog = read_catalog(config)?;
    let set = run_selection(config, &catalog, session)?;
    let file = SelectionFile::new(&set, &catalog);
    write_json(out, "selection.json", &file)?;
    Ok(Outcome::ok(json!({ "kept": file.kept, "names": file.names }).to_string()))
}

/// `--flow` is an inline JSON object or the path of a file holding one.
fn parse_flow(arg: &str, catalog: &FeatureCatalog) -> Result<FlowRecord, CliError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| CliError::io(arg, e))?
    };
    let values: BTreeMap<String, Scalar> =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--flow must be a JSON object: {e}")))?;
    let record = FlowRecord::new(values, None);
    record.validate(catalog).map_err(|e| CliError::Usage(format!("--flow: {e}")))?;
    Ok(record)
}

pub fn detect_one(
    config: &RunConfig,
    session: &Session<'_>,
    out: &Path,
    flow: &str,
    examples: &Path,
) -> Result<Outcome, CliError> {
    let catalog = read_catalog(config)?;
    let target = parse_flow(flow, &catalog)?;
    if !examples.is_file() {
        return Err(CliError::Config(format!("{} does not exist", examples.display())));
    }
    let pool = read_flows(examples, &catalog)?;
    let kept = features(config, &catalog, session, out)?;
    let instructions = InstructionsConfig::default();
    let ctx = PromptContext {
        catalog: &catalog,
        features: &kept,
        instructions: &instructions,
    };
    let examples = sample_examples(&pool, config.n_examples, config.seed, &ctx)?;
    let block = build_icl_block(&config.strategy, &examples, &ctx, Some(session), None)?;
    let bundle = assemble_prompt(&block, &target, &ctx)?;
    let (verdict, attempts, transcript, failure) = match detect(session, &bundle) {
        Ok(o) => (Some(o.verdict), o.attempts, o.transcript, None),
        Err(DetectError::AmbiguousAfterRetries { attempts, transcript }) => (
            None,
            attempts,
            *transcript,
            Some(CliError::Evaluation(format!("no clear verdict after {attempts} attempts"))),
        ),
        Err(e) => return Err(e.into()),
    };
    write_json(
        out,
        "detection.json",
        &json!({
            "verdict": verdict,
            "attempts": attempts,
            "strategy": config.strategy.name(),
            "icl_block": block,
            "prompt": bundle,
            "transcript": transcript,
        }),
    )?;
    Ok(Outcome {
        stdout: json!({ "verdict": verdict, "attempts": attempts }).to_string(),
        failure,
    })
}

fn settings(config: &RunConfig) -> EvalSettings {
    EvalSettings {
        strategy: config.strategy.clone(),
        n_examples: config.n_examples,
        seed: config.seed,
        workers: config.workers,
        example_fraction: config.example_fraction,
        max_scored: config.max_scored,
        attack_type: config.attack_type.clone(),
    }
}

pub fn evaluate_one(config: &RunConfig, session: &Session<'_>, out: &Path) -> Result<Outcome, CliError> {
    let catalog = read_catalog(config)?;
    let dataset = read_datasets(config, &catalog)?;
    let kept = features(config, &catalog, session, out)?;
    let instructions = InstructionsConfig::default();
    let ctx = PromptContext {
        catalog: &catalog,
        features: &kept,
        instructions: &instructions,
    };
    let run = match evaluate(session, &dataset, &settings(config), &ctx, None) {
        Ok(run) => run,
        Err(EvalError::Aborted { reason, partial }) => {
            write_jsonl(out, "flows.jsonl", &partial.flows)?;
            return Err(EvalError::Aborted { reason, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_jsonl::<FlowResult>(out, "flows.jsonl", &run.flows)?;
    write_json(
        out,
        "report.json",
        &json!({
            "strategy": run.strategy,
            "n_examples": run.n_examples,
            "report": run.report,
            "example_rows": run.example_rows,
            "icl_block": run.icl_block,
        }),
    )?;
    let report: Value = serde_json::to_value(&run.report).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Outcome::ok(
        json!({
            "strategy": run.strategy,
            "n_examples": run.n_examples,
            "scored": run.flows.len(),
            "accuracy": report["accuracy"],
            "f1": report["f1"],
            "failure_rate": report["failure_rate"],
        })
        .to_string(),
    ))
}

pub fn sweep(config: &RunConfig, session: &Session<'_>, out: &Path) -> Result<Outcome, CliError> {
    let catalog = read_catalog(config)?;
    let dataset = read_datasets(config, &catalog)?;
    let kept = features(config, &catalog, session, out)?;
    let instructions = InstructionsConfig::default();
    let ctx = PromptContext {
        catalog: &catalog,
        features: &kept,
        instructions: &instructions,
    };
    let sweep_config = SweepConfig::new(config.strategies.clone(), config.example_counts.clone(), settings(config))?;
    let outcome = run_sweep(session, &dataset, &sweep_config, &ctx)?;
    outcome
        .write_artifacts(out)
        .map_err(|e| CliError::io(out.display(), e))?;
    let table = outcome.table();
    let failed = table.rows.iter().filter(|r| !r.ok()).count();
    Ok(Outcome {
        stdout: table.to_csv(),
        failure: (failed > 0).then(|| CliError::Evaluation(format!("{failed} sweep cells failed"))),
    })
}
