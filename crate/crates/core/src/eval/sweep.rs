use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog::FlowRecord;
use crate::llm_client::Session;
use crate::prompting::{HeuristicCache, IclStrategy, PromptContext};

use super::{
    check_labeled, evaluate_split, restrict_to_attack, split_dataset, EvalError, EvalRun, EvalSettings,
    PartialRun,
};

pub const DEFAULT_EXAMPLE_COUNTS: [usize; 5] = [2, 4, 6, 8, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    strategies: Vec<IclStrategy>,
    example_counts: Vec<usize>,
    /// Shared settings; `strategy` and `n_examples` are set per cell.
    pub base: EvalSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: IclStrategy::all(),
            example_counts: DEFAULT_EXAMPLE_COUNTS.to_vec(),
            base: EvalSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn new(
        strategies: Vec<IclStrategy>,
        example_counts: Vec<usize>,
        base: EvalSettings,
    ) -> Result<Self, EvalError> {
        if strategies.is_empty() {
            return Err(EvalError::InvalidSweep("no strategies".into()));
        }
        if example_counts.is_empty() {
            return Err(EvalError::InvalidSweep("no example counts".into()));
        }
        if example_counts.contains(&0) {
            return Err(EvalError::InvalidSweep("example counts must be positive".into()));
        }
        Ok(Self {
            strategies,
            example_counts,
            base,
        })
    }

    pub fn strategies(&self) -> &[IclStrategy] {
        &self.strategies
    }

    pub fn example_counts(&self) -> &[usize] {
        &self.example_counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub strategy: String,
    pub n_examples: usize,
    pub outcome: Result<EvalRun, CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub reason: String,
    pub partial: Option<PartialRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub n_examples: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub failure_rate: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn fmt4(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn r4(v: Option<f64>) -> Option<f64> {
    v.map(|v| (v * 10_000.0).round() / 10_000.0)
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,n_examples,accuracy,f1,failure_rate,status,error\n");
        for row in &self.rows {
            let error = row
                .error
                .as_deref()
                .map(|e| format!("\"{}\"", e.replace('"', "\"\"")))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.strategy,
                row.n_examples,
                fmt4(row.accuracy),
                fmt4(row.f1),
                fmt4(row.failure_rate),
                if row.ok() { "ok" } else { "failed" },
                error
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "strategy": r.strategy,
                    "n_examples": r.n_examples,
                    "accuracy": r4(r.accuracy),
                    "f1": r4(r.f1),
                    "failure_rate": r4(r.failure_rate),
                    "status": if r.ok() { "ok" } else { "failed" },
                    "error": r.error,
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("rows serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
}

impl SweepOutcome {
    pub fn table(&self) -> SweepTable {
        let rows = self
            .cells
            .iter()
            .map(|cell| match &cell.outcome {
                Ok(run) => SweepRow {
                    strategy: cell.strategy.clone(),
                    n_examples: cell.n_examples,
                    accuracy: Some(run.report.metrics.accuracy),
                    f1: Some(run.report.metrics.f1),
                    failure_rate: Some(run.report.failure_rate),
                    error: None,
                },
                Err(failure) => SweepRow {
                    strategy: cell.strategy.clone(),
                    n_examples: cell.n_examples,
                    accuracy: None,
                    f1: None,
                    failure_rate: None,
                    error: Some(failure.reason.clone()),
                },
            })
            .collect();
        SweepTable { rows }
    }

    pub fn runs(&self) -> impl Iterator<Item = &EvalRun> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok())
    }

    /// Writes `sweep.csv`, `sweep.json`, `reports.json`, `icl_blocks.jsonl`
    /// and `transcripts.jsonl` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let table = self.table();
        fs::write(dir.join("sweep.csv"), table.to_csv())?;
        fs::write(dir.join("sweep.json"), table.to_json())?;

        let mut reports = Vec::new();
        let mut blocks = io::BufWriter::new(fs::File::create(dir.join("icl_blocks.jsonl"))?);
        let mut transcripts = io::BufWriter::new(fs::File::create(dir.join("transcripts.jsonl"))?);
        for cell in &self.cells {
            let (flows, report) = match &cell.outcome {
                Ok(run) => {
                    let line = json!({
                        "strategy": cell.strategy,
                        "n_examples": cell.n_examples,
                        "example_rows": run.example_rows,
                        "block": run.icl_block,
                    });
                    writeln!(blocks, "{line}")?;
                    (&run.flows[..], json!(run.report))
                }
                Err(f) => (
                    f.partial.as_ref().map_or(&[][..], |p| &p.flows[..]),
                    json!({ "error": f.reason, "partial_counts": f.partial.as_ref().map(|p| p.counts) }),
                ),
            };
            reports.push(json!({
                "strategy": cell.strategy,
                "n_examples": cell.n_examples,
                "report": report,
            }));
            for flow in flows {
                let line = json!({
                    "strategy": cell.strategy,
                    "n_examples": cell.n_examples,
                    "flow": flow,
                });
                writeln!(transcripts, "{line}")?;
            }
        }
        blocks.flush()?;
        transcripts.flush()?;
        fs::write(
            dir.join("reports.json"),
            serde_json::to_string_pretty(&reports).expect("reports serialize"),
        )?;
        Ok(())
    }
}

/// Evaluates every (strategy, example count) cell in config order over one
/// shared pool/test split. Failed cells are kept in the outcome.
pub fn run_sweep(
    session: &Session<'_>,
    dataset: &[FlowRecord],
    config: &SweepConfig,
    ctx: &PromptContext<'_>,
) -> Result<SweepOutcome, EvalError> {
    let dataset = restrict_to_attack(dataset, config.base.attack_type.as_deref());
    check_labeled(&dataset)?;
    let split = split_dataset(&dataset, config.base.example_fraction, config.base.seed)?;
    let cache = HeuristicCache::new();
    let mut cells = Vec::with_capacity(config.strategies.len() * config.example_counts.len());
    for strategy in &config.strategies {
        for &n in &config.example_counts {
            let settings = EvalSettings {
                strategy: strategy.clone(),
                n_examples: n,
                ..config.base.clone()
            };
            log::info!("sweep cell: {strategy} with {n} examples");
            let outcome = evaluate_split(session, &dataset, &split, &settings, ctx, Some(&cache))
                .map_err(|e| match e {
                    EvalError::Aborted { reason, partial } => CellFailure {
                        reason,
                        partial: Some(*partial),
                    },
                    other => CellFailure {
                        reason: other.to_string(),
                        partial: None,
                    },
                });
            if let Err(f) = &outcome {
                log::warn!("cell {strategy}/{n} failed: {}", f.reason);
            }
            cells.push(SweepCell {
                strategy: strategy.name().to_string(),
                n_examples: n,
                outcome,
            });
        }
    }
    Ok(SweepOutcome { cells })
}
