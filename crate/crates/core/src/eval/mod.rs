//! Scoring detectors over labeled flows and sweeping strategy × example count.

mod metrics;
mod sweep;

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::FlowRecord;
use crate::detection::{detect, DetectError, Verdict};
use crate::llm_client::{Conversation, Session};
use crate::prompting::{
    assemble_prompt, build_icl_block, sample_example_indices, HeuristicCache, IclBlock, IclExample,
    IclStrategy, PromptContext, PromptError,
};

pub use metrics::{compute_metrics, round4, ConfusionCounts, Metrics};
pub use sweep::{run_sweep, CellFailure, SweepCell, SweepConfig, SweepOutcome, SweepRow, SweepTable, DEFAULT_EXAMPLE_COUNTS};

/// Default share of labeled flows reserved as the in-context example pool.
pub const DEFAULT_EXAMPLE_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("dataset contains {0} unlabeled flows; evaluation needs ground truth")]
    Unlabeled(usize),
    #[error("example pool and scored flows overlap at dataset row {0}")]
    PoolOverlap(usize),
    #[error("example fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("worker count must be positive")]
    NoWorkers,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("evaluation aborted after {} scored flows: {reason}", partial.flows.len())]
    Aborted {
        reason: String,
        partial: Box<PartialRun>,
    },
}

/// Results gathered before an evaluation was aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRun {
    pub counts: ConfusionCounts,
    pub flows: Vec<FlowResult>,
}

/// Scores for one attack type against the shared benign flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    /// Flows of this attack type that were scored.
    pub scored: u64,
    pub counts: ConfusionCounts,
    #[serde(serialize_with = "round4")]
    pub accuracy: f64,
    #[serde(serialize_with = "round4")]
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub failures: u64,
    #[serde(serialize_with = "round4")]
    pub failure_rate: f64,
    pub benign_scored: u64,
    pub per_attack: BTreeMap<String, AttackScore>,
}

impl EvalReport {
    pub fn from_results(flows: &[FlowResult]) -> Result<Self, EvalError> {
        let mut counts = ConfusionCounts::default();
        let mut benign = ConfusionCounts::default();
        let mut attacks: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
        let mut failures = 0;
        for flow in flows {
            counts.record(flow.truth, flow.predicted);
            if flow.predicted.is_none() {
                failures += 1;
            }
            match (&flow.truth, &flow.attack_type) {
                (Verdict::Benign, _) => benign.record(flow.truth, flow.predicted),
                (Verdict::Malicious, attack) => attacks
                    .entry(attack.clone().unwrap_or_else(|| "unknown".into()))
                    .or_default()
                    .record(flow.truth, flow.predicted),
            }
        }
        let metrics = compute_metrics(&counts)?;
        let per_attack = attacks
            .into_iter()
            .map(|(name, own)| {
                let m = compute_metrics(&own.merge(&benign))?;
                Ok((
                    name,
                    AttackScore {
                        scored: own.total(),
                        counts: own,
                        accuracy: m.accuracy,
                        f1: m.f1,
                    },
                ))
            })
            .collect::<Result<_, EvalError>>()?;
        Ok(Self {
            counts,
            metrics,
            failures,
            failure_rate: failures as f64 / counts.total() as f64,
            benign_scored: benign.total(),
            per_attack,
        })
    }
}

/// Outcome for one scored flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    /// Row of the flow in the evaluated dataset.
    pub row: usize,
    pub truth: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_type: Option<String>,
    /// `None` when no clear answer came back within the retry cap.
    pub predicted: Option<Verdict>,
    pub attempts: u32,
    /// Characters in the detection prompt before any retries.
    pub prompt_chars: usize,
    pub transcript: Conversation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub strategy: String,
    pub n_examples: usize,
    pub report: EvalReport,
    pub example_rows: Vec<usize>,
    pub icl_block: IclBlock,
    pub flows: Vec<FlowResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub pool: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded per-class split of the labeled rows into an example pool and a
/// test set. Each class contributes the same fraction to the pool, keeping at
/// least one row of each class on either side when it has two or more.
/// Unlabeled rows are left out of both.
pub fn split_dataset(dataset: &[FlowRecord], example_fraction: f64, seed: u64) -> Result<DataSplit, EvalError> {
    if !(example_fraction > 0.0 && example_fraction < 1.0) {
        return Err(EvalError::BadFraction(example_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for malicious in [false, true] {
        let mut rows: Vec<usize> = dataset
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label.as_ref().is_some_and(|l| l.is_malicious() == malicious))
            .map(|(i, _)| i)
            .collect();
        rows.shuffle(&mut rng);
        let mut take = (rows.len() as f64 * example_fraction).round() as usize;
        if rows.len() >= 2 {
            take = take.clamp(1, rows.len() - 1);
        }
        let (p, t) = rows.split_at(take.min(rows.len()));
        pool.extend_from_slice(p);
        test.extend_from_slice(t);
    }
    // Mix classes so a scored-flow cap samples both.
    test.shuffle(&mut rng);
    pool.sort_unstable();
    Ok(DataSplit { pool, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub strategy: IclStrategy,
    pub n_examples: usize,
    pub seed: u64,
    pub workers: usize,
    pub example_fraction: f64,
    /// Score at most this many test flows.
    pub max_scored: Option<usize>,
    /// Restrict to benign flows plus this attack type.
    pub attack_type: Option<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            strategy: IclStrategy::Illustrative,
            n_examples: 10,
            seed: 42,
            workers: 1,
            example_fraction: DEFAULT_EXAMPLE_FRACTION,
            max_scored: None,
            attack_type: None,
        }
    }
}

/// Keeps benign flows and those of `attack_type`; all flows if `None`.
pub fn restrict_to_attack(dataset: &[FlowRecord], attack_type: Option<&str>) -> Vec<FlowRecord> {
    dataset
        .iter()
        .filter(|r| match (attack_type, &r.label) {
            (None, _) => true,
            (Some(want), Some(l)) => !l.is_malicious() || l.attack_type() == Some(want),
            (Some(_), None) => false,
        })
        .cloned()
        .collect()
}

fn check_labeled(dataset: &[FlowRecord]) -> Result<(), EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let unlabeled = dataset.iter().filter(|r| r.label.is_none()).count();
    if unlabeled > 0 {
        return Err(EvalError::Unlabeled(unlabeled));
    }
    Ok(())
}

/// Splits the dataset, samples in-context examples from the pool, builds the
/// strategy's block once, and scores every test flow.
pub fn evaluate(
    session: &Session<'_>,
    dataset: &[FlowRecord],
    settings: &EvalSettings,
    ctx: &PromptContext<'_>,
    cache: Option<&HeuristicCache>,
) -> Result<EvalRun, EvalError> {
    let dataset = restrict_to_attack(dataset, settings.attack_type.as_deref());
    check_labeled(&dataset)?;
    let split = split_dataset(&dataset, settings.example_fraction, settings.seed)?;
    evaluate_split(session, &dataset, &split, settings, ctx, cache)
}

/// Like [`evaluate`] with an explicit pool/test split.
pub fn evaluate_split(
    session: &Session<'_>,
    dataset: &[FlowRecord],
    split: &DataSplit,
    settings: &EvalSettings,
    ctx: &PromptContext<'_>,
    cache: Option<&HeuristicCache>,
) -> Result<EvalRun, EvalError> {
    if settings.workers == 0 {
        return Err(EvalError::NoWorkers);
    }
    let mut test: Vec<usize> = split.test.clone();
    if let Some(limit) = settings.max_scored {
        test.truncate(limit);
    }
    if test.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    if let Some(&row) = test.iter().find(|r| dataset[**r].label.is_none()) {
        return Err(EvalError::Unlabeled(row));
    }

    let pool: Vec<FlowRecord> = split.pool.iter().map(|&i| dataset[i].clone()).collect();
    let example_rows: Vec<usize> = sample_example_indices(&pool, settings.n_examples, settings.seed)?
        .into_iter()
        .map(|i| split.pool[i])
        .collect();
    let scored: HashSet<usize> = test.iter().copied().collect();
    if let Some(&row) = example_rows.iter().find(|r| scored.contains(r)) {
        return Err(EvalError::PoolOverlap(row));
    }
    let examples: Vec<IclExample> = example_rows
        .iter()
        .map(|&i| IclExample::new(dataset[i].clone(), ctx))
        .collect::<Result<_, _>>()?;
    let block = build_icl_block(&settings.strategy, &examples, ctx, Some(session), cache)?;

    let flows = score_flows(session, dataset, &test, &block, ctx, settings.workers)?;
    let report = EvalReport::from_results(&flows)?;
    Ok(EvalRun {
        strategy: settings.strategy.name().to_string(),
        n_examples: settings.n_examples,
        report,
        example_rows,
        icl_block: block,
        flows,
    })
}

enum Fatal {
    Prompt(PromptError),
    Backend(String),
}

fn score_one(
    session: &Session<'_>,
    row: usize,
    record: &FlowRecord,
    block: &IclBlock,
    ctx: &PromptContext<'_>,
) -> Result<FlowResult, Fatal> {
    let label = record.label.as_ref().expect("test flows are labeled");
    let bundle = assemble_prompt(block, record, ctx).map_err(Fatal::Prompt)?;
    let prompt_chars = bundle.conversation.char_len();
    let (predicted, attempts, transcript) = match detect(session, &bundle) {
        Ok(outcome) => (Some(outcome.verdict), outcome.attempts, outcome.transcript),
        Err(DetectError::AmbiguousAfterRetries { attempts, transcript }) => (None, attempts, *transcript),
        Err(e) => return Err(Fatal::Backend(e.to_string())),
    };
    Ok(FlowResult {
        row,
        truth: Verdict::of(label),
        attack_type: label.attack_type().map(str::to_string),
        predicted,
        attempts,
        prompt_chars,
        transcript,
    })
}

/// Scores `rows` with up to `workers` threads. Results come back in row-list
/// order regardless of completion order.
fn score_flows(
    session: &Session<'_>,
    dataset: &[FlowRecord],
    rows: &[usize],
    block: &IclBlock,
    ctx: &PromptContext<'_>,
    workers: usize,
) -> Result<Vec<FlowResult>, EvalError> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<FlowResult>>> = Mutex::new(vec![None; rows.len()]);
    let fatal: Mutex<Option<Fatal>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers.min(rows.len()) {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&row) = rows.get(slot) else { break };
                match score_one(session, row, &dataset[row], block, ctx) {
                    Ok(result) => slots.lock().unwrap_or_else(|e| e.into_inner())[slot] = Some(result),
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        fatal.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    let flows: Vec<FlowResult> = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .flatten()
        .collect();
    match fatal.into_inner().unwrap_or_else(|e| e.into_inner()) {
        None => Ok(flows),
        Some(Fatal::Prompt(e)) => Err(EvalError::Prompt(e)),
        Some(Fatal::Backend(reason)) => {
            let mut counts = ConfusionCounts::default();
            for f in &flows {
                counts.record(f.truth, f.predicted);
            }
            Err(EvalError::Aborted {
                reason,
                partial: Box::new(PartialRun { counts, flows }),
            })
        }
    }
}
