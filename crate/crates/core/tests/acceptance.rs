//! Acceptance gate. Each criterion prints one PASS, FAIL or SKIP line; the
//! process exits non-zero if any criterion fails.
//!
//! The live smoke criterion runs only with `LLM_NIDS_LIVE=1` and an API key
//! in the environment (see README).

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use llm_nids::catalog::{load_catalog, load_flows, FeatureCatalog, FlowRecord, Label, Scalar};
use llm_nids::detection::{detect_conversation, extract_decision, DetectError, Decision, Verdict};
use llm_nids::eval::{
    compute_metrics, evaluate, run_sweep, ConfusionCounts, EvalError, EvalSettings, SweepConfig,
};
use llm_nids::llm_client::{
    ChatBackend, Conversation, HttpBackend, HttpConfig, Role, RuleBackend, ScriptedStub, Session,
};
use llm_nids::prompting::{
    build_prompt, output_formatting_section, IclExample, IclStrategy, InstructionsConfig, PromptBundle,
    PromptContext, SectionKind, OUTPUT_DIRECTIVE,
};
use llm_nids::selection::{select_features, SelectedFeatureSet, SelectionConfig, SelectionError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

enum Status {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Status;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Status::Fail(format!($($msg)+));
        }
    }};
}

fn main() -> ExitCode {
    let checks: &[(&str, Check)] = &[
        ("live_smoke", live_smoke),
        ("oracle_equivalence", oracle_equivalence),
        ("metric_oracle_grid", metric_oracle_grid),
        ("prompt_structure_goldens", prompt_structure_goldens),
        ("extraction_suite", extraction_suite),
        ("retry_loop_contract", retry_loop_contract),
        ("selection_pipeline", selection_pipeline),
        ("sweep_shape", sweep_shape),
        ("end_to_end_offline", end_to_end_offline),
    ];
    // A `cargo test <filter>` run only executes matching criteria.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let status = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Status::Fail(format!("panicked: {msg}"))
        });
        match status {
            Status::Pass(detail) => println!("PASS  {name}  {detail}"),
            Status::Skip(detail) => println!("SKIP  {name}  {detail}"),
            Status::Fail(detail) => {
                failed += 1;
                println!("FAIL  {name}  {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

// Shared fixtures.

const THRESHOLD: f64 = 1000.0;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small_catalog() -> FeatureCatalog {
    load_catalog(
        &b"Flow Duration,microseconds,flow duration\nTotal Fwd Packets,packets,number of forward packets\n"[..],
    )
    .unwrap()
}

fn record(duration: f64, packets: f64, label: Option<Label>) -> FlowRecord {
    let mut values = BTreeMap::new();
    values.insert("Flow Duration".to_string(), Scalar::Number(duration));
    values.insert("Total Fwd Packets".to_string(), Scalar::Number(packets));
    FlowRecord::new(values, label)
}

/// Flows labeled by the threshold rule: short flows are attacks.
fn rule_dataset(n: usize, seed: u64, invert: bool) -> Vec<FlowRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let duration = if i % 2 == 0 {
                rng.random_range(THRESHOLD + 1.0..1e6_f64).round()
            } else {
                rng.random_range(1.0..THRESHOLD).round()
            };
            let short = duration < THRESHOLD;
            let label = if short != invert {
                Label::malicious(if i % 3 == 0 { "DrDoS_DNS" } else { "Syn" })
            } else {
                Label::benign()
            };
            record(duration, rng.random_range(1.0f64..500.0).round(), Some(label))
        })
        .collect()
}

/// Last "flow duration is <x>" in the final user message.
fn last_duration(conversation: &Conversation) -> Option<f64> {
    const KEY: &str = "flow duration is ";
    let user = conversation.last_with_role(Role::User)?.content();
    let at = user.rfind(KEY)? + KEY.len();
    user[at..].split_whitespace().next()?.parse().ok()
}

fn threshold_rule(conversation: &Conversation, threshold: f64) -> String {
    match last_duration(conversation) {
        Some(d) if d < threshold => "Yes".into(),
        _ => "No".into(),
    }
}

fn threshold_backend() -> RuleBackend {
    RuleBackend::new("threshold", |c| Ok(threshold_rule(c, THRESHOLD)))
}

struct Ctx {
    catalog: FeatureCatalog,
    features: SelectedFeatureSet,
    instructions: InstructionsConfig,
}

impl Ctx {
    fn small() -> Self {
        Self {
            catalog: small_catalog(),
            features: SelectedFeatureSet::from_indices([0, 1]),
            instructions: InstructionsConfig::default(),
        }
    }

    fn get(&self) -> PromptContext<'_> {
        PromptContext {
            catalog: &self.catalog,
            features: &self.features,
            instructions: &self.instructions,
        }
    }
}

// Criteria.

fn live_smoke() -> Status {
    if std::env::var("LLM_NIDS_LIVE").as_deref() != Ok("1") {
        return Status::Skip("set LLM_NIDS_LIVE=1 and an API key to run against a live model".into());
    }
    let mut config = HttpConfig::default();
    if let Ok(v) = std::env::var("LLM_NIDS_ENDPOINT") {
        config.endpoint = v;
    }
    if let Ok(v) = std::env::var("LLM_NIDS_MODEL") {
        config.model = v;
    }
    let backend = match HttpBackend::from_env(config) {
        Ok(b) => b,
        Err(e) => return Status::Fail(e.to_string()),
    };
    let session = Session::new(&backend);
    let catalog = load_catalog(std::fs::File::open(repo_file("data/catalog.csv")).unwrap()).unwrap();
    let dataset_path = std::env::var("LLM_NIDS_LIVE_DATASET")
        .map(PathBuf::from)
        .unwrap_or_else(|_| repo_file("data/sample_flows.csv"));
    let dataset = load_flows(std::fs::File::open(&dataset_path).unwrap(), &catalog).unwrap();
    let attack = std::env::var("LLM_NIDS_LIVE_ATTACK").unwrap_or_else(|_| "Syn".into());
    let features = match select_features(&session, &catalog, &SelectionConfig::default()) {
        Ok(f) => f,
        Err(e) => return Status::Fail(format!("selection: {e}")),
    };
    let instructions = InstructionsConfig::default();
    let ctx = PromptContext {
        catalog: &catalog,
        features: &features,
        instructions: &instructions,
    };
    let settings = EvalSettings {
        n_examples: 10,
        max_scored: Some(20),
        attack_type: Some(attack.clone()),
        ..EvalSettings::default()
    };
    match evaluate(&session, &dataset, &settings, &ctx, None) {
        Ok(run) if run.flows.len() >= 20 => Status::Pass(format!(
            "{attack}: {} flows, accuracy {:.4}, f1 {:.4}, failure rate {:.4}",
            run.flows.len(),
            run.report.metrics.accuracy,
            run.report.metrics.f1,
            run.report.failure_rate
        )),
        Ok(run) => Status::Fail(format!("only {} flows scored", run.flows.len())),
        Err(e) => Status::Fail(e.to_string()),
    }
}

fn oracle_equivalence() -> Status {
    let ctx = Ctx::small();
    let backend = threshold_backend();
    let session = Session::new(&backend);
    // 1000 labeled flows leave 200 for scoring after the 80/20 split.
    let settings = EvalSettings::default();
    let started = Instant::now();
    let run = evaluate(&session, &rule_dataset(1000, 1, false), &settings, &ctx.get(), None).unwrap();
    let elapsed = started.elapsed();
    ensure!(run.flows.len() == 200, "scored {} flows, wanted 200", run.flows.len());
    ensure!(
        run.report.metrics.accuracy == 1.0 && run.report.metrics.f1 == 1.0,
        "accuracy {} f1 {}",
        run.report.metrics.accuracy,
        run.report.metrics.f1
    );
    ensure!(elapsed < Duration::from_secs(5), "200 flows took {elapsed:?}");

    let inverted = evaluate(&session, &rule_dataset(1000, 1, true), &settings, &ctx.get(), None).unwrap();
    ensure!(inverted.report.metrics.accuracy == 0.0, "inverted accuracy {}", inverted.report.metrics.accuracy);
    Status::Pass(format!("accuracy 1.0 / f1 1.0, inverted 0.0, 200 flows in {elapsed:.2?}"))
}

/// Hand-derived formulas, written independently of compute_metrics:
/// f1 = 2tp / (2tp + fp + fn).
fn metric_oracle(tp: u64, fp: u64, tn: u64, fn_: u64) -> [f64; 4] {
    let q = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    [
        q(tp + tn, tp + fp + tn + fn_),
        q(tp, tp + fp),
        q(tp, tp + fn_),
        q(2 * tp, 2 * tp + fp + fn_),
    ]
}

fn metric_oracle_grid() -> Status {
    let mut cells = 0;
    for total in 1..=12u64 {
        for tp in 0..=total {
            for fp in 0..=total - tp {
                for tn in 0..=total - tp - fp {
                    let fn_ = total - tp - fp - tn;
                    let m = compute_metrics(&ConfusionCounts::new(tp, fp, tn, fn_)).unwrap();
                    let got = [m.accuracy, m.precision, m.recall, m.f1];
                    let want = metric_oracle(tp, fp, tn, fn_);
                    for (g, w) in got.iter().zip(want) {
                        ensure!((g - w).abs() <= 1e-12, "({tp},{fp},{tn},{fn_}): got {got:?} want {want:?}");
                    }
                    cells += 1;
                }
            }
        }
    }
    ensure!(
        matches!(compute_metrics(&ConfusionCounts::default()), Err(EvalError::EmptyEvaluation)),
        "empty counts accepted"
    );
    let zero = compute_metrics(&ConfusionCounts::new(0, 0, 5, 0)).unwrap();
    ensure!(zero.f1 == 0.0 && zero.precision == 0.0 && zero.recall == 0.0, "0/0 convention broken");
    Status::Pass(format!("{cells} confusion tables, tolerance 1e-12"))
}

fn golden_examples(ctx: &PromptContext<'_>) -> Vec<IclExample> {
    vec![
        IclExample::new(record(84000.0, 6.0, Some(Label::benign())), ctx).unwrap(),
        IclExample::new(record(95.0, 220.0, Some(Label::malicious("DrDoS_DNS"))), ctx).unwrap(),
        IclExample::new(record(1250000.0, 14.0, Some(Label::benign())), ctx).unwrap(),
        IclExample::new(record(12.5, 410.0, Some(Label::malicious("Syn"))), ctx).unwrap(),
    ]
}

fn check_bundle(bundle: &PromptBundle, labels: &[&str]) -> Result<(), String> {
    if bundle.kinds() != SectionKind::ORDER {
        return Err(format!("sections {:?}", bundle.kinds()));
    }
    let directive = bundle.section(SectionKind::OutputFormatting).unwrap_or_default();
    if !directive.contains(OUTPUT_DIRECTIVE) {
        return Err("directive missing from output formatting".into());
    }
    for message in bundle.conversation.messages() {
        for label in labels {
            if message.content().contains(label) {
                return Err(format!("label text `{label}` leaked into a {} message", message.role()));
            }
        }
    }
    Ok(())
}

fn prompt_structure_goldens() -> Status {
    let ctx = Ctx::small();
    let c = ctx.get();
    let examples = golden_examples(&c);
    let targets = [
        record(40.0, 300.0, Some(Label::malicious("UDP-lag"))),
        record(300000.0, 8.0, Some(Label::benign())),
    ];
    let labels = ["UDP-lag", "BENIGN", "DrDoS_DNS", "Syn"];
    let backend = threshold_backend();
    let session = Session::new(&backend);
    let mut checked = 0;
    for strategy in IclStrategy::all() {
        for target in &targets {
            let s = (!matches!(strategy, IclStrategy::Illustrative)).then_some(&session);
            let bundle = build_prompt(&strategy, &examples, target, &c, s).unwrap();
            if let Err(e) = check_bundle(&bundle, &labels) {
                return Status::Fail(format!("{strategy}: {e}"));
            }
            checked += 1;
        }
    }

    let bundle = build_prompt(&IclStrategy::Illustrative, &examples, &targets[0], &c, None).unwrap();
    let rendered = serde_json::to_string_pretty(&bundle).unwrap() + "\n";
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/illustrative.json");
    if std::env::var("UPDATE_GOLDENS").as_deref() == Ok("1") {
        std::fs::write(&golden, &rendered).unwrap();
    }
    let expected = match std::fs::read_to_string(&golden) {
        Ok(t) => t,
        Err(e) => return Status::Fail(format!("{}: {e}", golden.display())),
    };
    ensure!(rendered == expected, "illustrative prompt differs from {}", golden.display());
    Status::Pass(format!("{checked} bundles checked, illustrative golden byte-exact"))
}

const WORDS: &[&str] = &[
    "yes", "no", "Yes", "No", "YES", "NO", "yEs", "nO", "yesterday", "nope", "know", "not", "eyes", "snow", "none",
    "yes-man", "maybe", "traffic", "malicious", "benign", "answer", "is", "the", "é", "über", "是", "42",
];
const SEPARATORS: &[&str] = &["", " ", " ", ", ", ".", "\n", "!", "-", "_", "3", "ü", "\t", "'"];

fn generated_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..10);
    (0..len)
        .map(|_| {
            let w = WORDS[rng.random_range(0..WORDS.len())];
            let s = SEPARATORS[rng.random_range(0..SEPARATORS.len())];
            format!("{w}{s}")
        })
        .collect()
}

/// A keyword counts when no letter touches it on either side.
fn extraction_oracle(text: &str) -> Decision {
    static YES: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?:^|\P{Alphabetic})[yY][eE][sS](?:\P{Alphabetic}|$)").unwrap());
    static NO: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?:^|\P{Alphabetic})[nN][oO](?:\P{Alphabetic}|$)").unwrap());
    match (YES.is_match(text), NO.is_match(text)) {
        (true, false) => Decision::Clear(Verdict::Malicious),
        (false, true) => Decision::Clear(Verdict::Benign),
        _ => Decision::Ambiguous,
    }
}

fn extraction_suite() -> Status {
    let fixed = [
        ("Yes, this traffic is malicious.", Decision::Clear(Verdict::Malicious)),
        ("No.", Decision::Clear(Verdict::Benign)),
        ("Maybe yes, maybe no.", Decision::Ambiguous),
        ("I cannot determine this.", Decision::Ambiguous),
        ("yesterday the traffic looked odd", Decision::Ambiguous),
    ];
    for (text, want) in fixed {
        ensure!(extract_decision(text) == want, "{text:?} gave {:?}", extract_decision(text));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 5000;
    for _ in 0..n {
        let text = generated_text(&mut rng);
        let first = extract_decision(&text);
        ensure!(first == extract_decision(&text), "impure on {text:?}");
        ensure!(first == extraction_oracle(&text), "{text:?}: got {first:?}, oracle {:?}", extraction_oracle(&text));
        // Gluing a letter to every keyword hides it.
        let glued = format!("x{}", text.replace("yes", "yesx").replace("no", "nox"));
        let plain = glued.to_lowercase();
        if !plain.split(|c: char| !c.is_alphabetic()).any(|t| t == "yes" || t == "no") {
            ensure!(extract_decision(&glued) == Decision::Ambiguous, "glued keyword matched in {glued:?}");
        }
    }
    // Totality over arbitrary characters.
    for _ in 0..2000 {
        let len = rng.random_range(0..40);
        let text: String = (0..len).map(|_| rng.random::<char>()).collect();
        let _ = extract_decision(&text);
    }
    Status::Pass(format!("{} fixed cases, {n} generated texts, 2000 random strings", fixed.len()))
}

fn retry_prompt() -> Conversation {
    let mut c = Conversation::with_system("You are a 5G network safety monitor.").unwrap();
    c.push_user("The flow duration is 12 microseconds.").unwrap();
    c
}

fn retry_loop_contract() -> Status {
    let mut cases = 0;
    for cap in 1..=5u32 {
        for k in 0..=cap {
            let mut script: Vec<String> = (0..k).map(|i| format!("I am unsure ({i}).")).collect();
            script.push("Yes.".into());
            let stub = ScriptedStub::new(script);
            let session = Session::new(&stub).with_retry_cap(cap);
            let result = detect_conversation(&session, retry_prompt());
            if k < cap {
                match result {
                    Ok(o) => {
                        ensure!(o.verdict == Verdict::Malicious, "cap {cap} k {k}: verdict {:?}", o.verdict);
                        ensure!(o.attempts == k + 1, "cap {cap} k {k}: attempts {}", o.attempts);
                        let directives = o
                            .transcript
                            .messages()
                            .iter()
                            .filter(|m| m.role() == Role::User && m.content() == output_formatting_section())
                            .count();
                        ensure!(directives == k as usize, "cap {cap} k {k}: {directives} directives");
                    }
                    Err(e) => return Status::Fail(format!("cap {cap} k {k}: {e}")),
                }
            } else {
                match result {
                    Err(DetectError::AmbiguousAfterRetries { attempts, .. }) => {
                        ensure!(attempts == cap, "cap {cap}: attempts {attempts}")
                    }
                    other => return Status::Fail(format!("cap {cap} k {k}: expected exhaustion, got {other:?}")),
                }
            }
            ensure!(
                stub.calls() == (k + 1).min(cap) as usize,
                "cap {cap} k {k}: {} calls",
                stub.calls()
            );
            cases += 1;
        }
    }
    Status::Pass(format!("{cases} (cap, k) pairs"))
}

fn selection_pipeline() -> Status {
    let catalog = FeatureCatalog::from_rows((0..84).map(|i| (format!("Feature {i}"), None, format!("feature {i}"))))
        .unwrap();
    let config = SelectionConfig::default();

    let ranking: String = (0..10)
        .map(|i| {
            let level = ["very important", "kind of important", "not very important"][i % 3];
            format!("{i}: {level}\n")
        })
        .collect();
    let stub = ScriptedStub::new(["0,1,2,3,4,5,6,7,8,9".to_string(), ranking]);
    let set = match select_features(&Session::new(&stub), &catalog, &config) {
        Ok(s) => s,
        Err(e) => return Status::Fail(format!("happy path: {e}")),
    };
    ensure!(stub.calls() == 2, "happy path made {} calls", stub.calls());
    ensure!(set.kept() == [0, 1, 3, 4, 6, 7, 9], "kept {:?}", set.kept());
    ensure!(set.provenance().ranked.len() == 10, "provenance lost entries");

    let all_not: String = (0..10).map(|i| format!("{i}: not very important\n")).collect();
    let stub = ScriptedStub::new(["0,1,2,3,4,5,6,7,8,9".to_string(), all_not]);
    ensure!(
        matches!(select_features(&Session::new(&stub), &catalog, &config), Err(SelectionError::AllFiltered)),
        "all-filtered path not reported"
    );

    let stub = ScriptedStub::new(["no idea", "still no idea"]);
    let strict = SelectionConfig {
        format_retries: 1,
        ..config
    };
    ensure!(
        matches!(select_features(&Session::new(&stub), &catalog, &strict), Err(SelectionError::NoIndicesFound)),
        "retry exhaustion not reported"
    );
    ensure!(stub.calls() == 2, "retry exhaustion made {} calls", stub.calls());
    Status::Pass("2-call happy path, AllFiltered, retry exhaustion".into())
}

struct SweepRun {
    csv: String,
    json: String,
    outcome: llm_nids::eval::SweepOutcome,
}

fn sweep_once(backend: &dyn ChatBackend, dataset: &[FlowRecord], ctx: &PromptContext<'_>) -> SweepRun {
    let mut config = SweepConfig::default();
    config.base.max_scored = Some(20);
    config.base.workers = 4;
    let outcome = run_sweep(&Session::new(backend), dataset, &config, ctx).unwrap();
    let table = outcome.table();
    SweepRun {
        csv: table.to_csv(),
        json: table.to_json(),
        outcome,
    }
}

fn sweep_shape() -> Status {
    let ctx = Ctx::small();
    let dataset = rule_dataset(120, 3, false);
    let backend = threshold_backend();
    let a = sweep_once(&backend, &dataset, &ctx.get());
    let b = sweep_once(&backend, &dataset, &ctx.get());
    let rows = a.outcome.table().rows;
    ensure!(rows.len() == 15, "{} rows", rows.len());
    ensure!(rows.iter().all(|r| r.ok()), "failed cells: {:?}", rows.iter().filter(|r| !r.ok()).collect::<Vec<_>>());
    ensure!(a.csv == b.csv && a.json == b.json, "two runs differ");
    let artifacts = |o: &llm_nids::eval::SweepOutcome| {
        let dir = tempfile::tempdir().unwrap();
        o.write_artifacts(dir.path()).unwrap();
        ["sweep.csv", "sweep.json", "reports.json", "icl_blocks.jsonl", "transcripts.jsonl"]
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    ensure!(artifacts(&a.outcome) == artifacts(&b.outcome), "artifact files differ between runs");

    let mut compared = 0;
    for n in llm_nids::eval::DEFAULT_EXAMPLE_COUNTS {
        let run = |strategy: &str| {
            a.outcome
                .runs()
                .find(|r| r.strategy == strategy && r.n_examples == n)
                .unwrap()
        };
        let (illustrative, heuristic) = (run("illustrative"), run("heuristic"));
        for (i, h) in illustrative.flows.iter().zip(&heuristic.flows) {
            ensure!(i.row == h.row, "cells scored different flows");
            ensure!(
                h.prompt_chars >= i.prompt_chars,
                "n={n} row {}: heuristic {} < illustrative {}",
                i.row,
                h.prompt_chars,
                i.prompt_chars
            );
            compared += 1;
        }
    }
    Status::Pass(format!("15 rows, byte-identical reruns, {compared} heuristic ≥ illustrative prompt pairs"))
}

/// Answers the selection dialogue, then classifies by the threshold rule.
fn pipeline_backend() -> RuleBackend {
    RuleBackend::new("pipeline", |c| {
        let last = c.last_with_role(Role::User).map(|m| m.content()).unwrap_or_default();
        if last.contains("Select the indexing numbers") {
            Ok("7, 8, 9, 21, 54, 5, 10, 13, 57, 30".into())
        } else if last.contains("Rank the importance") {
            Ok("7: very important\n8: kind of important\n9: not very important\n21: very important\n\
                54: very important\n5: kind of important\n10: not very important\n13: kind of important\n\
                57: very important\n30: not very important"
                .into())
        } else {
            // The bundled sample separates the classes between 2000 and 50000.
            Ok(threshold_rule(c, 10_000.0))
        }
    })
}

fn end_to_end_offline() -> Status {
    let started = Instant::now();
    let catalog = load_catalog(std::fs::File::open(repo_file("data/catalog.csv")).unwrap()).unwrap();
    ensure!(catalog.len() == 84, "catalog has {} entries", catalog.len());
    let dataset = load_flows(std::fs::File::open(repo_file("data/sample_flows.csv")).unwrap(), &catalog).unwrap();
    let backend = pipeline_backend();
    let session = Session::new(&backend);
    let features = match select_features(&session, &catalog, &SelectionConfig::default()) {
        Ok(f) => f,
        Err(e) => return Status::Fail(format!("selection: {e}")),
    };
    ensure!(features.kept() == [7, 8, 21, 54, 5, 13, 57], "kept {:?}", features.kept());
    let instructions = InstructionsConfig::default();
    let ctx = PromptContext {
        catalog: &catalog,
        features: &features,
        instructions: &instructions,
    };
    let mut config = SweepConfig::default();
    config.base.max_scored = Some(20);
    let outcome = run_sweep(&session, &dataset, &config, &ctx).unwrap();
    let dir = tempfile::tempdir().unwrap();
    outcome.write_artifacts(dir.path()).unwrap();
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    ensure!(table.lines().count() == 16, "report has {} lines", table.lines().count());
    let perfect = outcome.runs().filter(|r| r.report.metrics.accuracy == 1.0).count();
    ensure!(perfect == 15, "{perfect} of 15 cells perfect under the threshold rule");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Status::Pass(format!("{} backend calls, {elapsed:.2?}", backend.calls()))
}
