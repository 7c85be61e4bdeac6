//! Flow descriptions and prompt assembly.
//!
//! A detection prompt has four sections in fixed order: instructions, an
//! in-context learning block, output formatting, and the target flow's
//! description. Instructions become the system message; the other three are
//! joined into a single user message.

mod describe;
mod icl;
mod sampling;

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{FeatureCatalog, FlowRecord, Label};
use crate::detection::Verdict;
use crate::llm_client::{Conversation, ConversationError, LlmError, Session};
use crate::selection::SelectedFeatureSet;

pub use describe::{describe_flow, format_number};
pub use icl::{
    correction, expected_answer, heuristic_block, illustrative_block, interactive_block, HeuristicCache,
    InteractiveTranscript, InteractiveTurn, ENCOURAGEMENT, ILLUSTRATIVE_PREAMBLE, INTERACTIVE_PREAMBLE,
};
pub use sampling::{sample_example_indices, sample_examples};

/// The directive constraining the model to a yes/no answer.
pub const OUTPUT_DIRECTIVE: &str =
    "If you think the traffic is malicious, answer yes. Otherwise if you think it is benign, answer no.";

pub const DEFAULT_HEURISTIC_QUESTIONS: [&str; 2] = [
    "What are the commonalities of all the malicious examples?",
    "What is the rational range of flow duration?",
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("flow has no value for kept feature `{0}`")]
    MissingFeatureValue(String),
    #[error("feature index {0} is not in the catalog")]
    UnknownFeatureIndex(usize),
    #[error("at least one in-context example is required")]
    EmptyExamples,
    #[error("heuristic strategy needs at least one question")]
    EmptyQuestions,
    #[error("in-context examples must be labeled")]
    UnlabeledExample,
    #[error("need {wanted} examples but pool has {benign} benign and {malicious} malicious")]
    InsufficientExamples {
        wanted: usize,
        benign: usize,
        malicious: usize,
    },
    #[error("strategy `{0}` needs a backend")]
    BackendRequired(&'static str),
    #[error("unknown strategy `{0}` (expected illustrative, heuristic, or interactive)")]
    UnknownStrategy(String),
    #[error("detection failed inside the interactive block: {0}")]
    Detection(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Task framing placed in the system message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionsConfig {
    pub intrusion_definition: String,
    pub role: String,
    pub task: String,
}

impl Default for InstructionsConfig {
    fn default() -> Self {
        Self {
            intrusion_definition: "A network intrusion is any unauthorized activity on a network that \
                threatens its security, such as a distributed denial of service (DDoS) attack in which \
                malicious users flood the network with traffic to exhaust its resources."
                .into(),
            role: "You are a 5G network safety monitor.".into(),
            task: "Your task is to determine whether the traffic is from a malicious user based on the \
                given information about the traffic flow."
                .into(),
        }
    }
}

pub fn instructions_section(config: &InstructionsConfig) -> String {
    format!("{} {} {}", config.intrusion_definition, config.role, config.task)
}

pub fn output_formatting_section() -> &'static str {
    OUTPUT_DIRECTIVE
}

/// Non-empty ordered list of heuristic questions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct HeuristicQuestions(Vec<String>);

impl HeuristicQuestions {
    pub fn new<I, S>(questions: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let questions: Vec<String> = questions
            .into_iter()
            .map(Into::into)
            .filter(|q| !q.trim().is_empty())
            .collect();
        if questions.is_empty() {
            return Err(PromptError::EmptyQuestions);
        }
        Ok(Self(questions))
    }

    /// One question per non-blank line.
    pub fn from_lines<R: BufRead>(source: R) -> Result<Self, PromptError> {
        let lines = source.lines().collect::<Result<Vec<_>, _>>()?;
        Self::new(lines.into_iter().map(|l| l.trim().to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for HeuristicQuestions {
    fn default() -> Self {
        Self(DEFAULT_HEURISTIC_QUESTIONS.iter().map(|q| q.to_string()).collect())
    }
}

impl TryFrom<Vec<String>> for HeuristicQuestions {
    type Error = PromptError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<HeuristicQuestions> for Vec<String> {
    fn from(q: HeuristicQuestions) -> Self {
        q.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IclStrategy {
    Illustrative,
    Heuristic(HeuristicQuestions),
    Interactive,
}

impl IclStrategy {
    pub fn heuristic<I, S>(questions: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Ok(IclStrategy::Heuristic(HeuristicQuestions::new(questions)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            IclStrategy::Illustrative => "illustrative",
            IclStrategy::Heuristic(_) => "heuristic",
            IclStrategy::Interactive => "interactive",
        }
    }

    /// The three strategies, heuristic with the default questions.
    pub fn all() -> Vec<IclStrategy> {
        vec![
            IclStrategy::Illustrative,
            IclStrategy::Heuristic(HeuristicQuestions::default()),
            IclStrategy::Interactive,
        ]
    }
}

impl fmt::Display for IclStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a strategy name; heuristic uses the default questions.
impl FromStr for IclStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "illustrative" => Ok(IclStrategy::Illustrative),
            "heuristic" => Ok(IclStrategy::Heuristic(HeuristicQuestions::default())),
            "interactive" => Ok(IclStrategy::Interactive),
            other => Err(PromptError::UnknownStrategy(other.to_string())),
        }
    }
}

/// What every flow description is rendered against.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub catalog: &'a FeatureCatalog,
    pub features: &'a SelectedFeatureSet,
    pub instructions: &'a InstructionsConfig,
}

impl PromptContext<'_> {
    pub fn describe(&self, record: &FlowRecord) -> Result<String, PromptError> {
        describe_flow(record, self.features, self.catalog)
    }
}

/// A labeled flow rendered for use as an in-context example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    record: FlowRecord,
    label: Label,
    description: String,
}

impl IclExample {
    pub fn new(record: FlowRecord, ctx: &PromptContext<'_>) -> Result<Self, PromptError> {
        let label = record.label.clone().ok_or(PromptError::UnlabeledExample)?;
        let description = ctx.describe(&record)?;
        Ok(Self {
            record,
            label,
            description,
        })
    }

    pub fn record(&self) -> &FlowRecord {
        &self.record
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn verdict(&self) -> Verdict {
        Verdict::of(&self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Instructions,
    IclBlock,
    OutputFormatting,
    InputInfo,
}

impl SectionKind {
    pub const ORDER: [SectionKind; 4] = [
        SectionKind::Instructions,
        SectionKind::IclBlock,
        SectionKind::OutputFormatting,
        SectionKind::InputInfo,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub sections: Vec<PromptSection>,
    pub conversation: Conversation,
}

impl PromptBundle {
    pub fn section(&self, kind: SectionKind) -> Option<&str> {
        self.sections.iter().find(|s| s.kind == kind).map(|s| s.text.as_str())
    }

    pub fn kinds(&self) -> Vec<SectionKind> {
        self.sections.iter().map(|s| s.kind).collect()
    }
}

/// A strategy's in-context block, built once and reused for every flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclBlock {
    pub strategy: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<InteractiveTranscript>,
}

pub fn build_icl_block(
    strategy: &IclStrategy,
    examples: &[IclExample],
    ctx: &PromptContext<'_>,
    session: Option<&Session<'_>>,
    cache: Option<&HeuristicCache>,
) -> Result<IclBlock, PromptError> {
    let (text, transcript) = match strategy {
        IclStrategy::Illustrative => (illustrative_block(examples)?, None),
        IclStrategy::Heuristic(questions) => {
            let session = session.ok_or(PromptError::BackendRequired("heuristic"))?;
            (heuristic_block(session, examples, questions, cache)?, None)
        }
        IclStrategy::Interactive => {
            let session = session.ok_or(PromptError::BackendRequired("interactive"))?;
            let (text, transcript) =
                interactive_block(session, examples, &instructions_section(ctx.instructions))?;
            (text, Some(transcript))
        }
    };
    Ok(IclBlock {
        strategy: strategy.name().to_string(),
        text,
        transcript,
    })
}

/// Combines a prebuilt block with the target flow into the four-section prompt.
pub fn assemble_prompt(
    block: &IclBlock,
    flow: &FlowRecord,
    ctx: &PromptContext<'_>,
) -> Result<PromptBundle, PromptError> {
    let sections = vec![
        PromptSection {
            kind: SectionKind::Instructions,
            text: instructions_section(ctx.instructions),
        },
        PromptSection {
            kind: SectionKind::IclBlock,
            text: block.text.clone(),
        },
        PromptSection {
            kind: SectionKind::OutputFormatting,
            text: output_formatting_section().to_string(),
        },
        PromptSection {
            kind: SectionKind::InputInfo,
            text: format!("Traffic to classify:\n{}", ctx.describe(flow)?),
        },
    ];
    let mut conversation = Conversation::with_system(sections[0].text.as_str())?;
    let user = sections[1..]
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    conversation.push_user(user)?;
    Ok(PromptBundle { sections, conversation })
}

pub fn build_prompt(
    strategy: &IclStrategy,
    examples: &[IclExample],
    flow: &FlowRecord,
    ctx: &PromptContext<'_>,
    session: Option<&Session<'_>>,
) -> Result<PromptBundle, PromptError> {
    let block = build_icl_block(strategy, examples, ctx, session, None)?;
    assemble_prompt(&block, flow, ctx)
}
