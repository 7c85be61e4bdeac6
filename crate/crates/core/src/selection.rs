//! Model-driven feature selection.
//!
//! The model first picks the most relevant features from the indexed catalog
//! listing, then rates each pick on three importance levels in the same
//! conversation. Features rated "not very important" are dropped.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{render_catalog_listing, FeatureCatalog};
use crate::llm_client::{Conversation, ConversationError, LlmError, Session};

pub const DEFAULT_FEATURE_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("requested {requested} features but the catalog has {available}")]
    CountTooLarge { requested: usize, available: usize },
    #[error("feature count must be positive")]
    ZeroCount,
    #[error("no feature indices found in reply")]
    NoIndicesFound,
    #[error("feature index {index} out of range (catalog has {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("reply named {found} distinct indices, {wanted} requested")]
    TooFewIndices { found: usize, wanted: usize },
    #[error("no importance level selected")]
    EmptySelection,
    #[error("unrecognized importance level for feature {index}: `{line}`")]
    UnrecognizedLevel { index: usize, line: String },
    #[error("every selected feature was rated not very important")]
    AllFiltered,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
}

impl SelectionError {
    /// Errors caused by an unusable reply, worth re-asking for.
    fn is_reply_format(&self) -> bool {
        matches!(
            self,
            SelectionError::NoIndicesFound
                | SelectionError::IndexOutOfRange { .. }
                | SelectionError::TooFewIndices { .. }
                | SelectionError::UnrecognizedLevel { .. }
        )
    }
}

/// Declared from least to most important so the derived order ranks them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceLevel {
    NotVeryImportant,
    KindOfImportant,
    VeryImportant,
}

impl ImportanceLevel {
    pub const ALL: [ImportanceLevel; 3] = [
        ImportanceLevel::VeryImportant,
        ImportanceLevel::KindOfImportant,
        ImportanceLevel::NotVeryImportant,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            ImportanceLevel::VeryImportant => "very important",
            ImportanceLevel::KindOfImportant => "kind of important",
            ImportanceLevel::NotVeryImportant => "not very important",
        }
    }

    /// Finds the level phrase in a line. "not very important" is tested
    /// first since it contains "very important".
    pub fn find_in(line: &str) -> Option<Self> {
        let lower = line.to_lowercase();
        [
            ImportanceLevel::NotVeryImportant,
            ImportanceLevel::KindOfImportant,
            ImportanceLevel::VeryImportant,
        ]
        .into_iter()
        .find(|level| lower.contains(level.phrase()))
    }
}

impl fmt::Display for ImportanceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub level: ImportanceLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub ranked: Vec<RankedFeature>,
}

/// Working feature set: the ranked features minus the least important level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedFeatureSet {
    kept: Vec<usize>,
    provenance: FeatureSelection,
}

impl SelectedFeatureSet {
    /// A set chosen by hand; every index is recorded as very important.
    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let ranked: Vec<RankedFeature> = indices
            .into_iter()
            .map(|index| RankedFeature {
                index,
                level: ImportanceLevel::VeryImportant,
            })
            .collect();
        Self {
            kept: ranked.iter().map(|r| r.index).collect(),
            provenance: FeatureSelection { ranked },
        }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn provenance(&self) -> &FeatureSelection {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

pub fn build_selection_prompt(
    catalog: &FeatureCatalog,
    count: usize,
) -> Result<Conversation, SelectionError> {
    check_count(catalog, count)?;
    let mut conversation = Conversation::new();
    conversation.push_user(selection_request(catalog, count))?;
    Ok(conversation)
}

fn check_count(catalog: &FeatureCatalog, count: usize) -> Result<(), SelectionError> {
    if count == 0 {
        return Err(SelectionError::ZeroCount);
    }
    if count > catalog.len() {
        return Err(SelectionError::CountTooLarge {
            requested: count,
            available: catalog.len(),
        });
    }
    Ok(())
}

fn selection_request(catalog: &FeatureCatalog, count: usize) -> String {
    format!(
        "The following network traffic features are available, each with its index number:\n\n\
         {listing}\n\
         Select the indexing numbers of the {count} features most relevant to network intrusion detection. \
         Reply with exactly {count} index numbers as a comma-separated list, for example \"4, 9, 17\", \
         and nothing else.",
        listing = render_catalog_listing(catalog),
    )
}

fn selection_reminder(count: usize) -> String {
    format!(
        "Your reply could not be used. Reply only with {count} distinct index numbers from the list, \
         separated by commas."
    )
}

/// Scavenges integers from the reply in order of appearance.
pub fn parse_selection_reply(
    reply: &str,
    catalog: &FeatureCatalog,
    count: usize,
) -> Result<Vec<usize>, SelectionError> {
    let mut seen = HashSet::new();
    let distinct: Vec<usize> = integers(reply).filter(|i| seen.insert(*i)).collect();
    if distinct.is_empty() {
        return Err(SelectionError::NoIndicesFound);
    }
    let picked: Vec<usize> = distinct.into_iter().take(count).collect();
    if let Some(&index) = picked.iter().find(|&&i| i >= catalog.len()) {
        return Err(SelectionError::IndexOutOfRange {
            index,
            len: catalog.len(),
        });
    }
    if picked.len() < count {
        return Err(SelectionError::TooFewIndices {
            found: picked.len(),
            wanted: count,
        });
    }
    Ok(picked)
}

/// Digit runs in `text`. Runs too long for `usize` saturate, so they still
/// fail the range check.
fn integers(text: &str) -> impl Iterator<Item = usize> + '_ {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|run| !run.is_empty())
        .map(|run| run.parse::<usize>().unwrap_or(usize::MAX))
}

pub fn build_ranking_prompt(
    selected: &[usize],
    catalog: &FeatureCatalog,
) -> Result<Conversation, SelectionError> {
    let mut conversation = Conversation::new();
    conversation.push_user(ranking_request(selected, catalog)?)?;
    Ok(conversation)
}

fn ranking_request(selected: &[usize], catalog: &FeatureCatalog) -> Result<String, SelectionError> {
    if selected.is_empty() {
        return Err(SelectionError::EmptySelection);
    }
    let mut listing = String::new();
    for &index in selected {
        let entry = catalog.get(index).ok_or(SelectionError::IndexOutOfRange {
            index,
            len: catalog.len(),
        })?;
        listing.push_str(&format!("{}. {}\n", entry.index, entry.name));
    }
    Ok(format!(
        "Rank the importance of each of the following selected features for network intrusion detection \
         on three levels: '{}', '{}', or '{}'.\n\n{listing}\n\
         Reply with one line per feature in the format \"<index>: <level>\".",
        ImportanceLevel::VeryImportant.phrase(),
        ImportanceLevel::KindOfImportant.phrase(),
        ImportanceLevel::NotVeryImportant.phrase(),
    ))
}

fn ranking_reminder() -> String {
    format!(
        "Your reply could not be used. For each feature write one line \"<index>: <level>\" where the \
         level is '{}', '{}', or '{}'.",
        ImportanceLevel::VeryImportant.phrase(),
        ImportanceLevel::KindOfImportant.phrase(),
        ImportanceLevel::NotVeryImportant.phrase(),
    )
}

/// A line belongs to the index that is the first integer on it. Selected
/// indices the reply never mentions default to kind of important.
pub fn parse_ranking_reply(reply: &str, selected: &[usize]) -> Result<FeatureSelection, SelectionError> {
    let mut ranked = Vec::with_capacity(selected.len());
    for &index in selected {
        let line = reply
            .lines()
            .find(|line| integers(line).next() == Some(index));
        let level = match line {
            Some(line) => ImportanceLevel::find_in(line).ok_or_else(|| {
                SelectionError::UnrecognizedLevel {
                    index,
                    line: line.trim().to_string(),
                }
            })?,
            None => {
                log::warn!("ranking reply omitted feature {index}; keeping it as kind of important");
                ImportanceLevel::KindOfImportant
            }
        };
        ranked.push(RankedFeature { index, level });
    }
    Ok(FeatureSelection { ranked })
}

pub fn filter_selection(selection: FeatureSelection) -> Result<SelectedFeatureSet, SelectionError> {
    let kept: Vec<usize> = selection
        .ranked
        .iter()
        .filter(|r| r.level != ImportanceLevel::NotVeryImportant)
        .map(|r| r.index)
        .collect();
    if kept.is_empty() {
        return Err(SelectionError::AllFiltered);
    }
    Ok(SelectedFeatureSet {
        kept,
        provenance: selection,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub count: usize,
    /// Re-asks allowed per step after an unusable reply.
    pub format_retries: u32,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            count: DEFAULT_FEATURE_COUNT,
            format_retries: 2,
        }
    }
}

/// Runs the two-turn selection dialogue and returns the kept features.
pub fn select_features(
    session: &Session<'_>,
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
) -> Result<SelectedFeatureSet, SelectionError> {
    let mut conversation = build_selection_prompt(catalog, config.count)?;
    let selected = ask_until_parsed(session, &mut conversation, config.format_retries, || {
        selection_reminder(config.count)
    }, |reply| parse_selection_reply(reply, catalog, config.count))?;

    conversation.push_user(ranking_request(&selected, catalog)?)?;
    let ranking = ask_until_parsed(session, &mut conversation, config.format_retries, ranking_reminder, |reply| {
        parse_ranking_reply(reply, &selected)
    })?;
    filter_selection(ranking)
}

fn ask_until_parsed<T>(
    session: &Session<'_>,
    conversation: &mut Conversation,
    retries: u32,
    reminder: impl Fn() -> String,
    parse: impl Fn(&str) -> Result<T, SelectionError>,
) -> Result<T, SelectionError> {
    let mut attempt = 0;
    loop {
        let reply = session.complete(conversation)?;
        if !reply.trim().is_empty() {
            conversation.push_assistant(reply.as_str())?;
        }
        match parse(&reply) {
            Ok(parsed) => return Ok(parsed),
            Err(e) if e.is_reply_format() && attempt < retries => {
                log::warn!("unusable selection reply ({e}); asking again");
                conversation.push_user(reminder())?;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
