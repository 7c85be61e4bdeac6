//! Verdict extraction from model replies, with re-prompting on unclear output.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Label;
use crate::llm_client::{Conversation, ConversationError, LlmError, Role, Session};
use crate::prompting::{output_formatting_section, PromptBundle};

/// Binary detection decision. `Malicious` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Malicious,
    Benign,
}

impl Verdict {
    pub fn of(label: &Label) -> Self {
        if label.is_malicious() {
            Verdict::Malicious
        } else {
            Verdict::Benign
        }
    }

    /// The answer word the output-formatting directive asks for.
    pub fn answer_word(self) -> &'static str {
        match self {
            Verdict::Malicious => "yes",
            Verdict::Benign => "no",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Malicious => "malicious",
            Verdict::Benign => "benign",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Clear(Verdict),
    Ambiguous,
}

impl Decision {
    pub fn verdict(self) -> Option<Verdict> {
        match self {
            Decision::Clear(v) => Some(v),
            Decision::Ambiguous => None,
        }
    }
}

/// Keyword search over whole alphabetic tokens, case-insensitive. A reply
/// with `yes` and no `no` is malicious, the mirror case benign, anything else
/// ambiguous.
pub fn extract_decision(reply: &str) -> Decision {
    let mut yes = false;
    let mut no = false;
    for token in reply.split(|c: char| !c.is_alphabetic()) {
        if token.eq_ignore_ascii_case("yes") {
            yes = true;
        } else if token.eq_ignore_ascii_case("no") {
            no = true;
        }
        if yes && no {
            return Decision::Ambiguous;
        }
    }
    match (yes, no) {
        (true, false) => Decision::Clear(Verdict::Malicious),
        (false, true) => Decision::Clear(Verdict::Benign),
        _ => Decision::Ambiguous,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub verdict: Verdict,
    pub attempts: u32,
    pub transcript: Conversation,
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no clear answer after {attempts} attempts")]
    AmbiguousAfterRetries {
        attempts: u32,
        transcript: Box<Conversation>,
    },
    #[error("retry cap must be at least 1")]
    InvalidCap,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
}

/// Sends the bundle's conversation and extracts a verdict, re-prompting with
/// the output-formatting directive while replies stay ambiguous.
pub fn detect(session: &Session<'_>, bundle: &PromptBundle) -> Result<DetectionOutcome, DetectError> {
    detect_conversation(session, bundle.conversation.clone())
}

/// Same as [`detect`] for an arbitrary conversation ending in a user turn.
pub fn detect_conversation(
    session: &Session<'_>,
    mut conversation: Conversation,
) -> Result<DetectionOutcome, DetectError> {
    let cap = session.retry_cap;
    if cap == 0 {
        return Err(DetectError::InvalidCap);
    }
    for attempt in 1..=cap {
        let reply = session.complete(&conversation)?;
        // Empty replies are ambiguous and leave no assistant turn behind.
        if !reply.trim().is_empty() {
            conversation.push_assistant(reply.as_str())?;
        }
        if let Decision::Clear(verdict) = extract_decision(&reply) {
            return Ok(DetectionOutcome {
                verdict,
                attempts: attempt,
                transcript: conversation,
            });
        }
        if attempt < cap {
            conversation.push_user(output_formatting_section())?;
        }
    }
    Err(DetectError::AmbiguousAfterRetries {
        attempts: cap,
        transcript: Box::new(conversation),
    })
}

/// Re-derives the verdict from a transcript's last assistant message.
pub fn replay_verdict(transcript: &Conversation) -> Option<Verdict> {
    transcript
        .last_with_role(Role::Assistant)
        .and_then(|m| extract_decision(m.content()).verdict())
}
