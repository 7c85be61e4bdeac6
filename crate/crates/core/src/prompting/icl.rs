use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::detection::{detect_conversation, DetectError, Verdict};
use crate::llm_client::{Conversation, Role, Session};

use super::{output_formatting_section, HeuristicQuestions, IclExample, PromptError};

pub const ILLUSTRATIVE_PREAMBLE: &str = "Here are some examples of network traffic and the expected answers.";
pub const INTERACTIVE_PREAMBLE: &str =
    "Here are some examples of network traffic that were reviewed with you earlier, together with your answers and the feedback you received.";

pub const ENCOURAGEMENT: &str =
    "Your answer is correct. Please continue to make judgments in this manner.";

pub fn correction(expected: Verdict) -> String {
    format!(
        "Your answer is incorrect. The traffic is {expected}, so the expected answer is {}. \
         Please explain why the expected answer is correct and reflect on the reason for the incorrect answer.",
        expected.answer_word()
    )
}

pub fn expected_answer(verdict: Verdict) -> String {
    format!("You should answer {}.", verdict.answer_word())
}

/// Examples laid out with their expected answers.
pub fn illustrative_block(examples: &[IclExample]) -> Result<String, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::EmptyExamples);
    }
    let mut text = String::from(ILLUSTRATIVE_PREAMBLE);
    for (i, example) in examples.iter().enumerate() {
        text.push_str(&format!(
            "\n\nExample {}:\n{}\n{}",
            i + 1,
            example.description(),
            expected_answer(example.verdict())
        ));
    }
    Ok(text)
}

/// Answers to heuristic questions, keyed by (illustrative block, question).
/// Safe to share between workers.
#[derive(Debug, Default)]
pub struct HeuristicCache {
    answers: Mutex<HashMap<(String, String), String>>,
}

impl HeuristicCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<(String, String), String>> {
        self.answers.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// The illustrative block followed by the model's answer to each question
/// asked over it.
pub fn heuristic_block(
    session: &Session<'_>,
    examples: &[IclExample],
    questions: &HeuristicQuestions,
    cache: Option<&HeuristicCache>,
) -> Result<String, PromptError> {
    let illustrative = illustrative_block(examples)?;
    let mut text = illustrative.clone();
    for question in questions.iter() {
        let key = (illustrative.clone(), question.to_string());
        let cached = cache.and_then(|c| c.lock().get(&key).cloned());
        let answer = match cached {
            Some(a) => a,
            None => {
                let mut conversation = Conversation::new();
                conversation.push_user(format!("{illustrative}\n\n{question}"))?;
                let answer = session.complete(&conversation)?.trim().to_string();
                if let Some(c) = cache {
                    c.lock().insert(key, answer.clone());
                }
                answer
            }
        };
        text.push_str(&format!("\n\nQ: {question}\nA: {answer}"));
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveTurn {
    pub example: IclExample,
    /// The model's last reply to the example.
    pub model_answer: String,
    pub verdict_matched: bool,
    /// Encouragement or correction sent back to the model.
    pub feedback: String,
    /// The encouragement on a match, the model's reflection otherwise.
    pub followup: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InteractiveTranscript {
    pub turns: Vec<InteractiveTurn>,
}

impl InteractiveTranscript {
    /// Text of the dialogue, used as the in-context block.
    pub fn render(&self) -> String {
        let mut text = String::from(INTERACTIVE_PREAMBLE);
        for (i, turn) in self.turns.iter().enumerate() {
            text.push_str(&format!(
                "\n\nExample {}:\n{}\nYour answer: {}\nFeedback: {}",
                i + 1,
                turn.example.description(),
                turn.model_answer,
                turn.feedback
            ));
            if !turn.verdict_matched {
                text.push_str(&format!("\nYour reflection: {}", turn.followup));
            }
        }
        text
    }
}

/// Walks the examples in one dialogue: each is shown unlabeled, the model's
/// verdict is checked against the label, and the model is either encouraged
/// or corrected and asked to reflect.
pub fn interactive_block(
    session: &Session<'_>,
    examples: &[IclExample],
    instructions: &str,
) -> Result<(String, InteractiveTranscript), PromptError> {
    if examples.is_empty() {
        return Err(PromptError::EmptyExamples);
    }
    let mut conversation = Conversation::with_system(instructions)?;
    let mut transcript = InteractiveTranscript::default();
    for example in examples {
        conversation.push_user(format!(
            "{}\n\n{}",
            example.description(),
            output_formatting_section()
        ))?;
        let expected = example.verdict();
        let (predicted, dialogue) = match detect_conversation(session, conversation) {
            Ok(outcome) => (Some(outcome.verdict), outcome.transcript),
            Err(DetectError::AmbiguousAfterRetries { transcript, .. }) => (None, *transcript),
            Err(DetectError::Llm(e)) => return Err(e.into()),
            Err(e) => return Err(PromptError::Detection(e.to_string())),
        };
        conversation = dialogue;
        let model_answer = conversation
            .last_with_role(Role::Assistant)
            .map(|m| m.content().to_string())
            .unwrap_or_default();
        let verdict_matched = predicted == Some(expected);
        let (feedback, followup) = if verdict_matched {
            conversation.push_user(ENCOURAGEMENT)?;
            (ENCOURAGEMENT.to_string(), ENCOURAGEMENT.to_string())
        } else {
            let feedback = correction(expected);
            conversation.push_user(feedback.as_str())?;
            let reflection = session.complete(&conversation)?.trim().to_string();
            if !reflection.is_empty() {
                conversation.push_assistant(reflection.as_str())?;
            }
            (feedback, reflection)
        };
        transcript.turns.push(InteractiveTurn {
            example: example.clone(),
            model_answer,
            verdict_matched,
            feedback,
            followup,
        });
    }
    Ok((transcript.render(), transcript))
}
