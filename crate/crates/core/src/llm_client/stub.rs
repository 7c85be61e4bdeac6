use std::collections::VecDeque;
use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{ChatBackend, CompletionParams, Conversation, LlmError};

/// Deterministic backend that replays canned replies in FIFO order and
/// records every conversation it receives.
///
/// Replies and the call log share one lock, so the recorded order is total
/// even under concurrent callers.
#[derive(Debug, Default)]
pub struct ScriptedStub {
    state: Mutex<StubState>,
}

#[derive(Debug, Default)]
struct StubState {
    script: VecDeque<String>,
    recorded: Vec<Conversation>,
    fallback: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Reply(String),
    Tagged { reply: String },
    Fallback { fallback: String },
}

impl ScriptedStub {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            state: Mutex::new(StubState {
                script: script.into_iter().map(Into::into).collect(),
                ..StubState::default()
            }),
        }
    }

    /// Once the script runs dry, answer every call with `reply` instead of
    /// failing with [`LlmError::ScriptExhausted`].
    pub fn with_fallback(self, reply: impl Into<String>) -> Self {
        self.lock().fallback = Some(reply.into());
        self
    }

    /// Parses a JSON-lines script. Each line is a JSON string (one reply),
    /// `{"reply": "..."}`, or `{"fallback": "..."}`. Blank lines are skipped.
    pub fn from_jsonl<R: BufRead>(source: R) -> Result<Self, LlmError> {
        let stub = Self::default();
        {
            let mut state = stub.lock();
            for (n, line) in source.lines().enumerate() {
                let line = line.map_err(|e| LlmError::Config(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: ScriptLine = serde_json::from_str(&line).map_err(|e| {
                    LlmError::Config(format!("script line {}: {e}", n + 1))
                })?;
                match parsed {
                    ScriptLine::Reply(r) | ScriptLine::Tagged { reply: r } => {
                        state.script.push_back(r)
                    }
                    ScriptLine::Fallback { fallback } => state.fallback = Some(fallback),
                }
            }
        }
        Ok(stub)
    }

    pub fn push_reply(&self, reply: impl Into<String>) {
        self.lock().script.push_back(reply.into());
    }

    pub fn remaining(&self) -> usize {
        self.lock().script.len()
    }

    pub fn recorded(&self) -> Vec<Conversation> {
        self.lock().recorded.clone()
    }

    pub fn calls(&self) -> usize {
        self.lock().recorded.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ChatBackend for ScriptedStub {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, conversation: &Conversation, _: &CompletionParams) -> Result<String, LlmError> {
        let mut state = self.lock();
        state.recorded.push(conversation.clone());
        match state.script.pop_front() {
            Some(reply) => Ok(reply),
            None => state.fallback.clone().ok_or(LlmError::ScriptExhausted),
        }
    }
}

type Responder = dyn Fn(&Conversation) -> Result<String, LlmError> + Send + Sync;

/// Backend whose reply is a pure function of the conversation. Useful as an
/// oracle: the reply does not depend on call order, so it stays deterministic
/// with concurrent workers.
pub struct RuleBackend {
    name: String,
    respond: Box<Responder>,
    calls: AtomicUsize,
}

impl RuleBackend {
    pub fn new<F>(name: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&Conversation) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            respond: Box::new(respond),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl std::fmt::Debug for RuleBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuleBackend").field("name", &self.name).finish()
    }
}

impl ChatBackend for RuleBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, conversation: &Conversation, _: &CompletionParams) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(conversation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convo(text: &str) -> Conversation {
        let mut c = Conversation::new();
        c.push_user(text).unwrap();
        c
    }

    #[test]
    fn single_reply_then_recorded() {
        let stub = ScriptedStub::new(["Yes"]);
        let p = CompletionParams::default();
        assert_eq!(stub.complete(&convo("q"), &p).unwrap(), "Yes");
        assert_eq!(stub.calls(), 1);
        assert_eq!(stub.recorded()[0], convo("q"));
    }

    #[test]
    fn empty_script_is_exhausted() {
        let stub = ScriptedStub::new(Vec::<String>::new());
        assert!(matches!(
            stub.complete(&convo("q"), &CompletionParams::default()),
            Err(LlmError::ScriptExhausted)
        ));
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn fifo_order() {
        let stub = ScriptedStub::new(["A", "B"]);
        let p = CompletionParams::default();
        assert_eq!(stub.complete(&convo("1"), &p).unwrap(), "A");
        assert_eq!(stub.complete(&convo("2"), &p).unwrap(), "B");
        assert!(stub.complete(&convo("3"), &p).is_err());
    }

    #[test]
    fn fallback_after_script() {
        let stub = ScriptedStub::new(["A"]).with_fallback("Z");
        let p = CompletionParams::default();
        assert_eq!(stub.complete(&convo("1"), &p).unwrap(), "A");
        assert_eq!(stub.complete(&convo("2"), &p).unwrap(), "Z");
        assert_eq!(stub.complete(&convo("3"), &p).unwrap(), "Z");
    }

    #[test]
    fn jsonl_script() {
        let src = "\"first\"\n\n{\"reply\": \"second\"}\n{\"fallback\": \"No\"}\n";
        let stub = ScriptedStub::from_jsonl(src.as_bytes()).unwrap();
        assert_eq!(stub.remaining(), 2);
        let p = CompletionParams::default();
        let replies: Vec<String> = (0..3).map(|_| stub.complete(&convo("x"), &p).unwrap()).collect();
        assert_eq!(replies, ["first", "second", "No"]);
        assert!(ScriptedStub::from_jsonl("not json\n".as_bytes()).is_err());
    }

    #[test]
    fn concurrent_calls_record_every_conversation() {
        let stub = ScriptedStub::new((0..64).map(|i| i.to_string()));
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..8 {
                        stub.complete(&convo("x"), &CompletionParams::default()).unwrap();
                    }
                });
            }
        });
        assert_eq!(stub.calls(), 64);
        assert_eq!(stub.remaining(), 0);
    }
}
