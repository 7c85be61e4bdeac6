use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionParams, Conversation, LlmError};

/// One line of the JSON-lines audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub backend: String,
    pub conversation: Conversation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only JSON-lines log of every backend exchange.
pub struct TranscriptLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl TranscriptLog {
    pub fn new<W: Write + Send + 'static>(sink: W) -> Self {
        Self {
            sink: Mutex::new(Box::new(sink)),
        }
    }

    pub fn append_to(path: &Path) -> io::Result<Self> {
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(BufWriter::new(file)))
    }

    pub fn record(&self, entry: &TranscriptEntry) -> io::Result<()> {
        let line = serde_json::to_string(entry)?;
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(sink, "{line}")
    }

    pub fn flush(&self) -> io::Result<()> {
        self.sink.lock().unwrap_or_else(|e| e.into_inner()).flush()
    }
}

impl Drop for TranscriptLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Wraps a backend and logs each call to a [`TranscriptLog`].
pub struct AuditedBackend<B> {
    inner: B,
    log: TranscriptLog,
}

impl<B: ChatBackend> AuditedBackend<B> {
    pub fn new(inner: B, log: TranscriptLog) -> Self {
        Self { inner, log }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for AuditedBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, conversation: &Conversation, params: &CompletionParams) -> Result<String, LlmError> {
        let result = self.inner.complete(conversation, params);
        let entry = TranscriptEntry {
            backend: self.inner.name().to_string(),
            conversation: conversation.clone(),
            reply: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        if let Err(e) = self.log.record(&entry) {
            log::error!("failed to write transcript entry: {e}");
        }
        result
    }
}
