use std::path::Path;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

/// Replays a fixed list of responses, one per call.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    responses: Vec<ChatResponse>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<ChatResponse>) -> Self {
        Self { responses, cursor: 0 }
    }

    /// One JSON-encoded [`ChatResponse`] per non-empty line.
    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let responses = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| LlmError::MalformedBody(format!("script line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self::new(responses))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LlmError::MalformedBody(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(responses: &[ChatResponse]) -> String {
        responses
            .iter()
            .map(|r| serde_json::to_string(r).expect("responses serialize") + "\n")
            .collect()
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.cursor
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, _request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        let response = self
            .responses
            .get(self.cursor)
            .cloned()
            .ok_or(LlmError::ScriptExhausted { consumed: self.cursor })?;
        self.cursor += 1;
        Ok(response)
    }

    fn label(&self) -> String {
        "scripted".into()
    }
}
