use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::llm::ChatResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Sent,
    Received,
    Dispatched,
    State,
}

/// One line of a trial's JSONL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Position in the trace, starting at 0.
    pub tick: u64,
    pub actor: String,
    pub kind: TraceKind,
    /// Object with an `event` field naming its shape.
    pub payload: Value,
}

impl TraceRecord {
    pub fn event(&self) -> &str {
        self.payload["event"].as_str().unwrap_or("")
    }
}

/// Append-only event log for one workflow run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, actor: &str, kind: TraceKind, payload: Value) -> u64 {
        let tick = self.records.len() as u64;
        self.records.push(TraceRecord {
            tick,
            actor: actor.to_string(),
            kind,
            payload,
        });
        tick
    }

    pub(crate) fn message(&mut self, from: &str, to: &str, content: &str) {
        let payload = json!({"event": "message", "from": from, "to": to, "content": content});
        self.push(from, TraceKind::Sent, payload.clone());
        self.push(to, TraceKind::Received, payload);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        records_to_jsonl(&self.records)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    /// Backend responses in call order, usable as a script for replay.
    pub fn responses(&self) -> Vec<ChatResponse> {
        self.records
            .iter()
            .filter(|r| r.event() == "completion")
            .filter_map(|r| serde_json::from_value(r.payload["response"].clone()).ok())
            .collect()
    }

    /// `(from, to)` for every sent message, in order.
    pub fn message_flow(&self) -> Vec<(String, String)> {
        self.records
            .iter()
            .filter(|r| r.kind == TraceKind::Sent)
            .map(|r| {
                let field = |k: &str| r.payload[k].as_str().unwrap_or_default().to_string();
                (field("from"), field("to"))
            })
            .collect()
    }
}

pub fn records_to_jsonl(records: &[TraceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Trace::new();
        t.message("user", "product-1", "go");
        t.push(
            "product-1",
            TraceKind::Dispatched,
            json!({"event": "completion", "response": ChatResponse::stop("hi")}),
        );
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        let back = Trace::from_jsonl(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(back.responses(), vec![ChatResponse::stop("hi")]);
        assert_eq!(back.message_flow(), vec![("user".into(), "product-1".into())]);
        assert_eq!(back.records()[1].kind, TraceKind::Received);
    }
}
