//! Chat completion with function calling.
//!
//! Every agent talks to a [`ChatBackend`]. Four implementations share the
//! same message model:
//!
//! - [`RemoteBackend`]: an OpenAI-compatible `/chat/completions` endpoint.
//! - [`ScriptedBackend`]: replays recorded responses in order.
//! - [`PlannerBackend`]: a deterministic rule-based stand-in for a model.
//! - [`FaultedBackend`]: wraps another backend and injects seeded faults.
//!
//! Backends are called through [`chat_complete`], which checks the request
//! and guarantees that no function call comes back when no functions were
//! offered.

mod faulted;
mod planner;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::AgentConfig;
use crate::protocol::RosterEntry;

pub use faulted::{FaultKind, FaultProfile, FaultedBackend, WRONG_FUNCTION_NAME};
pub use planner::{planner_decide, PlannerBackend};
pub use remote::{parse_response, request_body, RemoteBackend, RemoteConfig};
pub use scripted::ScriptedBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Function,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    /// JSON text, exactly as produced by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_call: Option<FunctionCall>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::text(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::text(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::text(Role::Assistant, content)
    }

    pub fn assistant_call(name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: None,
            name: None,
            function_call: Some(FunctionCall {
                name: name.into(),
                arguments: arguments.into(),
            }),
        }
    }

    pub fn function(name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Function,
            content: Some(content.into()),
            name: Some(name.into()),
            function_call: None,
        }
    }

    fn text(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: Some(content.into()),
            name: None,
            function_call: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        (self.role != Role::Function || self.name.is_some())
            && (self.function_call.is_none() || self.role == Role::Assistant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl FunctionSchema {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() || !self.name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(format!("invalid function name `{}`", self.name));
        }
        let params = self
            .parameters
            .as_object()
            .ok_or_else(|| format!("{}: parameters must be a JSON object", self.name))?;
        if params.get("type").and_then(Value::as_str) != Some("object") {
            return Err(format!("{}: parameters must have \"type\": \"object\"", self.name));
        }
        let props = params
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| format!("{}: parameters need a properties object", self.name))?;
        if let Some(required) = params.get("required") {
            let required = required
                .as_array()
                .ok_or_else(|| format!("{}: required must be an array", self.name))?;
            for r in required {
                let r = r
                    .as_str()
                    .ok_or_else(|| format!("{}: required entries must be strings", self.name))?;
                if !props.contains_key(r) {
                    return Err(format!("{}: required property `{r}` is not declared", self.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    FunctionCall,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub message: ChatMessage,
    pub finish_reason: FinishReason,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        Self {
            message: ChatMessage::assistant(content),
            finish_reason: FinishReason::Stop,
        }
    }

    pub fn call(name: impl Into<String>, arguments: &Value) -> Self {
        Self {
            message: ChatMessage::assistant_call(name, arguments.to_string()),
            finish_reason: FinishReason::FunctionCall,
        }
    }

    pub fn function_call(&self) -> Option<&FunctionCall> {
        self.message.function_call.as_ref()
    }
}

/// What a backend knows about the agent it is answering for. Remote
/// backends ignore it; the same information is in the prompt text.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldView {
    pub roster: Vec<RosterEntry>,
    pub requester: AgentConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub functions: &'a [FunctionSchema],
    pub model: &'a str,
    pub world: Option<&'a WorldView>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        body: String,
        attempts: u32,
        retryable: bool,
    },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("script exhausted after {consumed} response(s)")]
    ScriptExhausted { consumed: usize },
}

pub trait ChatBackend: Send {
    fn complete(&mut self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError>;

    /// Short label used in reports.
    fn label(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&mut self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Checks the request, calls the backend, and enforces the response invariants.
pub fn chat_complete(backend: &mut dyn ChatBackend, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
    match request.messages.last() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if !matches!(m.role, Role::User | Role::Function) => {
            return Err(LlmError::InvalidRequest(
                "last message must come from the user or a function".into(),
            ))
        }
        _ => {}
    }
    let mut response = backend.complete(request)?;
    if request.functions.is_empty() && response.message.function_call.is_some() {
        response.message.function_call = None;
        response.finish_reason = FinishReason::Stop;
    }
    response.finish_reason = match (&response.message.function_call, response.finish_reason) {
        (Some(_), _) => FinishReason::FunctionCall,
        (None, FinishReason::FunctionCall) => FinishReason::Stop,
        (None, other) => other,
    };
    Ok(response)
}

/// Content of the most recent user message.
pub(crate) fn latest_user_content(messages: &[ChatMessage]) -> Option<&str> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .and_then(|m| m.content.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct AlwaysCalls;

    impl ChatBackend for AlwaysCalls {
        fn complete(&mut self, _: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
            Ok(ChatResponse::call("execute_process", &json!({})))
        }
        fn label(&self) -> String {
            "always".into()
        }
    }

    fn request<'a>(messages: &'a [ChatMessage], functions: &'a [FunctionSchema]) -> ChatRequest<'a> {
        ChatRequest {
            messages,
            functions,
            model: "test",
            world: None,
        }
    }

    #[test]
    fn no_functions_means_no_call() {
        let msgs = [ChatMessage::user("hi")];
        let r = chat_complete(&mut AlwaysCalls, &request(&msgs, &[])).unwrap();
        assert!(r.function_call().is_none());
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn request_preconditions() {
        assert!(matches!(
            chat_complete(&mut AlwaysCalls, &request(&[], &[])),
            Err(LlmError::InvalidRequest(_))
        ));
        let msgs = [ChatMessage::user("hi"), ChatMessage::assistant("hello")];
        assert!(matches!(
            chat_complete(&mut AlwaysCalls, &request(&msgs, &[])),
            Err(LlmError::InvalidRequest(_))
        ));
    }

    #[test]
    fn message_invariants() {
        assert!(ChatMessage::function("f", "ok").is_valid());
        let mut bad = ChatMessage::user("x");
        bad.function_call = Some(FunctionCall {
            name: "f".into(),
            arguments: "{}".into(),
        });
        assert!(!bad.is_valid());
        let mut nameless = ChatMessage::function("f", "ok");
        nameless.name = None;
        assert!(!nameless.is_valid());
    }

    #[test]
    fn schema_validation() {
        let good = FunctionSchema {
            name: "execute_process".into(),
            description: String::new(),
            parameters: json!({"type": "object", "properties": {"a": {"type": "string"}}, "required": ["a"]}),
        };
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.name = "bad name".into();
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.parameters = json!({"type": "object", "properties": {}, "required": ["a"]});
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.parameters = json!([]);
        assert!(bad.validate().is_err());
    }
}
