//! OpenAI-compatible chat-completions client (legacy `functions` shape).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    ChatBackend, ChatMessage, ChatRequest, ChatResponse, FinishReason, FunctionCall, FunctionSchema, LlmError, Role,
};

pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const BASE_URL_ENV: &str = "LLM_BASE_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Retries after the first attempt, for transport errors and 5xx only.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            max_retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// Uses `base_url` if given, else `LLM_BASE_URL`; the key comes from `LLM_API_KEY`.
    pub fn from_env(base_url: Option<&str>) -> Option<Self> {
        let base = base_url
            .map(str::to_string)
            .or_else(|| std::env::var(BASE_URL_ENV).ok())?;
        let mut config = Self::new(base);
        config.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Some(config)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    functions: Option<&'a [FunctionSchema]>,
}

/// Serialized request body. Field order is fixed: `model`, `messages`, `functions`.
pub fn request_body(messages: &[ChatMessage], functions: &[FunctionSchema], model: &str) -> String {
    serde_json::to_string(&WireRequest {
        model,
        messages,
        functions: (!functions.is_empty()).then_some(functions),
    })
    .expect("request serializes")
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    function_call: Option<WireFunctionCall>,
    #[serde(default)]
    tool_calls: Option<Vec<WireToolCall>>,
}

#[derive(Deserialize)]
struct WireToolCall {
    function: WireFunctionCall,
}

#[derive(Deserialize)]
struct WireFunctionCall {
    name: String,
    #[serde(default)]
    arguments: Value,
}

impl From<WireFunctionCall> for FunctionCall {
    fn from(call: WireFunctionCall) -> Self {
        let arguments = match call.arguments {
            Value::String(s) => s,
            Value::Null => "{}".to_string(),
            other => other.to_string(),
        };
        FunctionCall {
            name: call.name,
            arguments,
        }
    }
}

/// Parses a chat-completions response body. A `tool_calls` entry is accepted
/// when `function_call` is absent; only the first one is used.
pub fn parse_response(body: &str) -> Result<ChatResponse, LlmError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| LlmError::MalformedBody(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedBody("response has no choices".into()))?;
    let call = choice.message.function_call.or_else(|| {
        choice
            .message
            .tool_calls
            .and_then(|calls| calls.into_iter().next())
            .map(|c| c.function)
    });
    let function_call = call.map(FunctionCall::from);
    let finish_reason = match (&function_call, choice.finish_reason.as_deref()) {
        (Some(_), _) => FinishReason::FunctionCall,
        (None, Some("length")) => FinishReason::Length,
        (None, Some("stop") | None) => FinishReason::Stop,
        (None, Some(_)) => FinishReason::Error,
    };
    Ok(ChatResponse {
        message: ChatMessage {
            role: Role::Assistant,
            content: choice.message.content,
            name: None,
            function_call,
        },
        finish_reason,
    })
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport {
                message: e.to_string(),
                attempts: 0,
            })?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &str) -> Result<String, (LlmError, bool)> {
        let mut req = self
            .client
            .post(self.config.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            (
                LlmError::Transport {
                    message: e.to_string(),
                    attempts: 0,
                },
                true,
            )
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (
                LlmError::Transport {
                    message: e.to_string(),
                    attempts: 0,
                },
                true,
            )
        })?;
        if !status.is_success() {
            let retryable = status.is_server_error();
            return Err((
                LlmError::Status {
                    status: status.as_u16(),
                    body: text,
                    attempts: 0,
                    retryable,
                },
                retryable,
            ));
        }
        Ok(text)
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&mut self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        let body = request_body(request.messages, request.functions, request.model);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return parse_response(&text),
                Err((err, retryable)) => {
                    if !retryable || attempts > self.config.max_retries {
                        return Err(with_attempts(err, attempts));
                    }
                    tracing::warn!(attempt = attempts, error = %err, "retrying chat completion");
                    std::thread::sleep(self.config.backoff * 2u32.pow(attempts - 1));
                }
            }
        }
    }

    fn label(&self) -> String {
        format!("remote({})", self.config.base_url)
    }
}

fn with_attempts(err: LlmError, n: u32) -> LlmError {
    match err {
        LlmError::Transport { message, .. } => LlmError::Transport { message, attempts: n },
        LlmError::Status {
            status,
            body,
            retryable,
            ..
        } => LlmError::Status {
            status,
            body,
            attempts: n,
            retryable,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves the given `(status, body)` pairs in order, one per connection,
    /// and records each request body.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), seen)
    }

    fn backend(base: &str) -> RemoteBackend {
        let mut config = RemoteConfig::new(base);
        config.backoff = Duration::from_millis(1);
        config.api_key = Some("test-key".into());
        RemoteBackend::new(config).unwrap()
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":null,"function_call":{"name":"message_agent","arguments":"{\"recipient\":\"Milling1\"}"}},"finish_reason":"function_call"}]}"#;

    fn call(b: &mut RemoteBackend) -> Result<ChatResponse, LlmError> {
        let msgs = [ChatMessage::user("hi")];
        b.complete(&ChatRequest {
            messages: &msgs,
            functions: &[],
            model: "gpt-4",
            world: None,
        })
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (base, seen) = serve(vec![(500, "{}".into()), (503, "{}".into()), (200, OK_BODY.into())]);
        let resp = call(&mut backend(&base)).unwrap();
        assert_eq!(resp.function_call().unwrap().name, "message_agent");
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[0], seen[2]);
        assert_eq!(
            seen[0],
            r#"{"model":"gpt-4","messages":[{"role":"user","content":"hi"}]}"#
        );
    }

    #[test]
    fn gives_up_after_two_retries() {
        let (base, _) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
        match call(&mut backend(&base)) {
            Err(LlmError::Status {
                status: 500,
                attempts: 3,
                retryable: true,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (base, seen) = serve(vec![(401, "denied".into())]);
        match call(&mut backend(&base)) {
            Err(LlmError::Status {
                status: 401,
                attempts: 1,
                retryable: false,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_body() {
        let (base, _) = serve(vec![(200, "not json".into())]);
        assert!(matches!(call(&mut backend(&base)), Err(LlmError::MalformedBody(_))));
    }

    #[test]
    fn transport_failure() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        match call(&mut backend(&base)) {
            Err(LlmError::Transport { attempts: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_variants() {
        let r = parse_response(r#"{"choices":[{"message":{"content":"hello"},"finish_reason":"stop"}]}"#).unwrap();
        assert_eq!(r.finish_reason, FinishReason::Stop);
        assert_eq!(r.message.content.as_deref(), Some("hello"));

        let r = parse_response(
            r#"{"choices":[{"message":{"content":null,"tool_calls":[{"id":"1","type":"function","function":{"name":"f","arguments":{"a":1}}}]},"finish_reason":"tool_calls"}]}"#,
        )
        .unwrap();
        assert_eq!(r.finish_reason, FinishReason::FunctionCall);
        assert_eq!(r.function_call().unwrap().arguments, r#"{"a":1}"#);

        assert!(parse_response(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn body_omits_empty_functions() {
        let msgs = [ChatMessage::user("x")];
        let body = request_body(&msgs, &[], "m");
        assert!(!body.contains("functions"));
        let f = FunctionSchema {
            name: "f".into(),
            description: "d".into(),
            parameters: json!({"type": "object", "properties": {}}),
        };
        let body = request_body(&msgs, &[f], "m");
        assert!(body.ends_with(
            r#""functions":[{"name":"f","description":"d","parameters":{"properties":{},"type":"object"}}]}"#
        ));
    }
}
