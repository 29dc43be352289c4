//! Agent runtime: messaging, the chat/dispatch loop, and capabilities.
//!
//! A [`Runtime`] owns every agent of one trial together with the shop floor,
//! the backend, and the trace. Exactly one agent is active at a time:
//! `message_agent` runs the recipient immediately and hands its reply back to
//! the caller, so a request and its answer always appear as a pair.
//!
//! Each [`Runtime::chat`] builds a fresh conversation (system prompt when the
//! agent has instructions, then the prompt), asks the backend, and executes
//! the returned function call against the agent's own capabilities.

mod capabilities;
mod trace;
mod workflow;

use std::collections::VecDeque;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{build_system_prompt, AgentConfig, AgentKind, Capability};
use crate::llm::{chat_complete, ChatBackend, ChatMessage, ChatRequest, FunctionSchema, LlmError, WorldView};
use crate::protocol::{self, RosterEntry, UPDATE_PREFIX};
use crate::shopfloor::{ProcessResult, ShopFloor, ShopFloorError};

pub use capabilities::{
    default_registry, execute_process_schema, message_agent_schema, proceed_to_exit_buffer_schema, query_history_schema,
};
pub use trace::{records_to_jsonl, Trace, TraceKind, TraceRecord};
pub use workflow::{Location, OpStatus, WorkflowOutcome, WorkflowState};

/// Index of an agent inside its [`Runtime`].
pub type AgentId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InboxItem {
    /// Sending agent, or [`protocol::USER`].
    pub from: String,
    pub content: String,
    /// Runtime-wide delivery counter.
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub system_prompt: String,
    pub capabilities: Vec<Capability>,
    pub inbox: VecDeque<InboxItem>,
    history: Vec<ChatMessage>,
}

impl Agent {
    pub fn new(config: AgentConfig, capabilities: Vec<Capability>) -> Self {
        Self {
            system_prompt: build_system_prompt(&config),
            config,
            capabilities,
            inbox: VecDeque::new(),
            history: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn schemas(&self) -> Vec<FunctionSchema> {
        self.capabilities.iter().map(|c| c.schema.clone()).collect()
    }

    /// Every message this agent exchanged with the backend, oldest first.
    pub fn history(&self) -> &[ChatMessage] {
        &self.history
    }
}

/// A request for further action, raised by a capability result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FollowUp {
    pub from: String,
    pub text: String,
}

/// What a capability hands back to the dispatching agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityReply {
    pub text: String,
    pub follow_up: Option<FollowUp>,
}

impl CapabilityReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            follow_up: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CapabilityError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("unknown recipient `{name}` (available: {})", .available.join(", "))]
    UnknownRecipient { name: String, available: Vec<String> },
    #[error("unknown agent `{name}` (available: {})", .available.join(", "))]
    UnknownAgent { name: String, available: Vec<String> },
    #[error("no workflow is tracking product `{0}`")]
    UnknownProduct(String),
    #[error(transparent)]
    ShopFloor(ShopFloorError),
    #[error("{}", .0.describe())]
    ProcessFailed(ProcessResult),
    #[error("{product} cannot proceed to the exit buffer; pending operations: {}", .pending.join(", "))]
    PrematureExit { product: String, pending: Vec<String> },
    #[error("{agent} could not complete the request: {source}")]
    Nested { agent: String, source: Box<DispatchError> },
}

impl CapabilityError {
    /// Stable snake_case label written to traces.
    pub fn kind(&self) -> &'static str {
        use crate::shopfloor::Outcome;
        match self {
            Self::InvalidArguments(_) => "invalid_arguments",
            Self::UnknownRecipient { .. } => "unknown_recipient",
            Self::UnknownAgent { .. } => "unknown_agent",
            Self::UnknownProduct(_) => "unknown_product",
            Self::ShopFloor(ShopFloorError::UnknownMachine { .. }) => "unknown_machine",
            Self::ShopFloor(ShopFloorError::UnsupportedOperation { .. }) => "unsupported_operation",
            Self::ShopFloor(ShopFloorError::DuplicateAdmission { .. }) => "duplicate_admission",
            Self::ProcessFailed(r) => match r.outcome {
                Outcome::Defect => "defect",
                Outcome::Breakdown => "breakdown",
                Outcome::ToolMismatch => "tool_mismatch",
                Outcome::Success => "success",
            },
            Self::PrematureExit { .. } => "premature_exit",
            Self::Nested { .. } => "nested",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("{agent} called `{function}`, which it has not been granted")]
    IncorrectFunctionCall { agent: String, function: String },
    #[error("{agent} sent malformed arguments to `{function}`: {reason}")]
    MalformedArguments {
        agent: String,
        function: String,
        reason: String,
    },
    #[error("{agent} replied without calling a function: {content:?}")]
    NoCall { agent: String, content: String },
    #[error("follow-up chain exceeded the depth limit of {limit}")]
    RecursionLimit { limit: usize },
    #[error("workflow used its budget of {limit} backend calls")]
    StepLimit { limit: usize },
    #[error("backend failure: {0}")]
    Backend(LlmError),
    #[error("`{function}` failed: {source}")]
    Capability { function: String, source: CapabilityError },
}

impl DispatchError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyPrompt => "empty_prompt",
            Self::IncorrectFunctionCall { .. } => "incorrect_function_call",
            Self::MalformedArguments { .. } => "malformed_arguments",
            Self::NoCall { .. } => "no_call",
            Self::RecursionLimit { .. } => "recursion_limit",
            Self::StepLimit { .. } => "step_limit",
            Self::Backend(_) => "backend",
            Self::Capability { .. } => "capability",
        }
    }

    pub(crate) fn to_json(&self) -> Value {
        let mut v = json!({"kind": self.kind(), "message": self.to_string()});
        if let Self::Capability { source, .. } = self {
            v["capability"] = json!(source.kind());
        }
        v
    }
}

/// Result of one chat turn, including everything sent and received.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispatchOutcome {
    pub agent: String,
    pub prompt: String,
    /// Prose from the last assistant message, if any.
    pub content: Option<String>,
    pub function_name: Option<String>,
    pub arguments: Option<Value>,
    /// The capability's result text, or the agent's question when it asked
    /// one back instead of acting. Present exactly when `error` is absent.
    pub function_response: Option<String>,
    /// Set when the agent answered with a question.
    pub question: Option<String>,
    /// Set when the capability's result asks this agent for more action.
    pub follow_up: Option<FollowUp>,
    pub messages: Vec<ChatMessage>,
    pub error: Option<DispatchError>,
}

impl DispatchOutcome {
    fn new(agent: &str, prompt: &str) -> Self {
        Self {
            agent: agent.to_string(),
            prompt: prompt.to_string(),
            ..Self::default()
        }
    }
}

/// How a missing function call is treated by [`Runtime::respond_expecting_call`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallMode {
    /// Any prose is retried once, then reported as [`DispatchError::NoCall`].
    Strict,
    /// A reply ending in `?` is passed back to the requester as a question.
    AllowQuestions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeSettings {
    pub model: String,
    /// Maximum follow-up hops, and maximum nesting of `message_agent`.
    pub depth_limit: usize,
    /// Backend calls per workflow; `None` means 8 per operation.
    pub max_steps: Option<usize>,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            depth_limit: 8,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("duplicate agent name `{0}`")]
    DuplicateAgent(String),
    #[error("depth_limit must be at least 1")]
    ZeroDepthLimit,
}

#[derive(Debug, Clone, Copy)]
struct Budget {
    remaining: usize,
    limit: usize,
}

pub struct Runtime {
    agents: Vec<Agent>,
    floor: ShopFloor,
    workflows: IndexMap<String, WorkflowState>,
    backend: Box<dyn ChatBackend>,
    settings: RuntimeSettings,
    roster: Vec<RosterEntry>,
    trace: Trace,
    user_inbox: Vec<InboxItem>,
    deliveries: u64,
    backend_calls: usize,
    budget: Option<Budget>,
    depth: usize,
}

impl Runtime {
    /// Every Resource agent with a machine configuration gets a machine of
    /// the same name on the shop floor and a roster entry, in agent order.
    pub fn new(
        agents: Vec<Agent>,
        backend: Box<dyn ChatBackend>,
        settings: RuntimeSettings,
        floor_seed: u64,
    ) -> Result<Self, RuntimeError> {
        if settings.depth_limit == 0 {
            return Err(RuntimeError::ZeroDepthLimit);
        }
        let mut floor = ShopFloor::new(floor_seed);
        let mut roster = Vec::new();
        for (i, a) in agents.iter().enumerate() {
            if agents[..i].iter().any(|b| b.name() == a.name()) {
                return Err(RuntimeError::DuplicateAgent(a.name().to_string()));
            }
            if a.config.kind == AgentKind::Resource {
                if let Some(entry) = RosterEntry::from_config(&a.config) {
                    floor.add_machine(a.name(), entry.machine.clone());
                    roster.push(entry);
                }
            }
        }
        Ok(Self {
            agents,
            floor,
            workflows: IndexMap::new(),
            backend,
            settings,
            roster,
            trace: Trace::new(),
            user_inbox: Vec::new(),
            deliveries: 0,
            backend_calls: 0,
            budget: None,
            depth: 0,
        })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> &Agent {
        &self.agents[id]
    }

    pub fn agent_id(&self, name: &str) -> Option<AgentId> {
        self.agents.iter().position(|a| a.name() == name)
    }

    pub fn floor(&self) -> &ShopFloor {
        &self.floor
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn settings(&self) -> &RuntimeSettings {
        &self.settings
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn workflow(&self, product: &str) -> Option<&WorkflowState> {
        self.workflows.get(product)
    }

    /// Messages addressed to the user, such as completion reports.
    pub fn user_inbox(&self) -> &[InboxItem] {
        &self.user_inbox
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls
    }

    pub fn backend_label(&self) -> String {
        self.backend.label()
    }

    /// Puts a message in the recipient's inbox and logs it.
    pub fn deliver(&mut self, from: &str, to: Option<AgentId>, content: &str) {
        let item = InboxItem {
            from: from.to_string(),
            content: content.to_string(),
            timestamp: self.deliveries,
        };
        self.deliveries += 1;
        let to_name = match to {
            Some(id) => {
                self.agents[id].inbox.push_back(item);
                self.agents[id].name().to_string()
            }
            None => {
                self.user_inbox.push(item);
                protocol::USER.to_string()
            }
        };
        self.trace.message(from, &to_name, content);
    }

    /// One request/response exchange with the backend, dispatching any
    /// function call the agent makes.
    pub fn chat(&mut self, id: AgentId, prompt: &str) -> DispatchOutcome {
        let name = self.agents[id].name().to_string();
        let mut out = DispatchOutcome::new(&name, prompt);
        if prompt.trim().is_empty() {
            out.error = Some(DispatchError::EmptyPrompt);
            return out;
        }
        if let Some(budget) = &mut self.budget {
            if budget.remaining == 0 {
                out.error = Some(DispatchError::StepLimit { limit: budget.limit });
                return out;
            }
            budget.remaining -= 1;
        }

        let agent = &self.agents[id];
        let mut messages = Vec::with_capacity(4);
        if !agent.config.instructions.is_empty() {
            messages.push(ChatMessage::system(agent.system_prompt.clone()));
        }
        messages.push(ChatMessage::user(prompt));
        let schemas = agent.schemas();
        let world = WorldView {
            roster: self.roster.clone(),
            requester: agent.config.clone(),
        };
        let request = ChatRequest {
            messages: &messages,
            functions: &schemas,
            model: &self.settings.model,
            world: Some(&world),
        };
        self.backend_calls += 1;
        let response = match chat_complete(self.backend.as_mut(), &request) {
            Ok(r) => r,
            Err(e) => {
                out.error = Some(DispatchError::Backend(e));
                return self.finish(id, out, messages);
            }
        };
        self.trace.push(
            &name,
            TraceKind::Dispatched,
            json!({"event": "completion", "response": response}),
        );
        out.content = response.message.content.clone();
        messages.push(response.message.clone());

        let Some(call) = response.message.function_call else {
            out.error = Some(DispatchError::NoCall {
                agent: name,
                content: out.content.clone().unwrap_or_default(),
            });
            return self.finish(id, out, messages);
        };
        let capability = self.agents[id]
            .capabilities
            .iter()
            .find(|c| c.schema.name == call.name)
            .cloned();
        self.trace.push(
            &name,
            TraceKind::Dispatched,
            json!({
                "event": "call",
                "function": call.name,
                "arguments": call.arguments,
                "granted": capability.is_some(),
            }),
        );
        out.function_name = Some(call.name.clone());
        let Some(capability) = capability else {
            out.error = Some(DispatchError::IncorrectFunctionCall {
                agent: name,
                function: call.name,
            });
            return self.finish(id, out, messages);
        };
        let args: Map<String, Value> = match serde_json::from_str(&call.arguments) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return self.malformed(id, out, messages, call.name, "expected a JSON object".into()),
            Err(e) => return self.malformed(id, out, messages, call.name, e.to_string()),
        };
        out.arguments = Some(Value::Object(args.clone()));

        match (capability.handler)(self, id, &args) {
            Ok(reply) => {
                self.trace.push(
                    &name,
                    TraceKind::Dispatched,
                    json!({"event": "result", "function": call.name, "response": reply.text}),
                );
                messages.push(ChatMessage::function(&call.name, &reply.text));
                out.function_response = Some(reply.text);
                out.follow_up = reply.follow_up;
            }
            Err(e) => {
                self.trace.push(
                    &name,
                    TraceKind::Dispatched,
                    json!({
                        "event": "result",
                        "function": call.name,
                        "error": {"kind": e.kind(), "message": e.to_string()},
                    }),
                );
                messages.push(ChatMessage::function(&call.name, e.to_string()));
                out.error = Some(DispatchError::Capability {
                    function: call.name,
                    source: e,
                });
            }
        }
        self.finish(id, out, messages)
    }

    fn malformed(
        &mut self,
        id: AgentId,
        mut out: DispatchOutcome,
        messages: Vec<ChatMessage>,
        function: String,
        reason: String,
    ) -> DispatchOutcome {
        out.error = Some(DispatchError::MalformedArguments {
            agent: out.agent.clone(),
            function,
            reason,
        });
        self.finish(id, out, messages)
    }

    fn finish(&mut self, id: AgentId, mut out: DispatchOutcome, messages: Vec<ChatMessage>) -> DispatchOutcome {
        self.agents[id].history.extend(messages.iter().cloned());
        out.messages = messages;
        out
    }

    /// [`chat`](Self::chat), tolerating one prose reply: it is retried once
    /// with a clarifying prompt, unless `mode` lets it stand as a question.
    pub fn respond_expecting_call(&mut self, id: AgentId, prompt: &str, mode: CallMode) -> DispatchOutcome {
        let first = self.chat(id, prompt);
        if !matches!(first.error, Some(DispatchError::NoCall { .. })) {
            return first;
        }
        if let Some(q) = as_question(&first, mode) {
            return q;
        }
        let mut retry = self.chat(id, &protocol::clarify(prompt));
        let mut messages = first.messages;
        messages.append(&mut retry.messages);
        retry.messages = messages;
        retry.prompt = prompt.to_string();
        if matches!(retry.error, Some(DispatchError::NoCall { .. })) {
            if let Some(q) = as_question(&retry, mode) {
                return q;
            }
        }
        retry
    }

    /// Re-enters the agent while its capability results ask for more
    /// action, up to the depth limit. Each follow-up prompt is the original
    /// prompt plus the update.
    pub fn recursive_dispatch(&mut self, id: AgentId, outcome: DispatchOutcome, mode: CallMode) -> DispatchOutcome {
        let original = outcome.prompt.clone();
        let limit = self.settings.depth_limit;
        let mut outcome = outcome;
        let mut hops = 0;
        while outcome.error.is_none() {
            let Some(follow_up) = outcome.follow_up.take() else {
                break;
            };
            hops += 1;
            if hops > limit {
                outcome.follow_up = Some(follow_up);
                outcome.function_response = None;
                outcome.error = Some(DispatchError::RecursionLimit { limit });
                break;
            }
            let prompt = format!("{original}\n\n{UPDATE_PREFIX}{}: {}", follow_up.from, follow_up.text);
            let mut next = self.respond_expecting_call(id, &prompt, mode);
            let mut messages = std::mem::take(&mut outcome.messages);
            messages.append(&mut next.messages);
            next.messages = messages;
            outcome = next;
        }
        outcome
    }

    fn set_status(&mut self, product: &str, operation: &str, status: OpStatus) {
        let Some(state) = self.workflows.get_mut(product) else {
            return;
        };
        if state.transition(operation, status) {
            self.trace.push(
                product,
                TraceKind::State,
                json!({"event": "operation", "product": product, "operation": operation, "status": status}),
            );
        }
    }
}

fn as_question(outcome: &DispatchOutcome, mode: CallMode) -> Option<DispatchOutcome> {
    let Some(DispatchError::NoCall { content, .. }) = &outcome.error else {
        return None;
    };
    if mode != CallMode::AllowQuestions || !protocol::is_question(content) {
        return None;
    }
    let mut q = outcome.clone();
    q.error = None;
    q.function_response = Some(content.clone());
    q.question = Some(content.clone());
    Some(q)
}
