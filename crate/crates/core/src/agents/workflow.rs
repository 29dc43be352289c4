use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentId, Budget, CallMode, DispatchError, Runtime, TraceKind};
use crate::protocol::{self, MESSAGE_AGENT, PROCEED_TO_EXIT_BUFFER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpStatus {
    Pending,
    InProgress,
    Done,
    Failed,
}

impl OpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::InProgress => "in_progress",
            Self::Done => "done",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    InProcess,
    ExitBuffer,
}

/// Progress of one product, updated only from verified capability results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub product_name: String,
    pub operations: IndexMap<String, OpStatus>,
    pub location: Location,
}

impl WorkflowState {
    pub fn new(product_name: impl Into<String>, operations: &[String]) -> Self {
        Self {
            product_name: product_name.into(),
            operations: operations.iter().map(|op| (op.clone(), OpStatus::Pending)).collect(),
            location: Location::InProcess,
        }
    }

    /// Operations not yet done, in order.
    pub fn pending(&self) -> Vec<String> {
        self.operations
            .iter()
            .filter(|(_, s)| **s != OpStatus::Done)
            .map(|(op, _)| op.clone())
            .collect()
    }

    pub fn all_done(&self) -> bool {
        self.operations.values().all(|s| *s == OpStatus::Done)
    }

    /// Applies `Pending -> InProgress -> {Done, Failed}`; anything else is
    /// ignored. Returns whether the status changed.
    pub fn transition(&mut self, operation: &str, to: OpStatus) -> bool {
        let Some(status) = self.operations.get_mut(operation) else {
            return false;
        };
        let allowed = matches!(
            (*status, to),
            (OpStatus::Pending, OpStatus::InProgress)
                | (OpStatus::InProgress, OpStatus::Done)
                | (OpStatus::InProgress, OpStatus::Failed)
        );
        if allowed {
            *status = to;
        }
        allowed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowOutcome {
    pub success: bool,
    pub error: Option<DispatchError>,
    pub state: WorkflowState,
    /// Completion report sent to the user on success.
    pub report: Option<String>,
    /// Product-agent turns that ended in a dispatched call.
    pub turns: usize,
    pub backend_calls: usize,
}

impl Runtime {
    /// Drives one product from its instructions to the exit buffer.
    ///
    /// Each turn shows the Product agent its instructions, the roster, the
    /// operation status, and the latest reply it received. The run ends when
    /// the product reaches the exit buffer, on the first error, or when
    /// `max_steps` backend calls are used up.
    pub fn run_workflow(&mut self, pa: AgentId, user_instructions: &str, operations: &[String]) -> WorkflowOutcome {
        let product = self.agents[pa].name().to_string();
        let limit = self.settings.max_steps.unwrap_or(8 * operations.len().max(1));
        self.budget = Some(Budget {
            remaining: limit,
            limit,
        });
        let calls_before = self.backend_calls;
        self.workflows
            .insert(product.clone(), WorkflowState::new(&product, operations));
        self.trace.push(
            &product,
            TraceKind::State,
            json!({"event": "workflow", "product": product, "status": "started", "operations": operations}),
        );
        self.deliver(protocol::USER, Some(pa), user_instructions);

        let roster = protocol::render_roster(&self.roster);
        let mut update: Option<(String, String)> = None;
        let mut turns = 0;
        let result = loop {
            let state = &self.workflows[&product];
            let status = protocol::render_status(state.operations.iter().map(|(op, s)| (op.as_str(), s.as_str())));
            let prompt = protocol::product_turn_prompt(
                user_instructions,
                &roster,
                &status,
                update.as_ref().map(|(f, t)| (f.as_str(), t.as_str())),
            );
            let outcome = self.respond_expecting_call(pa, &prompt, CallMode::Strict);
            let outcome = self.recursive_dispatch(pa, outcome, CallMode::Strict);
            if let Some(e) = outcome.error {
                break Err(e);
            }
            turns += 1;
            let response = outcome.function_response.unwrap_or_default();
            match outcome.function_name.as_deref() {
                Some(PROCEED_TO_EXIT_BUFFER) if self.workflows[&product].location == Location::ExitBuffer => {
                    break Ok(response);
                }
                Some(MESSAGE_AGENT) => {
                    let from = outcome
                        .arguments
                        .as_ref()
                        .and_then(|a| a["recipient"].as_str())
                        .unwrap_or(MESSAGE_AGENT)
                        .to_string();
                    update = Some((from, response));
                }
                Some(other) => update = Some((other.to_string(), response)),
                None => update = None,
            }
        };
        self.budget = None;

        let state = self.workflows[&product].clone();
        let backend_calls = self.backend_calls - calls_before;
        match result {
            Ok(exit_note) => {
                let report = protocol::completion_report(&product, operations, &exit_note);
                self.deliver(&product, None, &report);
                self.trace.push(
                    &product,
                    TraceKind::State,
                    json!({"event": "workflow", "product": product, "status": "succeeded"}),
                );
                WorkflowOutcome {
                    success: true,
                    error: None,
                    state,
                    report: Some(report),
                    turns,
                    backend_calls,
                }
            }
            Err(e) => {
                self.trace.push(
                    &product,
                    TraceKind::State,
                    json!({"event": "workflow", "product": product, "status": "failed", "error": e.to_json()}),
                );
                WorkflowOutcome {
                    success: false,
                    error: Some(e),
                    state,
                    report: None,
                    turns,
                    backend_calls,
                }
            }
        }
    }
}
