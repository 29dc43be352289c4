//! Fixed prompt text, function names, and message templates.
//!
//! Everything an agent sees besides its own instructions is built here, so
//! remote-model runs are reproducible and the planner backend can read the
//! same text a remote model would.

use std::fmt::Write as _;

use crate::config::AgentConfig;
use crate::shopfloor::MachineConfig;

/// Cooperative preamble placed at the top of every agent's system prompt.
pub const PREAMBLE: &str = "You are a helpful agent in a cooperative Multi-Agent System.
If you are asked for a service you can provide you should help.
If necessary, you may ask the other agent for clarifying information.
You may communicate with your peers to achieve your goals.
If you do not know the answer do not make things up.
Only use the functions you have been provided with.
However, you may call these functions recursively.";

pub const EXECUTE_PROCESS: &str = "execute_process";
pub const MESSAGE_AGENT: &str = "message_agent";
pub const QUERY_HISTORY: &str = "query_history";
pub const PROCEED_TO_EXIT_BUFFER: &str = "proceed_to_exit_buffer";

/// Name of the pseudo-agent that issues instructions and receives the final report.
pub const USER: &str = "user";

pub const ROSTER_HEADER: &str = "Resource agents available:";
pub const STATUS_HEADER: &str = "Operation status:";
pub const UPDATE_PREFIX: &str = "Update from ";
pub const GCODE_MARKER: &str = "G-code:";

/// Prepended to a prompt when an agent answered in prose where a function
/// call was expected.
pub const CLARIFY_PREFIX: &str = "You replied without calling a function. \
Act on the request below by calling exactly one of the functions you have been provided with.";

/// One line of the peer-facing roster.
#[derive(Debug, Clone, PartialEq)]
pub struct RosterEntry {
    pub name: String,
    pub annotation: String,
    pub machine: MachineConfig,
}

impl RosterEntry {
    pub fn from_config(config: &AgentConfig) -> Option<Self> {
        config.machine_configuration.as_ref().map(|m| Self {
            name: config.name.clone(),
            annotation: config.annotation.clone(),
            machine: m.clone(),
        })
    }
}

/// ```text
/// Resource agents available:
/// - Milling1: Milling machine. Tools: contouring=T4, counterboring=T6
/// ```
pub fn render_roster(roster: &[RosterEntry]) -> String {
    let mut out = String::from(ROSTER_HEADER);
    for entry in roster {
        let tools = entry
            .machine
            .tool_table
            .iter()
            .map(|(op, t)| format!("{op}=T{t}"))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = write!(out, "\n- {}: {} Tools: {}", entry.name, entry.annotation.trim(), tools);
    }
    out
}

/// ```text
/// Operation status:
/// - contouring: done
/// - drilling: pending
/// ```
pub fn render_status<'a>(ops: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::from(STATUS_HEADER);
    for (op, status) in ops {
        let _ = write!(out, "\n- {op}: {status}");
    }
    out
}

/// Prompt for one Product-agent turn.
pub fn product_turn_prompt(instructions: &str, roster: &str, status: &str, update: Option<(&str, &str)>) -> String {
    let mut out = format!("{instructions}\n\n{roster}\n\n{status}");
    if let Some((from, text)) = update {
        let _ = write!(out, "\n\n{UPDATE_PREFIX}{from}: {text}");
    }
    out
}

/// Request a Product agent sends to a Resource agent.
pub fn operation_request(operation: &str, product: &str, section: &str) -> String {
    format!("Please perform {operation} for product '{product}'.\n{GCODE_MARKER}\n{section}")
}

pub fn clarify(prompt: &str) -> String {
    format!("{CLARIFY_PREFIX}\n\n{prompt}")
}

/// Removes a leading [`CLARIFY_PREFIX`] block, if any.
pub fn strip_clarify(prompt: &str) -> &str {
    prompt
        .strip_prefix(CLARIFY_PREFIX)
        .map(|rest| rest.trim_start_matches('\n'))
        .unwrap_or(prompt)
}

/// Final report a Product agent gives the user.
pub fn completion_report(product: &str, operations: &[String], exit_note: &str) -> String {
    format!(
        "All operations for {product} are complete: {}. {exit_note}",
        operations.join(", ")
    )
}

/// Replies that ask the sender something are routed back to it instead of
/// being treated as a missing function call.
pub fn is_question(text: &str) -> bool {
    text.trim_end().ends_with('?')
}
