//! Rule-based backend that answers like a well-behaved model.
//!
//! A Product agent reads its instructions for operation keywords (in order of
//! appearance), skips those the status block marks done, and asks the first
//! roster entry whose tool table covers the next operation, attaching exactly
//! the G-code section for that tool. A Resource agent turns such a request
//! into an `execute_process` call on itself.

use serde_json::json;

use super::{latest_user_content, ChatBackend, ChatRequest, ChatResponse, FunctionSchema, LlmError, WorldView};
use crate::config::AgentKind;
use crate::gcode;
use crate::protocol::{
    self, EXECUTE_PROCESS, GCODE_MARKER, MESSAGE_AGENT, PROCEED_TO_EXIT_BUFFER, ROSTER_HEADER, STATUS_HEADER,
    UPDATE_PREFIX,
};

/// Operation words recognized even when no machine offers them, so that
/// requests for them are refused rather than ignored.
pub const KNOWN_OPERATIONS: &[&str] = &[
    "contouring",
    "drilling",
    "counterboring",
    "threading",
    "tapping",
    "milling",
    "facing",
    "pocketing",
    "boring",
    "reaming",
    "chamfering",
    "turning",
    "grinding",
    "deburring",
    "polishing",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct PlannerBackend;

impl ChatBackend for PlannerBackend {
    fn complete(&mut self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        Ok(planner_decide(request.messages, request.functions, request.world))
    }

    fn label(&self) -> String {
        "planner".into()
    }
}

pub fn planner_decide(
    messages: &[super::ChatMessage],
    schemas: &[FunctionSchema],
    world: Option<&WorldView>,
) -> ChatResponse {
    if schemas.is_empty() {
        return ChatResponse::stop("I have no functions available for this request.");
    }
    let Some(world) = world else {
        return ChatResponse::stop("I do not know which agents are available.");
    };
    let Some(prompt) = latest_user_content(messages) else {
        return ChatResponse::stop("There is no request to act on.");
    };
    let prompt = protocol::strip_clarify(prompt);
    let offered = |name: &str| schemas.iter().any(|s| s.name == name);

    match world.requester.kind {
        AgentKind::Product => decide_product(prompt, world, &offered),
        AgentKind::Resource => decide_resource(prompt, world, &offered),
    }
}

fn decide_product(prompt: &str, world: &WorldView, offered: &dyn Fn(&str) -> bool) -> ChatResponse {
    let product = &world.requester.name;
    let mut instructions = section_before_headers(prompt).to_string();
    if let Some(spec) = &world.requester.specification {
        instructions = instructions.replace(spec.as_str(), "");
    }

    let mut vocabulary: Vec<&str> = Vec::new();
    for entry in &world.roster {
        for op in entry.machine.tool_table.keys() {
            if !vocabulary.contains(&op.as_str()) {
                vocabulary.push(op);
            }
        }
    }
    for op in KNOWN_OPERATIONS {
        if !vocabulary.contains(op) {
            vocabulary.push(op);
        }
    }

    let lower = instructions.to_lowercase();
    let mut requested: Vec<(usize, &str)> = vocabulary
        .iter()
        .filter_map(|op| find_word(&lower, &op.to_lowercase()).map(|at| (at, *op)))
        .collect();
    requested.sort();

    if requested.is_empty() {
        return ChatResponse::stop("I could not find a manufacturing operation in the request.");
    }

    let done = completed_operations(prompt);
    let next = requested
        .iter()
        .map(|(_, op)| *op)
        .find(|op| !done.iter().any(|d| d.eq_ignore_ascii_case(op)));

    let Some(op) = next else {
        if lower.contains("exit buffer") && offered(PROCEED_TO_EXIT_BUFFER) {
            return ChatResponse::call(PROCEED_TO_EXIT_BUFFER, &json!({ "product_name": product }));
        }
        return ChatResponse::stop(format!("All requested operations for {product} are complete."));
    };

    let Some((resource, tool)) = world
        .roster
        .iter()
        .find_map(|e| e.machine.tool_table.get(op).map(|t| (e, *t)))
    else {
        return ChatResponse::stop(format!("I cannot find a resource for {op}."));
    };

    let section = world
        .requester
        .specification
        .as_deref()
        .and_then(|spec| gcode::parse(spec).ok())
        .and_then(|program| gcode::extract_for_tool(&program, tool).ok());
    let Some(section) = section else {
        return ChatResponse::stop(format!(
            "The product specification has no G-code section for T{tool}, so I cannot request {op}."
        ));
    };

    if !offered(MESSAGE_AGENT) {
        return ChatResponse::stop(format!(
            "{} should perform {op}, but I have no way to contact it.",
            resource.name
        ));
    }
    ChatResponse::call(
        MESSAGE_AGENT,
        &json!({
            "recipient": resource.name,
            "message": protocol::operation_request(op, product, &section),
        }),
    )
}

fn decide_resource(prompt: &str, world: &WorldView, offered: &dyn Fn(&str) -> bool) -> ChatResponse {
    let me = &world.requester;
    let Some(machine) = &me.machine_configuration else {
        return ChatResponse::stop(format!("{} has no machine to run.", me.name));
    };

    let (head, gcode_text) = match prompt.find(GCODE_MARKER) {
        Some(at) => (&prompt[..at], prompt[at + GCODE_MARKER.len()..].trim()),
        None => (prompt, ""),
    };
    let lower = head.to_lowercase();
    let op = machine
        .tool_table
        .keys()
        .filter_map(|op| find_word(&lower, &op.to_lowercase()).map(|at| (at, op)))
        .min()
        .map(|(_, op)| op.as_str());
    let Some(op) = op else {
        let ops: Vec<&str> = machine.tool_table.keys().map(String::as_str).collect();
        return ChatResponse::stop(format!(
            "{} cannot perform that request; it handles {}.",
            me.name,
            ops.join(", ")
        ));
    };

    let Some(product) = quoted_product(head) else {
        return ChatResponse::stop(format!("Which product should I perform {op} for?"));
    };
    if gcode_text.is_empty() {
        return ChatResponse::stop(format!("Which G-code section should I use for {op}?"));
    }
    if !offered(EXECUTE_PROCESS) {
        return ChatResponse::stop(format!("{} cannot execute processes.", me.name));
    }
    ChatResponse::call(
        EXECUTE_PROCESS,
        &json!({
            "process_name": op,
            "product_name": product,
            "machine_name": me.name,
            "gcode": gcode_text,
        }),
    )
}

/// Text ahead of the roster, status, and update blocks.
fn section_before_headers(prompt: &str) -> &str {
    let mut end = prompt.len();
    for header in [ROSTER_HEADER, STATUS_HEADER, UPDATE_PREFIX] {
        let mut from = 0;
        while let Some(at) = prompt[from..].find(header) {
            let at = from + at;
            if at == 0 || prompt[..at].ends_with('\n') {
                end = end.min(at);
                break;
            }
            from = at + header.len();
        }
    }
    &prompt[..end]
}

fn completed_operations(prompt: &str) -> Vec<String> {
    let Some(at) = prompt.find(STATUS_HEADER) else {
        return Vec::new();
    };
    prompt[at + STATUS_HEADER.len()..]
        .lines()
        .skip(1)
        .map_while(|line| line.strip_prefix("- "))
        .filter_map(|line| {
            let (op, status) = line.rsplit_once(':')?;
            (status.trim() == "done").then(|| op.trim().to_string())
        })
        .collect()
}

fn quoted_product(text: &str) -> Option<&str> {
    let start = text.find("product '")? + "product '".len();
    let len = text[start..].find('\'')?;
    (len > 0).then(|| &text[start..start + len])
}

/// Byte offset of `word` in `haystack` where it is not part of a longer word.
pub(crate) fn find_word(haystack: &str, word: &str) -> Option<usize> {
    if word.is_empty() {
        return None;
    }
    haystack.match_indices(word).map(|(i, _)| i).find(|&i| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + word.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}
