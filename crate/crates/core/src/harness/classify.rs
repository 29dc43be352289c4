use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agents::TraceRecord;
use crate::gcode::{self, GCodeProgram};
use crate::protocol::EXECUTE_PROCESS;
use crate::shopfloor::MachineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    IncorrectFunctionCall,
    InaccurateGCodeAllocation,
    ProcessInexecution,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 3] = [
        Self::IncorrectFunctionCall,
        Self::InaccurateGCodeAllocation,
        Self::ProcessInexecution,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Self::IncorrectFunctionCall => "Incorrect Function Calls",
            Self::InaccurateGCodeAllocation => "Inaccurate G-code Allocation",
            Self::ProcessInexecution => "Process Inexecution",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// What the classifier needs to know about the scenario.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyContext<'a> {
    pub program: &'a GCodeProgram,
    pub machines: &'a IndexMap<String, MachineConfig>,
    pub expected_operations: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Classification {
    NotAFailure,
    Failure {
        class: ErrorClass,
        failed_operation: String,
        /// Tick of the first failing record.
        tick: u64,
        reason: String,
    },
}

/// Finds the first failing event in a trace and names its class.
///
/// Rules, checked per record in trace order:
/// 1. a call to an ungranted function, unparseable arguments, or an
///    `execute_process` call naming a machine or operation that does not
///    exist is an incorrect function call;
/// 2. an `execute_process` call whose G-code is not the section for the
///    machine's tool is an inaccurate allocation;
/// 3. a failed process, a premature exit, or a workflow that ended without
///    the expected call is process inexecution.
///
/// Errors that merely propagate a nested agent's failure are skipped, since
/// the nested failure appears earlier in the trace. The failed operation is
/// the first expected operation not yet done, or the last one when all are.
pub fn classify_failure(records: &[TraceRecord], ctx: &ClassifyContext<'_>) -> Classification {
    let mut done: HashSet<&str> = HashSet::new();
    for r in records {
        let p = &r.payload;
        let verdict = match r.event() {
            "operation" => {
                if p["status"] == "done" {
                    if let Some(op) = p["operation"].as_str() {
                        done.insert(op);
                    }
                }
                None
            }
            "call" => check_call(p, ctx),
            "result" => p.get("error").and_then(check_result_error),
            "workflow" if p["status"] == "failed" => {
                let kind = p["error"]["kind"].as_str().unwrap_or_default();
                let class = match kind {
                    "incorrect_function_call" | "malformed_arguments" => ErrorClass::IncorrectFunctionCall,
                    _ => ErrorClass::ProcessInexecution,
                };
                Some((
                    class,
                    format!("workflow failed: {}", p["error"]["message"].as_str().unwrap_or(kind)),
                ))
            }
            _ => None,
        };
        if let Some((class, reason)) = verdict {
            let failed_operation = ctx
                .expected_operations
                .iter()
                .find(|op| !done.contains(op.as_str()))
                .or(ctx.expected_operations.last())
                .cloned()
                .unwrap_or_default();
            return Classification::Failure {
                class,
                failed_operation,
                tick: r.tick,
                reason,
            };
        }
    }
    Classification::NotAFailure
}

fn check_call(p: &Value, ctx: &ClassifyContext<'_>) -> Option<(ErrorClass, String)> {
    let function = p["function"].as_str().unwrap_or_default();
    if p["granted"] != true {
        return Some((
            ErrorClass::IncorrectFunctionCall,
            format!("called ungranted function `{function}`"),
        ));
    }
    let raw = p["arguments"].as_str().unwrap_or_default();
    let args: Map<String, Value> = match serde_json::from_str(raw) {
        Ok(Value::Object(m)) => m,
        _ => {
            return Some((
                ErrorClass::IncorrectFunctionCall,
                format!("unparseable arguments for `{function}`"),
            ))
        }
    };
    if function != EXECUTE_PROCESS {
        return None;
    }
    let field = |k: &str| args.get(k).and_then(Value::as_str);
    let (Some(op), Some(machine), Some(_), Some(code)) = (
        field("process_name"),
        field("machine_name"),
        field("product_name"),
        field("gcode"),
    ) else {
        return Some((
            ErrorClass::IncorrectFunctionCall,
            "execute_process call lacks required arguments".into(),
        ));
    };
    let Some(tool) = ctx.machines.get(machine).and_then(|m| m.tool_table.get(op)) else {
        return Some((
            ErrorClass::IncorrectFunctionCall,
            format!("{machine} cannot perform {op}"),
        ));
    };
    let verdict = gcode::allocation_verdict(code, ctx.program, *tool);
    if !verdict.is_acceptable() {
        return Some((
            ErrorClass::InaccurateGCodeAllocation,
            format!("{machine} received G-code judged {verdict:?} for {op} (T{tool})"),
        ));
    }
    None
}

fn check_result_error(error: &Value) -> Option<(ErrorClass, String)> {
    let kind = error["kind"].as_str().unwrap_or_default();
    let class = match kind {
        "nested" => return None,
        "invalid_arguments"
        | "unknown_recipient"
        | "unknown_agent"
        | "unknown_machine"
        | "unsupported_operation"
        | "unknown_product" => ErrorClass::IncorrectFunctionCall,
        "tool_mismatch" => ErrorClass::InaccurateGCodeAllocation,
        _ => ErrorClass::ProcessInexecution,
    };
    Some((class, error["message"].as_str().unwrap_or(kind).to_string()))
}
