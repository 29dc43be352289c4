use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::{
    AgentId, CallMode, CapabilityError, CapabilityReply, DispatchError, FollowUp, Location, OpStatus, Runtime,
    TraceKind,
};
use crate::config::{AgentKind, CapabilityRegistry};
use crate::llm::FunctionSchema;
use crate::protocol::{EXECUTE_PROCESS, MESSAGE_AGENT, PROCEED_TO_EXIT_BUFFER, QUERY_HISTORY};
use crate::shopfloor::{Outcome, ProcessResult};

/// Registry holding the four built-in capabilities.
pub fn default_registry() -> CapabilityRegistry {
    let mut r = CapabilityRegistry::new();
    r.register(execute_process_schema(), Arc::new(execute_process))
        .expect("built-in schema is valid");
    r.register(message_agent_schema(), Arc::new(message_agent))
        .expect("built-in schema is valid");
    r.register(query_history_schema(), Arc::new(query_history))
        .expect("built-in schema is valid");
    r.register(proceed_to_exit_buffer_schema(), Arc::new(proceed_to_exit_buffer))
        .expect("built-in schema is valid");
    r
}

fn schema(name: &str, description: &str, properties: Value) -> FunctionSchema {
    let required: Vec<&String> = properties.as_object().map(|p| p.keys().collect()).unwrap_or_default();
    FunctionSchema {
        name: name.into(),
        description: description.into(),
        parameters: json!({"type": "object", "properties": properties, "required": required}),
    }
}

pub fn execute_process_schema() -> FunctionSchema {
    schema(
        EXECUTE_PROCESS,
        "Run a manufacturing process on a machine using the supplied G-code section.",
        json!({
            "process_name": {"type": "string", "description": "Operation to perform, e.g. contouring."},
            "product_name": {"type": "string", "description": "Product the operation is for."},
            "machine_name": {"type": "string", "description": "Machine that performs the operation."},
            "gcode": {"type": "string", "description": "G-code section for the operation's tool."},
        }),
    )
}

pub fn message_agent_schema() -> FunctionSchema {
    schema(
        MESSAGE_AGENT,
        "Send a message to another agent and receive its reply.",
        json!({
            "recipient": {"type": "string", "description": "Name of the receiving agent."},
            "message": {"type": "string", "description": "Content of the message."},
        }),
    )
}

pub fn query_history_schema() -> FunctionSchema {
    schema(
        QUERY_HISTORY,
        "List the recorded process events for an agent's product or machine.",
        json!({
            "agent_name": {"type": "string", "description": "Agent whose history to list."},
        }),
    )
}

pub fn proceed_to_exit_buffer_schema() -> FunctionSchema {
    schema(
        PROCEED_TO_EXIT_BUFFER,
        "Move a finished product to the exit buffer.",
        json!({
            "product_name": {"type": "string", "description": "Product to move."},
        }),
    )
}

fn string_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, CapabilityError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(CapabilityError::InvalidArguments(format!("`{key}` must be a string"))),
        None => Err(CapabilityError::InvalidArguments(format!("missing `{key}`"))),
    }
}

fn execute_process(
    rt: &mut Runtime,
    _caller: AgentId,
    args: &Map<String, Value>,
) -> Result<CapabilityReply, CapabilityError> {
    let process = string_arg(args, "process_name")?;
    let product = string_arg(args, "product_name")?;
    let machine = string_arg(args, "machine_name")?;
    let gcode = string_arg(args, "gcode")?;

    // reject bad machine/operation pairs before touching the workflow state
    match rt.floor.machine_config(machine) {
        None => {
            return Err(CapabilityError::ShopFloor(
                crate::shopfloor::ShopFloorError::UnknownMachine {
                    name: machine.to_string(),
                    available: rt.floor.machine_names(),
                },
            ))
        }
        Some(m) if !m.supports(process) => {
            return Err(CapabilityError::ShopFloor(
                crate::shopfloor::ShopFloorError::UnsupportedOperation {
                    machine: machine.to_string(),
                    operation: process.to_string(),
                    supported: m.tool_table.keys().cloned().collect(),
                },
            ))
        }
        Some(_) => {}
    }

    rt.set_status(product, process, OpStatus::InProgress);
    let result = rt
        .floor
        .execute_process(machine, process, product, gcode)
        .map_err(CapabilityError::ShopFloor)?;
    rt.trace.push(
        machine,
        TraceKind::Dispatched,
        json!({"event": "process", "result": result}),
    );
    if result.outcome == Outcome::Success {
        rt.set_status(product, process, OpStatus::Done);
        Ok(CapabilityReply::text(result.describe()))
    } else {
        rt.set_status(product, process, OpStatus::Failed);
        Err(CapabilityError::ProcessFailed(result))
    }
}

fn message_agent(
    rt: &mut Runtime,
    caller: AgentId,
    args: &Map<String, Value>,
) -> Result<CapabilityReply, CapabilityError> {
    let recipient = string_arg(args, "recipient")?;
    let message = string_arg(args, "message")?;
    if message.trim().is_empty() {
        return Err(CapabilityError::InvalidArguments("`message` must not be empty".into()));
    }
    let Some(to) = rt.agent_id(recipient) else {
        return Err(CapabilityError::UnknownRecipient {
            name: recipient.to_string(),
            available: rt.agents.iter().map(|a| a.name().to_string()).collect(),
        });
    };
    let from = rt.agents[caller].name().to_string();
    rt.deliver(&from, Some(to), message);

    let limit = rt.settings.depth_limit;
    if rt.depth >= limit {
        return Err(CapabilityError::Nested {
            agent: recipient.to_string(),
            source: Box::new(DispatchError::RecursionLimit { limit }),
        });
    }
    rt.depth += 1;
    let outcome = rt.respond_expecting_call(to, message, CallMode::AllowQuestions);
    let outcome = rt.recursive_dispatch(to, outcome, CallMode::AllowQuestions);
    rt.depth -= 1;

    if let Some(e) = outcome.error {
        return Err(CapabilityError::Nested {
            agent: recipient.to_string(),
            source: Box::new(e),
        });
    }
    let reply = outcome.function_response.unwrap_or_default();
    rt.deliver(recipient, Some(caller), &reply);
    Ok(CapabilityReply {
        follow_up: outcome.question.map(|text| FollowUp {
            from: recipient.to_string(),
            text,
        }),
        text: reply,
    })
}

fn query_history(
    rt: &mut Runtime,
    _caller: AgentId,
    args: &Map<String, Value>,
) -> Result<CapabilityReply, CapabilityError> {
    let name = string_arg(args, "agent_name")?;
    let Some(id) = rt.agent_id(name) else {
        return Err(CapabilityError::UnknownAgent {
            name: name.to_string(),
            available: rt.agents.iter().map(|a| a.name().to_string()).collect(),
        });
    };
    let events: Vec<&ProcessResult> = match rt.agents[id].config.kind {
        AgentKind::Product => rt.floor.product_events(name),
        AgentKind::Resource => rt.floor.machine_events(name).iter().collect(),
    };
    Ok(CapabilityReply::text(render_history(&events)))
}

/// One line per event, oldest first, or `no history`.
pub(crate) fn render_history(events: &[&ProcessResult]) -> String {
    if events.is_empty() {
        return "no history".into();
    }
    events
        .iter()
        .map(|e| {
            format!(
                "- t={:.2} {} for {} at {}: {:?}",
                e.tick, e.operation, e.product, e.machine, e.outcome
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn proceed_to_exit_buffer(
    rt: &mut Runtime,
    _caller: AgentId,
    args: &Map<String, Value>,
) -> Result<CapabilityReply, CapabilityError> {
    let product = string_arg(args, "product_name")?;
    let Some(state) = rt.workflows.get(product) else {
        return Err(CapabilityError::UnknownProduct(product.to_string()));
    };
    if state.location == Location::ExitBuffer {
        return Ok(CapabilityReply::text(format!(
            "{product} is already in the exit buffer."
        )));
    }
    let pending = state.pending();
    if !pending.is_empty() {
        return Err(CapabilityError::PrematureExit {
            product: product.to_string(),
            pending,
        });
    }
    let tick = rt
        .floor
        .exit_buffer_admit(product)
        .map_err(CapabilityError::ShopFloor)?;
    if let Some(state) = rt.workflows.get_mut(product) {
        state.location = Location::ExitBuffer;
    }
    rt.trace.push(
        product,
        TraceKind::State,
        json!({"event": "location", "product": product, "location": Location::ExitBuffer}),
    );
    Ok(CapabilityReply::text(format!(
        "{product} moved to the exit buffer at t={tick:.2}."
    )))
}
