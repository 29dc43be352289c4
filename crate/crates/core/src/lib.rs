//! LLM-driven multi-agent manufacturing control.
//!
//! Product agents hold a product's instructions and G-code; Resource agents
//! control machines. Agents talk through a chat backend with function
//! calling, and the harness measures how often whole workflows succeed.
//!
//! - [`config`]: agent definitions, capability resolution, system prompts.
//! - [`gcode`]: parsing, tool-based segmentation, allocation checks.
//! - [`llm`]: chat messages and the backends (remote, scripted, planner, faulted).
//! - [`agents`]: the runtime, capabilities, and the product workflow.
//! - [`shopfloor`]: simulated machines, clock, and exit buffer.
//! - [`harness`]: scenarios, repeated trials, failure classification, reports.

pub mod agents;
pub mod config;
pub mod gcode;
pub mod harness;
pub mod llm;
pub mod protocol;
pub mod shopfloor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gcode.md")]
    mod gcode {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/faults.md")]
    mod faults {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
