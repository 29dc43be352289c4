//! Simulated machines, a simulation clock, and the exit buffer.
//!
//! Each execution consumes exactly two uniform draws from the floor's
//! stream: breakdown first, then defect. A defect is only possible when the
//! machine did not break down, so the observed defect rate is
//! `(1 - breakdown_probability) * defect_rate`. Tool mismatches are detected
//! before any draw and take no simulated time.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcode;

/// Process time used for operations without an explicit entry.
pub const DEFAULT_PROCESS_TIME: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    /// Operation name to simulated seconds.
    #[serde(default)]
    pub process_times: IndexMap<String, f64>,
    #[serde(default)]
    pub defect_rate: f64,
    #[serde(default)]
    pub breakdown_probability: f64,
    /// Operation name to tool number.
    pub tool_table: IndexMap<String, u32>,
}

impl MachineConfig {
    pub fn new(tool_table: impl IntoIterator<Item = (impl Into<String>, u32)>) -> Self {
        Self {
            process_times: IndexMap::new(),
            defect_rate: 0.0,
            breakdown_probability: 0.0,
            tool_table: tool_table.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn process_time(&self, operation: &str) -> f64 {
        self.process_times
            .get(operation)
            .copied()
            .unwrap_or(DEFAULT_PROCESS_TIME)
    }

    pub fn supports(&self, operation: &str) -> bool {
        self.tool_table.contains_key(operation)
    }

    pub fn validate(&self) -> Result<(), String> {
        for op in self.process_times.keys() {
            if !self.tool_table.contains_key(op) {
                return Err(format!("process time given for `{op}`, which has no tool"));
            }
        }
        for (op, t) in &self.process_times {
            if !(t.is_finite() && *t >= 0.0) {
                return Err(format!("process time for `{op}` must be a non-negative number"));
            }
        }
        for (label, p) in [
            ("defect_rate", self.defect_rate),
            ("breakdown_probability", self.breakdown_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{label} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Defect,
    Breakdown,
    ToolMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessResult {
    pub outcome: Outcome,
    pub operation: String,
    pub product: String,
    pub machine: String,
    pub elapsed: f64,
    /// Simulation time at completion.
    pub tick: f64,
}

impl ProcessResult {
    pub fn describe(&self) -> String {
        match self.outcome {
            Outcome::Success => format!("completed {} on {} at {}", self.operation, self.product, self.machine),
            Outcome::Defect => format!(
                "{} on {} at {} finished with a defect",
                self.operation, self.product, self.machine
            ),
            Outcome::Breakdown => format!(
                "{} broke down during {} on {} after {:.2}s",
                self.machine, self.operation, self.product, self.elapsed
            ),
            Outcome::ToolMismatch => format!(
                "{} rejected the G-code for {} on {}: it does not select the tool for {}",
                self.machine, self.operation, self.product, self.operation
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShopFloorError {
    #[error("unknown machine `{name}` (available: {})", .available.join(", "))]
    UnknownMachine { name: String, available: Vec<String> },
    #[error("{machine} does not support `{operation}` (supported: {})", .supported.join(", "))]
    UnsupportedOperation {
        machine: String,
        operation: String,
        supported: Vec<String>,
    },
    #[error("{product} was already admitted to the exit buffer")]
    DuplicateAdmission { product: String },
}

/// Monotonic simulated time in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance(&mut self, seconds: f64) -> f64 {
        if seconds > 0.0 {
            self.now += seconds;
        }
        self.now
    }
}

#[derive(Debug, Clone)]
struct Machine {
    config: MachineConfig,
    events: Vec<ProcessResult>,
}

#[derive(Debug, Clone)]
pub struct ShopFloor {
    machines: IndexMap<String, Machine>,
    clock: SimClock,
    exit_buffer: Vec<(String, f64)>,
    rng: ChaCha8Rng,
}

impl ShopFloor {
    pub fn new(seed: u64) -> Self {
        Self {
            machines: IndexMap::new(),
            clock: SimClock::default(),
            exit_buffer: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add_machine(&mut self, name: impl Into<String>, config: MachineConfig) {
        self.machines.insert(
            name.into(),
            Machine {
                config,
                events: Vec::new(),
            },
        );
    }

    pub fn machine_names(&self) -> Vec<String> {
        self.machines.keys().cloned().collect()
    }

    pub fn machine_config(&self, name: &str) -> Option<&MachineConfig> {
        self.machines.get(name).map(|m| &m.config)
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    /// Runs `operation` for `product` on `machine`.
    pub fn execute_process(
        &mut self,
        machine: &str,
        operation: &str,
        product: &str,
        gcode_text: &str,
    ) -> Result<ProcessResult, ShopFloorError> {
        let available = self.machine_names();
        let Some(m) = self.machines.get_mut(machine) else {
            return Err(ShopFloorError::UnknownMachine {
                name: machine.to_string(),
                available,
            });
        };
        let Some(&tool) = m.config.tool_table.get(operation) else {
            return Err(ShopFloorError::UnsupportedOperation {
                machine: machine.to_string(),
                operation: operation.to_string(),
                supported: m.config.tool_table.keys().cloned().collect(),
            });
        };

        let mut result = ProcessResult {
            outcome: Outcome::Success,
            operation: operation.to_string(),
            product: product.to_string(),
            machine: machine.to_string(),
            elapsed: 0.0,
            tick: self.clock.now(),
        };

        if !selects_tool(gcode_text, tool) {
            result.outcome = Outcome::ToolMismatch;
            m.events.push(result.clone());
            return Ok(result);
        }

        let duration = m.config.process_time(operation);
        let breakdown_draw: f64 = self.rng.random();
        let defect_draw: f64 = self.rng.random();
        let b = m.config.breakdown_probability;
        if breakdown_draw < b {
            result.outcome = Outcome::Breakdown;
            // conditional on breaking down, draw/b is uniform on [0, 1)
            result.elapsed = duration * (breakdown_draw / b);
        } else {
            if defect_draw < m.config.defect_rate {
                result.outcome = Outcome::Defect;
            }
            result.elapsed = duration;
        }
        result.tick = self.clock.advance(result.elapsed);
        m.events.push(result.clone());
        Ok(result)
    }

    /// Chronological results for one machine; empty for unknown names.
    pub fn machine_events(&self, machine: &str) -> &[ProcessResult] {
        self.machines.get(machine).map(|m| m.events.as_slice()).unwrap_or(&[])
    }

    /// All results involving `product`, ordered by completion tick.
    pub fn product_events(&self, product: &str) -> Vec<&ProcessResult> {
        let mut events: Vec<&ProcessResult> = self
            .machines
            .values()
            .flat_map(|m| m.events.iter())
            .filter(|r| r.product == product)
            .collect();
        events.sort_by(|a, b| a.tick.total_cmp(&b.tick));
        events
    }

    pub fn exit_buffer_admit(&mut self, product: &str) -> Result<f64, ShopFloorError> {
        if self.is_admitted(product) {
            return Err(ShopFloorError::DuplicateAdmission {
                product: product.to_string(),
            });
        }
        let tick = self.clock.now();
        self.exit_buffer.push((product.to_string(), tick));
        Ok(tick)
    }

    pub fn is_admitted(&self, product: &str) -> bool {
        self.exit_buffer.iter().any(|(p, _)| p == product)
    }

    pub fn exit_buffer(&self) -> &[(String, f64)] {
        &self.exit_buffer
    }
}

fn selects_tool(gcode_text: &str, tool: u32) -> bool {
    gcode::parse(gcode_text)
        .map(|p| p.blocks.iter().any(|b| b.tool() == Some(tool)))
        .unwrap_or(false)
}
