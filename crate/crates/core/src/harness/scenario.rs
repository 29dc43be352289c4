use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::agents::{default_registry, Agent, AgentId, Runtime, RuntimeSettings};
use crate::config::{
    load_agent_configs_in, resolve_functions, AgentConfig, AgentKind, CapabilityRegistry, ConfigError,
};
use crate::gcode::{self, GCodeError, GCodeProgram};
use crate::llm::{ChatBackend, FaultProfile};
use crate::shopfloor::MachineConfig;

/// Target for a fault profile solved from the scenario's own call sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    /// Probability that a trial fails.
    pub error_rate: f64,
    /// Shares of failed trials per class: incorrect function call,
    /// inaccurate G-code allocation, process inexecution.
    pub mix: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    Planner,
    /// The planner with injected faults; exactly one of the fields is set.
    Faulted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<FaultProfile>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calibrate: Option<CalibrationTarget>,
    },
    /// Responses replayed from a JSONL file, relative to the scenario.
    Scripted { path: PathBuf },
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
}

impl BackendSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Planner => "planner",
            Self::Faulted { .. } => "faulted",
            Self::Scripted { .. } => "scripted",
            Self::Remote { .. } => "remote",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Faulted { profile, calibrate } => match (profile, calibrate) {
                (Some(p), None) => p.validate(),
                (None, Some(c)) => {
                    if !(0.0..1.0).contains(&c.error_rate) {
                        return Err(format!(
                            "calibration error_rate must lie in [0, 1), got {}",
                            c.error_rate
                        ));
                    }
                    if c.mix.iter().any(|m| !(0.0..=1.0).contains(m)) || (c.mix.iter().sum::<f64>() - 1.0).abs() > 1e-6
                    {
                        return Err(format!("calibration mix must be shares summing to 1, got {:?}", c.mix));
                    }
                    Ok(())
                }
                _ => Err("faulted backend needs exactly one of `profile` or `calibrate`".into()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot read {}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error("agent documents: {0}")]
    Config(#[from] ConfigError),
    #[error("scenario G-code: {0}")]
    GCode(#[from] GCodeError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    product_instructions: String,
    gcode: GCodeSource,
    agents: Vec<Box<RawValue>>,
    expected_operations: Vec<String>,
    #[serde(default)]
    backend: BackendSpec,
    #[serde(default)]
    max_steps: Option<usize>,
    #[serde(default)]
    depth_limit: Option<usize>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GCodeSource {
    Inline(String),
    File { file: PathBuf },
}

/// A validated experiment definition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub product_instructions: String,
    pub gcode: String,
    pub program: GCodeProgram,
    pub agents: Vec<AgentConfig>,
    pub expected_operations: Vec<String>,
    pub backend: BackendSpec,
    pub max_steps: Option<usize>,
    pub depth_limit: usize,
    pub model: String,
    /// Directory relative paths in the scenario resolve against.
    pub base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let gcode = match file.gcode {
            GCodeSource::Inline(text) => text,
            GCodeSource::File { file } => read(&base_dir.join(file))?,
        };
        let program = gcode::parse(&gcode)?;

        let mut agents: Vec<AgentConfig> = Vec::new();
        for (index, doc) in file.agents.iter().enumerate() {
            let configs = load_agent_configs_in(doc.get(), Some(base_dir)).map_err(|source| ConfigError::Document {
                index,
                source: Box::new(source),
            })?;
            for c in configs {
                if agents.iter().any(|a| a.name == c.name) {
                    return Err(ScenarioError::Invalid(format!("agent `{}` is defined twice", c.name)));
                }
                agents.push(c);
            }
        }
        for a in agents.iter_mut().filter(|a| a.kind == AgentKind::Product) {
            match &a.specification {
                None => a.specification = Some(gcode.clone()),
                Some(spec) if spec.trim() == gcode.trim() => {}
                Some(_) => {
                    return Err(ScenarioError::Invalid(format!(
                        "product agent `{}` carries a specification that differs from the scenario G-code",
                        a.name
                    )))
                }
            }
        }

        let scenario = Self {
            name: file.name,
            product_instructions: file.product_instructions,
            gcode,
            program,
            agents,
            expected_operations: file.expected_operations,
            backend: file.backend,
            max_steps: file.max_steps,
            depth_limit: file.depth_limit.unwrap_or(8),
            model: file.model.unwrap_or_else(|| "gpt-4".into()),
            base_dir: base_dir.to_path_buf(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.name.trim().is_empty() {
            return invalid("name must be non-empty".into());
        }
        if self.expected_operations.is_empty() {
            return invalid("expected_operations must be non-empty".into());
        }
        for (i, op) in self.expected_operations.iter().enumerate() {
            if self.expected_operations[..i].contains(op) {
                return invalid(format!("operation `{op}` is listed twice"));
            }
        }
        let products: Vec<&AgentConfig> = self.agents.iter().filter(|a| a.kind == AgentKind::Product).collect();
        if products.len() != 1 {
            return invalid(format!("expected exactly one product agent, found {}", products.len()));
        }
        let tools = gcode::tool_numbers(&self.program);
        let machines = self.machines();
        for op in &self.expected_operations {
            let owners: Vec<(&String, u32)> = machines
                .iter()
                .filter_map(|(name, m)| m.tool_table.get(op).map(|t| (name, *t)))
                .collect();
            match owners.as_slice() {
                [] => return invalid(format!("no resource agent performs `{op}`")),
                [(_, tool)] if !tools.contains(tool) => {
                    return invalid(format!("the G-code has no section for T{tool}, needed for `{op}`"))
                }
                [_] => {}
                _ => {
                    let names: Vec<&str> = owners.iter().map(|(n, _)| n.as_str()).collect();
                    return invalid(format!("`{op}` is offered by several machines: {}", names.join(", ")));
                }
            }
        }
        if self.depth_limit == 0 {
            return invalid("depth_limit must be at least 1".into());
        }
        if self.max_steps == Some(0) {
            return invalid("max_steps must be at least 1".into());
        }
        self.backend.validate().map_err(ScenarioError::Invalid)
    }

    /// Rejects agents that request functions the registry lacks.
    pub fn check_functions(&self, registry: &CapabilityRegistry) -> Result<(), ScenarioError> {
        for a in &self.agents {
            if let Some(f) = a.function_names.iter().find(|f| !registry.contains(f)) {
                return Err(ConfigError::UnknownFunction {
                    agent: a.name.clone(),
                    function: f.clone(),
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn product_agent(&self) -> &AgentConfig {
        self.agents
            .iter()
            .find(|a| a.kind == AgentKind::Product)
            .expect("validated scenarios have a product agent")
    }

    /// Resource agents' machines, in agent order.
    pub fn machines(&self) -> IndexMap<String, MachineConfig> {
        self.agents
            .iter()
            .filter(|a| a.kind == AgentKind::Resource)
            .filter_map(|a| a.machine_configuration.clone().map(|m| (a.name.clone(), m)))
            .collect()
    }

    /// What the user tells the product agent: the instructions, then the program.
    pub fn user_instructions(&self) -> String {
        format!("{}\n{}", self.product_instructions, self.gcode.trim_end())
    }

    pub fn settings(&self) -> RuntimeSettings {
        RuntimeSettings {
            model: self.model.clone(),
            depth_limit: self.depth_limit,
            max_steps: self.max_steps,
        }
    }

    /// Fresh agents with the built-in capabilities, and the product agent's id.
    pub fn build_runtime(&self, backend: Box<dyn ChatBackend>, floor_seed: u64) -> (Runtime, AgentId) {
        let registry = default_registry();
        let agents: Vec<Agent> = self
            .agents
            .iter()
            .map(|c| Agent::new(c.clone(), resolve_functions(c, &registry).capabilities))
            .collect();
        let pa = agents
            .iter()
            .position(|a| a.config.kind == AgentKind::Product)
            .expect("validated scenarios have a product agent");
        let rt = Runtime::new(agents, backend, self.settings(), floor_seed)
            .expect("validated scenarios have unique names and a positive depth limit");
        (rt, pa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    #[test]
    fn bundled_scenarios_load() {
        for (name, ops) in [("two_step", 2), ("four_step", 4)] {
            let s = Scenario::load(&fixtures().join(format!("{name}.json"))).unwrap();
            assert_eq!(s.expected_operations.len(), ops);
            assert_eq!(s.product_agent().name, "product-1");
            assert_eq!(s.product_agent().specification.as_deref(), Some(s.gcode.as_str()));
            assert_eq!(s.machines().len(), 3);
            assert!(s.user_instructions().contains("%358"));
            s.check_functions(&default_registry()).unwrap();
        }
    }

    fn minimal(ops: &str, extra_agent: &str) -> String {
        format!(
            r#"{{
              "name": "t",
              "product_instructions": "x",
              "gcode": "N10 G90\nN20 T4 M06\nN30 G01 X1",
              "agents": [{{"p": {{"kind": "product", "instructions": ""}},
                          "m": {{"kind": "resource", "instructions": "", "configuration": {{"tool_table": {{"contouring": 4}}}}}}
                          {extra_agent}}}],
              "expected_operations": {ops}
            }}"#
        )
    }

    #[test]
    fn validation() {
        let ok = Scenario::from_json(&minimal(r#"["contouring"]"#, ""), Path::new(".")).unwrap();
        assert_eq!(ok.backend, BackendSpec::Planner);
        let err = |text: String| Scenario::from_json(&text, Path::new(".")).unwrap_err().to_string();
        assert!(err(minimal("[]", "")).contains("non-empty"));
        assert!(err(minimal(r#"["drilling"]"#, "")).contains("no resource agent"));
        assert!(err(minimal(
            r#"["contouring"]"#,
            r#", "m2": {"kind": "resource", "instructions": "", "configuration": {"tool_table": {"contouring": 4}}}"#
        ))
        .contains("several machines"));
        assert!(err(minimal(
            r#"["drilling"]"#,
            r#", "d": {"kind": "resource", "instructions": "", "configuration": {"tool_table": {"drilling": 2}}}"#
        ))
        .contains("T2"));
        assert!(err(minimal(
            r#"["contouring"]"#,
            r#", "q": {"kind": "product", "instructions": ""}"#
        ))
        .contains("exactly one product"));
        assert!(err("{\"name\": 1}".into()).contains("line 1"));
    }

    #[test]
    fn backend_specs_parse() {
        let spec: BackendSpec = serde_json::from_str(
            r#"{"kind": "faulted", "calibrate": {"error_rate": 0.14, "mix": [0.43, 0.14, 0.43]}}"#,
        )
        .unwrap();
        assert!(spec.validate().is_ok());
        let spec: BackendSpec = serde_json::from_str(r#"{"kind": "faulted"}"#).unwrap();
        assert!(spec.validate().is_err());
        let spec: BackendSpec = serde_json::from_str(r#"{"kind": "remote", "model": "gpt-4"}"#).unwrap();
        assert_eq!(spec.label(), "remote");
    }
}
