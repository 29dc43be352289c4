//! Agent definitions: loading, capability resolution, and system prompts.
//!
//! A configuration document is a JSON object keyed by agent name:
//!
//! ```json
//! {
//!   "Milling1": {
//!     "kind": "resource",
//!     "annotation": "Milling machine for contouring and counterboring.",
//!     "instructions": "Your machine name is Milling1. The tool number for contouring is T4.",
//!     "functions": ["execute_process", "query_history"],
//!     "configuration": { "tool_table": { "contouring": 4 } }
//!   }
//! }
//! ```
//!
//! `specification` (Product agents only) is either inline G-code or
//! `{"file": "path"}`, resolved relative to the document's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::value::RawValue;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::agents::{Agent, CapabilityError, CapabilityReply, Runtime};
use crate::llm::FunctionSchema;
use crate::protocol::PREAMBLE;
use crate::shopfloor::MachineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Product,
    Resource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub name: String,
    pub kind: AgentKind,
    pub annotation: String,
    pub instructions: String,
    pub function_names: Vec<String>,
    pub specification: Option<String>,
    pub machine_configuration: Option<MachineConfig>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}{message}", agent_prefix(.agent))]
    Validation { agent: Option<String>, message: String },
    #[error("cannot read {}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error("agent `{agent}` requests unknown function `{function}`")]
    UnknownFunction { agent: String, function: String },
    #[error("document {index}: {source}")]
    Document {
        index: usize,
        #[source]
        source: Box<ConfigError>,
    },
}

fn agent_prefix(agent: &Option<String>) -> String {
    agent.as_ref().map(|a| format!("agent `{a}`: ")).unwrap_or_default()
}

impl ConfigError {
    fn invalid(agent: &str, message: impl Into<String>) -> Self {
        Self::Validation {
            agent: Some(agent.to_string()),
            message: message.into(),
        }
    }

    fn parse(err: serde_json::Error) -> Self {
        Self::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Top-level entries in document order, duplicates kept.
struct Entries(Vec<(String, Box<RawValue>)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping agent names to agent definitions")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry::<String, Box<RawValue>>()? {
                    out.push(entry);
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(EntriesVisitor)
    }
}

const KNOWN_FIELDS: &[&str] = &[
    "kind",
    "annotation",
    "instructions",
    "functions",
    "specification",
    "configuration",
];

/// Parses one configuration document. Relative specification paths are
/// resolved against the current directory.
pub fn load_agent_configs(document: &str) -> Result<Vec<AgentConfig>, ConfigError> {
    load_agent_configs_in(document, None)
}

/// Like [`load_agent_configs`], resolving `{"file": ...}` specifications
/// against `base_dir`.
pub fn load_agent_configs_in(document: &str, base_dir: Option<&Path>) -> Result<Vec<AgentConfig>, ConfigError> {
    let Entries(entries) = serde_json::from_str(document).map_err(ConfigError::parse)?;
    let mut seen = HashSet::new();
    let mut configs = Vec::with_capacity(entries.len());
    for (name, data) in entries {
        if !seen.insert(name.clone()) {
            return Err(ConfigError::invalid(&name, "duplicate agent name"));
        }
        configs.push(agent_from_raw(&name, &data, base_dir)?);
    }
    Ok(configs)
}

fn agent_from_raw(name: &str, data: &RawValue, base_dir: Option<&Path>) -> Result<AgentConfig, ConfigError> {
    if name.trim().is_empty() {
        return Err(ConfigError::Validation {
            agent: None,
            message: "agent names must be non-empty".into(),
        });
    }
    // fields stay raw so machine tables keep their document order
    let raw: IndexMap<String, Box<RawValue>> =
        serde_json::from_str(data.get()).map_err(|_| ConfigError::invalid(name, "definition must be a JSON object"))?;
    let obj: Map<String, Value> = raw
        .iter()
        .filter(|(k, _)| k.as_str() != "configuration")
        .map(|(k, v)| (k.clone(), serde_json::from_str(v.get()).expect("raw values reparse")))
        .collect();
    for key in raw.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            tracing::warn!(agent = name, field = %key, "ignoring unknown configuration field");
        }
    }

    let kind = match obj.get("kind").and_then(Value::as_str) {
        Some(k) if k.eq_ignore_ascii_case("product") => AgentKind::Product,
        Some(k) if k.eq_ignore_ascii_case("resource") => AgentKind::Resource,
        Some(k) => return Err(ConfigError::invalid(name, format!("unknown kind `{k}`"))),
        None => return Err(ConfigError::invalid(name, "missing required field `kind`")),
    };
    let instructions = match obj.get("instructions") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ConfigError::invalid(name, "`instructions` must be a string")),
        None => return Err(ConfigError::invalid(name, "missing required field `instructions`")),
    };
    let annotation = match obj.get("annotation") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ConfigError::invalid(name, "`annotation` must be a string")),
    };

    let mut function_names = Vec::new();
    if let Some(functions) = obj.get("functions") {
        let list = functions
            .as_array()
            .ok_or_else(|| ConfigError::invalid(name, "`functions` must be an array of strings"))?;
        for f in list {
            let f = f
                .as_str()
                .ok_or_else(|| ConfigError::invalid(name, "`functions` must be an array of strings"))?;
            if function_names.iter().any(|existing| existing == f) {
                return Err(ConfigError::invalid(name, format!("function `{f}` listed twice")));
            }
            function_names.push(f.to_string());
        }
    }

    let specification = match obj.get("specification") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Object(o)) => {
            let file = o
                .get("file")
                .and_then(Value::as_str)
                .ok_or_else(|| ConfigError::invalid(name, "`specification` object needs a `file` string"))?;
            let path = match base_dir {
                Some(dir) => dir.join(file),
                None => PathBuf::from(file),
            };
            Some(std::fs::read_to_string(&path).map_err(|e| ConfigError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?)
        }
        Some(_) => {
            return Err(ConfigError::invalid(
                name,
                "`specification` must be a string or {\"file\": path}",
            ))
        }
    };

    let machine_configuration = match raw.get("configuration").map(|v| v.get()) {
        None | Some("null") => None,
        Some(v) => {
            let m: MachineConfig =
                serde_json::from_str(v).map_err(|e| ConfigError::invalid(name, format!("configuration: {e}")))?;
            m.validate()
                .map_err(|e| ConfigError::invalid(name, format!("configuration: {e}")))?;
            Some(m)
        }
    };

    let config = AgentConfig {
        name: name.to_string(),
        kind,
        annotation,
        instructions,
        function_names,
        specification,
        machine_configuration,
    };
    config.validate()?;
    Ok(config)
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.kind {
            AgentKind::Product if self.machine_configuration.is_some() => Err(ConfigError::invalid(
                &self.name,
                "product agents cannot carry a machine configuration",
            )),
            AgentKind::Resource if self.specification.is_some() => Err(ConfigError::invalid(
                &self.name,
                "resource agents cannot carry a product specification",
            )),
            _ => Ok(()),
        }
    }

    fn entry(&self) -> DocumentEntry<'_> {
        DocumentEntry {
            kind: self.kind,
            annotation: &self.annotation,
            instructions: &self.instructions,
            functions: &self.function_names,
            specification: self.specification.as_deref(),
            configuration: self.machine_configuration.as_ref(),
        }
    }

    /// The document entry for this agent, with the specification inlined.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self.entry()).expect("configs serialize")
    }
}

#[derive(Serialize)]
struct DocumentEntry<'a> {
    kind: AgentKind,
    annotation: &'a str,
    instructions: &'a str,
    functions: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    specification: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    configuration: Option<&'a MachineConfig>,
}

/// Serializes configs back into a single document, preserving order.
pub fn to_document(configs: &[AgentConfig]) -> String {
    let mut out = String::from("{");
    for (i, c) in configs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&serde_json::to_string(&c.name).expect("string serializes"));
        out.push(':');
        out.push_str(&serde_json::to_string(&c.entry()).expect("configs serialize"));
    }
    out.push('}');
    out
}

/// Executable part of a capability: runs against the shared runtime on
/// behalf of the calling agent.
pub type Handler =
    Arc<dyn Fn(&mut Runtime, usize, &Map<String, Value>) -> Result<CapabilityReply, CapabilityError> + Send + Sync>;

#[derive(Clone)]
pub struct Capability {
    pub schema: FunctionSchema,
    pub handler: Handler,
}

impl fmt::Debug for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Capability")
            .field("name", &self.schema.name)
            .finish_non_exhaustive()
    }
}

/// Named capabilities agents may be granted.
#[derive(Clone, Debug, Default)]
pub struct CapabilityRegistry {
    entries: IndexMap<String, Capability>,
}

impl CapabilityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a capability under its schema name, replacing any previous entry.
    pub fn register(&mut self, schema: FunctionSchema, handler: Handler) -> Result<(), String> {
        schema.validate()?;
        self.entries.insert(schema.name.clone(), Capability { schema, handler });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Capability> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Result of looking up an agent's function names.
#[derive(Debug, Clone)]
pub struct ResolvedFunctions {
    pub capabilities: Vec<Capability>,
    /// Requested names with no registry entry, in request order.
    pub unknown: Vec<String>,
}

/// Looks up each of the agent's function names; unknown names are skipped
/// with a warning.
pub fn resolve_functions(config: &AgentConfig, registry: &CapabilityRegistry) -> ResolvedFunctions {
    let mut capabilities = Vec::new();
    let mut unknown = Vec::new();
    for name in &config.function_names {
        match registry.get(name) {
            Some(cap) => capabilities.push(cap.clone()),
            None => {
                tracing::warn!(agent = %config.name, function = %name, "skipping unknown function");
                unknown.push(name.clone());
            }
        }
    }
    ResolvedFunctions { capabilities, unknown }
}

/// Cooperative preamble, a blank line, then the agent's instructions.
pub fn build_system_prompt(config: &AgentConfig) -> String {
    if config.instructions.is_empty() {
        PREAMBLE.to_string()
    } else {
        format!("{PREAMBLE}\n\n{}", config.instructions)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CreateOptions {
    /// Reject unknown function names instead of skipping them.
    pub strict_functions: bool,
}

/// A configuration document together with the directory its relative
/// specification paths are resolved against.
#[derive(Debug, Clone, Copy)]
pub struct AgentDocument<'a> {
    pub text: &'a str,
    pub base_dir: Option<&'a Path>,
}

impl<'a> From<&'a str> for AgentDocument<'a> {
    fn from(text: &'a str) -> Self {
        Self { text, base_dir: None }
    }
}

/// Builds runtime agents from several documents, in document order.
pub fn create_agents<'a>(
    documents: impl IntoIterator<Item = impl Into<AgentDocument<'a>>>,
    registry: &CapabilityRegistry,
    options: CreateOptions,
) -> Result<Vec<Agent>, ConfigError> {
    let mut agents = Vec::new();
    let mut names = HashSet::new();
    for (index, doc) in documents.into_iter().enumerate() {
        let doc = doc.into();
        let tag = |source| ConfigError::Document {
            index,
            source: Box::new(source),
        };
        for config in load_agent_configs_in(doc.text, doc.base_dir).map_err(tag)? {
            if !names.insert(config.name.clone()) {
                return Err(tag(ConfigError::invalid(
                    &config.name,
                    "duplicate agent name across documents",
                )));
            }
            let resolved = resolve_functions(&config, registry);
            if options.strict_functions {
                if let Some(function) = resolved.unknown.first() {
                    return Err(tag(ConfigError::UnknownFunction {
                        agent: config.name.clone(),
                        function: function.clone(),
                    }));
                }
            }
            agents.push(Agent::new(config, resolved.capabilities));
        }
    }
    Ok(agents)
}
