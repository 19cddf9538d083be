//! Function-call tool registry.
//!
//! Six tools are exposed to every agent:
//!
//! | tool               | effect                                              |
//! |--------------------|-----------------------------------------------------|
//! | `read_file`        | read a workspace path, record the write ticket      |
//! | `write_file`       | optimistic-concurrency write of a workspace path    |
//! | `exec_python_file` | run a workspace file in the subprocess sandbox      |
//! | `input`            | feed a line to the caller's running subprocess      |
//! | `add_agent`        | recruit a subordinate agent                         |
//! | `TERMINATE`        | declare the agent's work finished                   |
//!
//! Schemas serialize with their parameters in declared order so the JSON
//! fixtures under `tests/fixtures/` stay byte-stable; [`parse`] recovers
//! structured calls from model text and [`exec`] dispatches them against
//! the runtime.

pub mod exec;
pub mod parse;
pub mod sandbox;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::sync::OnceLock;

pub const READ_FILE: &str = "read_file";
pub const WRITE_FILE: &str = "write_file";
pub const EXEC_PYTHON_FILE: &str = "exec_python_file";
pub const INPUT: &str = "input";
pub const ADD_AGENT: &str = "add_agent";
pub const TERMINATE: &str = "TERMINATE";

/// One string parameter of a tool. All declared parameters are required.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
}

/// Declarative description of one tool, serialized for model consumption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// Empty means the tool takes no arguments (and serializes without a
    /// `parameters` key).
    pub parameters: Vec<ParamSpec>,
}

impl ToolSchema {
    fn new(name: &str, description: &str, parameters: &[(&str, &str)]) -> Self {
        ToolSchema {
            name: name.to_string(),
            description: description.to_string(),
            parameters: parameters
                .iter()
                .map(|(n, d)| ParamSpec {
                    name: n.to_string(),
                    description: d.to_string(),
                })
                .collect(),
        }
    }
}

/// The full registry, in canonical order.
pub fn registry_schemas() -> &'static [ToolSchema] {
    static SCHEMAS: OnceLock<Vec<ToolSchema>> = OnceLock::new();
    SCHEMAS.get_or_init(|| {
        vec![
            ToolSchema::new(
                READ_FILE,
                "Read the content of a file.",
                &[("filename", "The filename to be read.")],
            ),
            ToolSchema::new(
                WRITE_FILE,
                "Write content to a file.",
                &[
                    ("filename", "The filename to be written."),
                    ("content", "The content to be written."),
                ],
            ),
            ToolSchema::new(
                EXEC_PYTHON_FILE,
                "Execute a Python file and get the result.",
                &[(
                    "filename",
                    "The filename of the Python file to be executed.",
                )],
            ),
            ToolSchema::new(
                INPUT,
                "Input a string to the running Python code.",
                &[("content", "The string to be input.")],
            ),
            ToolSchema::new(
                ADD_AGENT,
                "Recruit an agent as your subordinate.",
                &[
                    ("name", "Unique agent name."),
                    ("description", "Agent description."),
                ],
            ),
            ToolSchema::new(
                TERMINATE,
                "End the conversation when all tasks are complete.",
                &[],
            ),
        ]
    })
}

/// Look up a schema by tool name.
pub fn schema(name: &str) -> Option<&'static ToolSchema> {
    registry_schemas().iter().find(|s| s.name == name)
}

/// One structured call recovered from model text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub tool: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, serde_json::Value>,
}

impl FunctionCall {
    /// Fetch a declared string argument.
    pub fn arg(&self, name: &str) -> Option<&str> {
        self.arguments.get(name).and_then(|v| v.as_str())
    }

    /// Stable fingerprint used for repetition detection.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}({})",
            self.tool,
            serde_json::to_string(&self.arguments).unwrap_or_default()
        )
    }
}

/// A skipped block and why it was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseWarning {
    pub reason: String,
    pub snippet: String,
}

/// What a tool execution looked like from the agent's side. Failures are
/// observations too; the agent reads them and reacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolObservation {
    pub tool: String,
    pub ok: bool,
    pub output: String,
}

impl ToolObservation {
    pub fn ok(tool: &str, output: impl Into<String>) -> Self {
        ToolObservation {
            tool: tool.to_string(),
            ok: true,
            output: output.into(),
        }
    }

    pub fn err(tool: &str, output: impl Into<String>) -> Self {
        ToolObservation {
            tool: tool.to_string(),
            ok: false,
            output: output.into(),
        }
    }

    /// Rendered form fed back into the model context.
    pub fn render(&self) -> String {
        let status = if self.ok { "ok" } else { "error" };
        format!("[{} {}]\n{}", self.tool, status, self.output)
    }
}

// ---------------------------------------------------------------------------
// Canonical JSON shape
// ---------------------------------------------------------------------------
//
// {"name": ..., "description": ..., "parameters": {"type": "object",
//  "properties": {<param>: {"type": "string", "description": ...}, ...}}}
//
// Parameter order is the declared order; zero-parameter tools omit the
// `parameters` key entirely.

impl Serialize for ToolSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let entries = if self.parameters.is_empty() { 2 } else { 3 };
        let mut map = serializer.serialize_map(Some(entries))?;
        map.serialize_entry("name", &self.name)?;
        map.serialize_entry("description", &self.description)?;
        if !self.parameters.is_empty() {
            map.serialize_entry("parameters", &ParametersShape(&self.parameters))?;
        }
        map.end()
    }
}

struct ParametersShape<'a>(&'a [ParamSpec]);

impl Serialize for ParametersShape<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("type", "object")?;
        map.serialize_entry("properties", &PropertiesShape(self.0))?;
        map.end()
    }
}

struct PropertiesShape<'a>(&'a [ParamSpec]);

impl Serialize for PropertiesShape<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for param in self.0 {
            map.serialize_entry(&param.name, &PropertyShape(&param.description))?;
        }
        map.end()
    }
}

struct PropertyShape<'a>(&'a str);

impl Serialize for PropertyShape<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("type", "string")?;
        map.serialize_entry("description", self.0)?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for ToolSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_map(SchemaVisitor)
    }
}

struct SchemaVisitor;

impl<'de> Visitor<'de> for SchemaVisitor {
    type Value = ToolSchema;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a tool schema object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
        let mut name = None;
        let mut description = None;
        let mut parameters = Vec::new();
        while let Some(key) = access.next_key::<String>()? {
            match key.as_str() {
                "name" => name = Some(access.next_value::<String>()?),
                "description" => description = Some(access.next_value::<String>()?),
                "parameters" => parameters = access.next_value::<ParametersOrdered>()?.0,
                _ => {
                    access.next_value::<serde_json::Value>()?;
                }
            }
        }
        Ok(ToolSchema {
            name: name.ok_or_else(|| serde::de::Error::missing_field("name"))?,
            description: description
                .ok_or_else(|| serde::de::Error::missing_field("description"))?,
            parameters,
        })
    }
}

struct ParametersOrdered(Vec<ParamSpec>);

impl<'de> Deserialize<'de> for ParametersOrdered {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ParametersOrdered;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a parameters object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut params = Vec::new();
                while let Some(key) = access.next_key::<String>()? {
                    if key == "properties" {
                        params = access.next_value::<PropsOrdered>()?.0;
                    } else {
                        access.next_value::<serde_json::Value>()?;
                    }
                }
                Ok(ParametersOrdered(params))
            }
        }
        deserializer.deserialize_map(V)
    }
}

struct PropsOrdered(Vec<ParamSpec>);

impl<'de> Deserialize<'de> for PropsOrdered {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = PropsOrdered;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a properties object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                #[derive(Deserialize)]
                struct Prop {
                    #[serde(default)]
                    description: String,
                }
                let mut params = Vec::new();
                // MapAccess yields entries in document order; collect as-is
                while let Some((name, prop)) = access.next_entry::<String, Prop>()? {
                    params.push(ParamSpec {
                        name,
                        description: prop.description,
                    });
                }
                Ok(PropsOrdered(params))
            }
        }
        deserializer.deserialize_map(V)
    }
}
