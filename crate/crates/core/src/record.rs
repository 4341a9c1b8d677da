//! Resource entities and their registration records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::canonical;
use crate::error::Error;
use crate::version::Version;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Prompt,
    Agent,
    Tool,
    Environment,
    Memory,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Prompt,
        EntityKind::Agent,
        EntityKind::Tool,
        EntityKind::Environment,
        EntityKind::Memory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Prompt => "prompt",
            EntityKind::Agent => "agent",
            EntityKind::Tool => "tool",
            EntityKind::Environment => "environment",
            EntityKind::Memory => "memory",
        }
    }

    /// Capitalized form used in contract headings.
    pub fn title(self) -> &'static str {
        match self {
            EntityKind::Prompt => "Prompt",
            EntityKind::Agent => "Agent",
            EntityKind::Tool => "Tool",
            EntityKind::Environment => "Environment",
            EntityKind::Memory => "Memory",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "prompt" => Ok(EntityKind::Prompt),
            "agent" => Ok(EntityKind::Agent),
            "tool" => Ok(EntityKind::Tool),
            "environment" | "env" => Ok(EntityKind::Environment),
            "memory" | "mem" => Ok(EntityKind::Memory),
            other => Err(Error::InvalidRecord(format!("unknown entity kind '{other}'"))),
        }
    }
}

/// Executable behavior of an entity: what `run` does with an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mapping {
    /// Template text; `{{field}}` placeholders are filled from the run input.
    Prompt { prompt_text: String },
    /// Script source lives in the record's `impl_descriptor`.
    Script {
        #[serde(default = "default_language")]
        language: String,
    },
    /// Tool-calling agent composed from prompt and tool resources.
    Agent {
        #[serde(default)]
        prompts: Vec<String>,
        #[serde(default)]
        tools: Vec<String>,
        #[serde(default)]
        model: String,
        #[serde(default = "default_max_steps")]
        max_steps: u32,
    },
    /// Key-value store seeded from `payload`.
    Memory {
        #[serde(default)]
        payload: Map<String, Value>,
    },
    /// A tool that forwards its input to an agent resource.
    AgentProxy { agent: String },
}

fn default_language() -> String {
    "rhai".to_string()
}

fn default_max_steps() -> u32 {
    4
}

impl Mapping {
    pub fn script() -> Self {
        Mapping::Script {
            language: default_language(),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Mapping::Prompt { .. } => "prompt",
            Mapping::Script { .. } => "script",
            Mapping::Agent { .. } => "agent",
            Mapping::Memory { .. } => "memory",
            Mapping::AgentProxy { .. } => "agent_proxy",
        }
    }

    /// Whether an entity of `kind` may carry this mapping.
    pub fn allowed_for(&self, kind: EntityKind) -> bool {
        matches!(
            (kind, self),
            (EntityKind::Prompt, Mapping::Prompt { .. })
                | (EntityKind::Tool, Mapping::Script { .. })
                | (EntityKind::Tool, Mapping::AgentProxy { .. })
                | (EntityKind::Agent, Mapping::Agent { .. })
                | (EntityKind::Environment, Mapping::Script { .. })
                | (EntityKind::Memory, Mapping::Memory { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceEntity {
    pub kind: EntityKind,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub mapping: Mapping,
    #[serde(default)]
    pub trainable: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportForm {
    FunctionCallingSchema,
    NaturalLanguageText,
    StructuredArgumentSchema,
}

/// A representation through which a model interacts with the resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedRepresentation {
    pub form: ExportForm,
    pub body: String,
}

impl ExportedRepresentation {
    pub fn new(form: ExportForm, body: impl Into<String>) -> Self {
        ExportedRepresentation {
            form,
            body: body.into(),
        }
    }
}

/// The unit of registration, versioning, and snapshotting.
///
/// On disk the entity fields sit at the top level next to the record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RecordWire", into = "RecordWire")]
pub struct RegistrationRecord {
    pub entity: ResourceEntity,
    /// Assigned by the registry; may be omitted when registering.
    pub version: Option<Version>,
    pub impl_descriptor: String,
    pub init_params: BTreeMap<String, Value>,
    pub exports: Vec<ExportedRepresentation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    kind: EntityKind,
    name: String,
    #[serde(default)]
    description: String,
    mapping: Mapping,
    #[serde(default)]
    trainable: bool,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<Version>,
    #[serde(default)]
    impl_descriptor: String,
    #[serde(default)]
    init_params: BTreeMap<String, Value>,
    #[serde(default)]
    exports: Vec<ExportedRepresentation>,
}

impl From<RecordWire> for RegistrationRecord {
    fn from(w: RecordWire) -> Self {
        RegistrationRecord {
            entity: ResourceEntity {
                kind: w.kind,
                name: w.name,
                description: w.description,
                mapping: w.mapping,
                trainable: w.trainable,
                metadata: w.metadata,
            },
            version: w.version,
            impl_descriptor: w.impl_descriptor,
            init_params: w.init_params,
            exports: w.exports,
        }
    }
}

impl From<RegistrationRecord> for RecordWire {
    fn from(r: RegistrationRecord) -> Self {
        RecordWire {
            kind: r.entity.kind,
            name: r.entity.name,
            description: r.entity.description,
            mapping: r.entity.mapping,
            trainable: r.entity.trainable,
            metadata: r.entity.metadata,
            version: r.version,
            impl_descriptor: r.impl_descriptor,
            init_params: r.init_params,
            exports: r.exports,
        }
    }
}

impl RegistrationRecord {
    pub fn new(kind: EntityKind, name: impl Into<String>, description: impl Into<String>, mapping: Mapping) -> Self {
        RegistrationRecord {
            entity: ResourceEntity {
                kind,
                name: name.into(),
                description: description.into(),
                mapping,
                trainable: false,
                metadata: BTreeMap::new(),
            },
            version: None,
            impl_descriptor: String::new(),
            init_params: BTreeMap::new(),
            exports: Vec::new(),
        }
    }

    pub fn prompt(name: impl Into<String>, description: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(
            EntityKind::Prompt,
            name,
            description,
            Mapping::Prompt {
                prompt_text: text.into(),
            },
        )
    }

    pub fn tool(name: impl Into<String>, description: impl Into<String>, source: impl Into<String>) -> Self {
        Self::new(EntityKind::Tool, name, description, Mapping::script()).with_impl(source)
    }

    pub fn environment(name: impl Into<String>, description: impl Into<String>, source: impl Into<String>) -> Self {
        Self::new(EntityKind::Environment, name, description, Mapping::script()).with_impl(source)
    }

    pub fn memory(name: impl Into<String>, description: impl Into<String>, payload: Map<String, Value>) -> Self {
        Self::new(EntityKind::Memory, name, description, Mapping::Memory { payload })
    }

    pub fn agent(
        name: impl Into<String>,
        description: impl Into<String>,
        prompts: &[&str],
        tools: &[&str],
        model: impl Into<String>,
    ) -> Self {
        Self::new(
            EntityKind::Agent,
            name,
            description,
            Mapping::Agent {
                prompts: prompts.iter().map(|s| s.to_string()).collect(),
                tools: tools.iter().map(|s| s.to_string()).collect(),
                model: model.into(),
                max_steps: default_max_steps(),
            },
        )
    }

    pub fn trainable(mut self, trainable: bool) -> Self {
        self.entity.trainable = trainable;
        self
    }

    pub fn with_impl(mut self, source: impl Into<String>) -> Self {
        self.impl_descriptor = source.into();
        self
    }

    pub fn with_version(mut self, version: Version) -> Self {
        self.version = Some(version);
        self
    }

    pub fn with_export(mut self, form: ExportForm, body: impl Into<String>) -> Self {
        self.exports.push(ExportedRepresentation::new(form, body));
        self
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: Value) -> Self {
        self.entity.metadata.insert(key.into(), value);
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: Value) -> Self {
        self.init_params.insert(key.into(), value);
        self
    }

    pub fn name(&self) -> &str {
        &self.entity.name
    }

    pub fn kind(&self) -> EntityKind {
        self.entity.kind
    }

    pub fn validate(&self) -> Result<(), Error> {
        let name = &self.entity.name;
        if name.is_empty() {
            return Err(Error::InvalidRecord("name must be non-empty".into()));
        }
        if name.chars().any(|c| c.is_whitespace() || c == '#' || c.is_control()) {
            return Err(Error::InvalidRecord(format!(
                "name '{name}' must not contain whitespace or '#'"
            )));
        }
        if !self.entity.mapping.allowed_for(self.entity.kind) {
            return Err(Error::InvalidRecord(format!(
                "mapping '{}' is not valid for kind {}",
                self.entity.mapping.type_name(),
                self.entity.kind
            )));
        }
        if let Some(e) = self.exports.iter().find(|e| e.body.trim().is_empty()) {
            return Err(Error::InvalidRecord(format!(
                "exported representation {:?} has an empty body",
                e.form
            )));
        }
        Ok(())
    }

    /// Record content without its version, with entity fields nested under
    /// `entity`. Snapshots hash this view and diffs report paths into it.
    pub fn content(&self) -> Value {
        canonical::sort_keys(&serde_json::json!({
            "entity": self.entity,
            "impl_descriptor": self.impl_descriptor,
            "init_params": self.init_params,
            "exports": self.exports,
        }))
    }

    pub fn content_hash(&self) -> String {
        canonical::hash_value(&self.content())
    }

    /// Concatenated text used for lexical retrieval.
    pub fn search_text(&self) -> String {
        let mut text = format!("{} {}", self.entity.name, self.entity.description);
        for e in &self.exports {
            text.push(' ');
            text.push_str(&e.body);
        }
        text
    }

    pub fn export(&self, form: ExportForm) -> Option<&ExportedRepresentation> {
        self.exports.iter().find(|e| e.form == form)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn wire_layout_is_flat() {
        let r = RegistrationRecord::prompt("solver", "solves", "Answer.").with_version(Version::INITIAL);
        let v = canonical::to_value(&r);
        assert_eq!(v["name"], "solver");
        assert_eq!(v["mapping"]["prompt_text"], "Answer.");
        assert_eq!(v["mapping"]["type"], "prompt");
        assert_eq!(v["version"], "0.1.0");
        let back: RegistrationRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        let content = r.content();
        assert!(content.get("version").is_none());
        assert_eq!(content["entity"]["mapping"]["prompt_text"], "Answer.");
    }

    #[test]
    fn validation() {
        assert!(RegistrationRecord::prompt("", "", "x").validate().is_err());
        assert!(RegistrationRecord::prompt("a b", "", "x").validate().is_err());
        let wrong = RegistrationRecord::new(EntityKind::Prompt, "p", "", Mapping::script());
        assert!(matches!(wrong.validate(), Err(Error::InvalidRecord(_))));
        let empty_export = RegistrationRecord::tool("t", "", "input").with_export(ExportForm::NaturalLanguageText, " ");
        assert!(empty_export.validate().is_err());
        assert!(RegistrationRecord::tool("t", "", "input").validate().is_ok());
    }

    #[test]
    fn bad_version_grammar_rejected_on_decode() {
        let doc = json!({
            "kind": "prompt", "name": "p", "mapping": {"type": "prompt", "prompt_text": "x"},
            "version": "1.x"
        });
        assert!(serde_json::from_value::<RegistrationRecord>(doc).is_err());
        let unknown = json!({
            "kind": "prompt", "name": "p", "mapping": {"type": "prompt", "prompt_text": "x"},
            "colour": "red"
        });
        assert!(serde_json::from_value::<RegistrationRecord>(unknown).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Tool".parse::<EntityKind>().unwrap(), EntityKind::Tool);
        assert_eq!("env".parse::<EntityKind>().unwrap(), EntityKind::Environment);
        assert!("widget".parse::<EntityKind>().is_err());
    }
}
