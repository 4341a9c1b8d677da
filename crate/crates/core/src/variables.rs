//! Evolvable variables: the optimization view over resource fields.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::canonical;
use crate::error::{Error, Result};
use crate::record::{EntityKind, Mapping, RegistrationRecord};

/// Id of the execution output artifact.
pub const OUTPUT_ID: &str = "output";

pub const FIELD_PROMPT_TEXT: &str = "entity.mapping.prompt_text";
pub const FIELD_IMPL: &str = "impl_descriptor";
pub const FIELD_PAYLOAD: &str = "entity.mapping.payload";

/// Rendered as `<kind>:<name>#<field>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldRef {
    pub kind: EntityKind,
    pub name: String,
    pub field: String,
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}#{}", self.kind, self.name, self.field)
    }
}

impl FromStr for FieldRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownVariable(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (name, field) = rest.split_once('#').ok_or_else(bad)?;
        if name.is_empty() || field.is_empty() {
            return Err(bad());
        }
        Ok(FieldRef {
            kind: kind.parse().map_err(|_| bad())?,
            name: name.to_string(),
            field: field.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Origin {
    Resource {
        kind: EntityKind,
        name: String,
        field: String,
    },
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolvableVariable {
    pub id: String,
    pub origin: Origin,
    pub value: String,
    pub learnable: bool,
    pub role_description: String,
}

impl EvolvableVariable {
    pub fn output(value: impl Into<String>) -> Self {
        EvolvableVariable {
            id: OUTPUT_ID.to_string(),
            origin: Origin::Output,
            value: value.into(),
            learnable: false,
            role_description: "final answer produced by the agent system".to_string(),
        }
    }

    pub fn is_output(&self) -> bool {
        self.origin == Origin::Output
    }

    pub fn field_ref(&self) -> Option<FieldRef> {
        match &self.origin {
            Origin::Resource { kind, name, field } => Some(FieldRef {
                kind: *kind,
                name: name.clone(),
                field: field.clone(),
            }),
            Origin::Output => None,
        }
    }
}

/// One variable per evolvable field of the record; agents and agent proxies have none of their own.
pub fn record_variables(record: &RegistrationRecord) -> Vec<EvolvableVariable> {
    let kind = record.kind();
    let name = record.name();
    let (field, value, role) = match &record.entity.mapping {
        Mapping::Prompt { prompt_text } => (FIELD_PROMPT_TEXT, prompt_text.clone(), "prompt text"),
        Mapping::Script { .. } => (FIELD_IMPL, record.impl_descriptor.clone(), "script source"),
        Mapping::Memory { payload } => (
            FIELD_PAYLOAD,
            canonical::to_string(payload),
            "memory payload as a JSON object",
        ),
        Mapping::Agent { .. } | Mapping::AgentProxy { .. } => return Vec::new(),
    };
    let mut role_description = format!("{role} of {kind} '{name}'");
    if !record.entity.description.is_empty() {
        role_description.push_str(": ");
        role_description.push_str(&record.entity.description);
    }
    vec![EvolvableVariable {
        id: FieldRef {
            kind,
            name: name.to_string(),
            field: field.to_string(),
        }
        .to_string(),
        origin: Origin::Resource {
            kind,
            name: name.to_string(),
            field: field.to_string(),
        },
        value,
        learnable: record.entity.trainable,
        role_description,
    }]
}

/// Write `value` into the named field. Returns `UnknownVariable` when the record has no such field.
pub fn apply_field(record: &mut RegistrationRecord, field: &str, value: &str) -> Result<()> {
    let id = format!("{}:{}#{field}", record.kind(), record.name());
    match (&mut record.entity.mapping, field) {
        (Mapping::Prompt { prompt_text }, FIELD_PROMPT_TEXT) => {
            *prompt_text = value.to_string();
        }
        (Mapping::Script { .. }, FIELD_IMPL) => {
            record.impl_descriptor = value.to_string();
        }
        (Mapping::Memory { payload }, FIELD_PAYLOAD) => {
            *payload = parse_payload(value)?;
        }
        _ => return Err(Error::UnknownVariable(id)),
    }
    Ok(())
}

pub(crate) fn parse_payload(text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::InvalidDelta("memory payload must be a JSON object".into())),
        Err(e) => Err(Error::InvalidDelta(format!("memory payload is not JSON: {e}"))),
    }
}
