//! Markdown resource contracts.
//!
//! Layout:
//!
//! ```text
//! # Tool Contract
//!
//! ## adder (v0.1.0)
//!
//! **Description**
//!
//! Adds two integers.
//!
//! **Arguments**
//!
//! - a: integer — first addend
//!
//! **Preconditions**
//!
//! _None._
//!
//! **Constraints**
//!
//! - pure function
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::record::{EntityKind, ExportForm, RegistrationRecord};
use crate::version::Version;

const NONE_MARKER: &str = "_None._";
const ARG_SEPARATOR: &str = " — ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractSection {
    pub name: String,
    pub version: Version,
    pub description: String,
    pub arguments: Vec<Argument>,
    pub preconditions: Vec<String>,
    pub constraints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub kind: EntityKind,
    pub sections: Vec<ContractSection>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::String(s)) => vec![one_line(s)],
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => one_line(s),
                other => other.to_string(),
            })
            .filter(|s| !s.is_empty())
            .collect(),
        _ => Vec::new(),
    }
}

fn arg_from_json(name: &str, spec: &Value) -> Argument {
    Argument {
        name: name.to_string(),
        ty: one_line(spec.get("type").and_then(Value::as_str).unwrap_or("any")),
        description: one_line(spec.get("description").and_then(Value::as_str).unwrap_or("")),
    }
}

/// Arguments come from `metadata.arguments` (a list of `{name, type, description}`)
/// or else from the properties of a function-calling schema export.
fn arguments_of(record: &RegistrationRecord) -> Vec<Argument> {
    if let Some(Value::Array(args)) = record.entity.metadata.get("arguments") {
        return args
            .iter()
            .filter_map(|a| a.get("name").and_then(Value::as_str).map(|n| arg_from_json(n, a)))
            .collect();
    }
    let Some(export) = record.export(ExportForm::FunctionCallingSchema) else {
        return Vec::new();
    };
    let Ok(schema) = serde_json::from_str::<Value>(&export.body) else {
        return Vec::new();
    };
    let props = schema
        .pointer("/parameters/properties")
        .or_else(|| schema.get("properties"))
        .and_then(Value::as_object);
    props
        .map(|p| p.iter().map(|(n, spec)| arg_from_json(n, spec)).collect())
        .unwrap_or_default()
}

impl ContractSection {
    pub fn from_record(record: &RegistrationRecord) -> Self {
        let meta = &record.entity.metadata;
        ContractSection {
            name: record.name().to_string(),
            version: record.version.unwrap_or(Version::INITIAL),
            description: record.entity.description.trim().to_string(),
            arguments: arguments_of(record),
            preconditions: string_list(meta.get("preconditions")),
            constraints: string_list(meta.get("constraints")),
        }
    }
}

fn push_list(out: &mut String, items: &[String]) {
    if items.is_empty() {
        out.push_str(NONE_MARKER);
        out.push('\n');
    }
    for item in items {
        out.push_str("- ");
        out.push_str(item);
        out.push('\n');
    }
}

impl Contract {
    pub fn render(&self) -> String {
        let mut out = format!("# {} Contract\n", self.kind.title());
        for s in &self.sections {
            out.push_str(&format!("\n## {} (v{})\n\n**Description**\n\n", s.name, s.version));
            out.push_str(if s.description.is_empty() { NONE_MARKER } else { &s.description });
            out.push_str("\n\n**Arguments**\n\n");
            if s.arguments.is_empty() {
                out.push_str(NONE_MARKER);
                out.push('\n');
            }
            for a in &s.arguments {
                out.push_str(&format!("- {}: {}{ARG_SEPARATOR}{}\n", a.name, a.ty, a.description));
            }
            out.push_str("\n**Preconditions**\n\n");
            push_list(&mut out, &s.preconditions);
            out.push_str("\n**Constraints**\n\n");
            push_list(&mut out, &s.constraints);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Contract> {
        let err = |line: usize, msg: &str| Error::ParseError(format!("contract line {}: {msg}", line + 1));
        let lines: Vec<&str> = text.lines().collect();
        let mut i = 0;
        while i < lines.len() && lines[i].trim().is_empty() {
            i += 1;
        }
        let title = lines.get(i).ok_or_else(|| err(i, "missing title"))?;
        let kind_title = title
            .strip_prefix("# ")
            .and_then(|t| t.strip_suffix(" Contract"))
            .ok_or_else(|| err(i, "expected '# <Kind> Contract'"))?;
        let kind: EntityKind = kind_title.parse().map_err(|_| err(i, "unknown kind"))?;
        i += 1;

        // Group lines into (heading index, body lines) per section.
        let mut sections = Vec::new();
        let mut current: Option<(usize, Vec<(usize, &str)>)> = None;
        for (n, line) in lines.iter().enumerate().skip(i) {
            if line.starts_with("## ") {
                if let Some(c) = current.take() {
                    sections.push(c);
                }
                current = Some((n, Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push((n, *line));
            } else if !line.trim().is_empty() {
                return Err(err(n, "text before first section"));
            }
        }
        sections.extend(current);

        let parsed = sections
            .into_iter()
            .map(|(n, body)| parse_section(lines[n], n, &body))
            .collect::<Result<Vec<_>>>()?;
        Ok(Contract { kind, sections: parsed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let text = self.render();
        std::fs::write(path, &text).map_err(|e| Error::path(path, e))?;
        Ok(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Contract> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Contract::parse(&text)
    }
}

const BLOCKS: [&str; 4] = ["**Description**", "**Arguments**", "**Preconditions**", "**Constraints**"];

fn parse_section(heading: &str, n: usize, body: &[(usize, &str)]) -> Result<ContractSection> {
    let err = |line: usize, msg: String| Error::ParseError(format!("contract line {}: {msg}", line + 1));
    let head = heading.trim_start_matches("## ");
    let (name, rest) = head
        .rsplit_once(" (v")
        .ok_or_else(|| err(n, "expected '## <name> (v<version>)'".into()))?;
    let version_text = rest
        .strip_suffix(')')
        .ok_or_else(|| err(n, "unterminated version".into()))?;
    let version = Version::parse(version_text).map_err(|e| err(n, e.to_string()))?;

    let mut blocks: [Vec<(usize, &str)>; 4] = Default::default();
    let mut which: Option<usize> = None;
    for &(ln, line) in body {
        if let Some(b) = BLOCKS.iter().position(|h| line.trim_end() == *h) {
            if b != which.map_or(0, |w| w + 1) {
                return Err(err(ln, format!("unexpected block {line}")));
            }
            which = Some(b);
        } else if let Some(w) = which {
            blocks[w].push((ln, line));
        } else if !line.trim().is_empty() {
            return Err(err(ln, "text before **Description**".into()));
        }
    }
    if which != Some(3) {
        return Err(err(n, format!("section '{name}' is missing blocks")));
    }

    let description = {
        let text: Vec<&str> = blocks[0].iter().map(|(_, l)| *l).collect();
        let joined = text.join("\n").trim().to_string();
        if joined == NONE_MARKER {
            String::new()
        } else {
            joined
        }
    };
    let arguments = list_items(&blocks[1])?
        .into_iter()
        .map(|(ln, item)| {
            let (arg_name, tail) = item
                .split_once(": ")
                .ok_or_else(|| err(ln, "expected '- name: type — description'".into()))?;
            let (ty, desc) = tail.split_once(ARG_SEPARATOR).unwrap_or((tail, ""));
            Ok(Argument {
                name: arg_name.to_string(),
                ty: ty.to_string(),
                description: desc.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let preconditions = list_items(&blocks[2])?.into_iter().map(|(_, s)| s.to_string()).collect();
    let constraints = list_items(&blocks[3])?.into_iter().map(|(_, s)| s.to_string()).collect();
    Ok(ContractSection {
        name: name.to_string(),
        version,
        description,
        arguments,
        preconditions,
        constraints,
    })
}

fn list_items<'a>(block: &[(usize, &'a str)]) -> Result<Vec<(usize, &'a str)>> {
    let mut items = Vec::new();
    for &(ln, line) in block {
        if line.trim().is_empty() || line.trim() == NONE_MARKER {
            continue;
        }
        let item = line
            .strip_prefix("- ")
            .ok_or_else(|| Error::ParseError(format!("contract line {}: expected a '- ' list item", ln + 1)))?;
        items.push((ln, item));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn adder() -> RegistrationRecord {
        RegistrationRecord::tool("adder", "Adds two integers.", "input.a + input.b")
            .with_version(Version::INITIAL)
            .with_metadata(
                "arguments",
                json!([
                    {"name": "a", "type": "integer", "description": "first addend"},
                    {"name": "b", "type": "integer", "description": "second addend"}
                ]),
            )
            .with_metadata("constraints", json!(["pure function"]))
    }

    #[test]
    fn render_contains_names_and_arguments() {
        let c = Contract {
            kind: EntityKind::Tool,
            sections: vec![ContractSection::from_record(&adder())],
        };
        let text = c.render();
        assert!(text.starts_with("# Tool Contract\n"));
        assert!(text.contains("## adder (v0.1.0)"));
        assert!(text.contains("- a: integer — first addend"));
        assert!(text.contains("- b: integer — second addend"));
        assert!(text.contains("Adds two integers."));
        assert_eq!(Contract::parse(&text).unwrap(), c);
    }

    #[test]
    fn arguments_from_function_schema() {
        let r = RegistrationRecord::tool("search", "web search", "input").with_export(
            ExportForm::FunctionCallingSchema,
            r#"{"name":"search","parameters":{"properties":{"query":{"type":"string","description":"terms"}}}}"#,
        );
        let s = ContractSection::from_record(&r);
        assert_eq!(s.arguments.len(), 1);
        assert_eq!(s.arguments[0].ty, "string");
    }

    #[test]
    fn malformed_contracts() {
        assert!(Contract::parse("").is_err());
        assert!(Contract::parse("# Widget Contract\n").is_err());
        assert!(Contract::parse("# Tool Contract\n\n## x (v0.1.0)\n\n**Description**\n").is_err());
        let bad_arg = "# Tool Contract\n\n## x (v0.1.0)\n\n**Description**\n\nd\n\n**Arguments**\n\nno dash\n\n**Preconditions**\n\n**Constraints**\n";
        let e = Contract::parse(bad_arg).unwrap_err().to_string();
        assert!(e.contains("line 11"), "{e}");
    }
}
