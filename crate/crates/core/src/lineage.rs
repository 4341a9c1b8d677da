//! Append-only version lineage of immutable record snapshots.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::record::{EntityKind, RegistrationRecord};
use crate::version::Version;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub resource_name: String,
    pub version: Version,
    /// Digest of the record content; the version and `created_at` are excluded.
    pub content_hash: String,
    pub record: RegistrationRecord,
    pub parent: Option<Version>,
    pub created_at: DateTime<Utc>,
}

impl Snapshot {
    pub fn verify(&self) -> Result<()> {
        let actual = self.record.content_hash();
        if actual != self.content_hash {
            return Err(Error::ParseError(format!(
                "snapshot {}@{} content hash mismatch",
                self.resource_name, self.version
            )));
        }
        if self.record.version != Some(self.version) {
            return Err(Error::ParseError(format!(
                "snapshot {}@{} carries record version {:?}",
                self.resource_name, self.version, self.record.version
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub version: Version,
    pub content_hash: String,
    pub created_at: DateTime<Utc>,
    pub parent: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub resource_name: String,
    pub snapshots: Vec<Snapshot>,
}

impl Lineage {
    pub fn new(resource_name: impl Into<String>) -> Self {
        Lineage {
            resource_name: resource_name.into(),
            snapshots: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn get(&self, version: Version) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.version == version)
    }

    /// Append `record` (which must already carry its version); the parent is the previous snapshot.
    pub fn append(&mut self, record: RegistrationRecord) -> Result<&Snapshot> {
        let version = record
            .version
            .ok_or_else(|| Error::InvalidRecord("snapshot record has no version".into()))?;
        let parent = self.last().map(|s| s.version);
        if let Some(last) = parent {
            if version <= last {
                return Err(Error::NonMonotonicVersion {
                    name: self.resource_name.clone(),
                    version: version.to_string(),
                    last: last.to_string(),
                });
            }
        }
        self.snapshots.push(Snapshot {
            resource_name: self.resource_name.clone(),
            version,
            content_hash: record.content_hash(),
            record,
            parent,
            created_at: Utc::now(),
        });
        Ok(self.snapshots.last().expect("just pushed"))
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        self.snapshots
            .iter()
            .map(|s| HistoryEntry {
                version: s.version,
                content_hash: s.content_hash.clone(),
                created_at: s.created_at,
                parent: s.parent,
            })
            .collect()
    }

    /// Checks ordering, parent chain and hashes.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<Version> = None;
        for s in &self.snapshots {
            if s.resource_name != self.resource_name {
                return Err(Error::ParseError(format!(
                    "snapshot for '{}' filed under '{}'",
                    s.resource_name, self.resource_name
                )));
            }
            if s.parent != prev || prev.is_some_and(|p| s.version <= p) {
                return Err(Error::ParseError(format!(
                    "broken lineage chain for '{}' at {}",
                    self.resource_name, s.version
                )));
            }
            s.verify()?;
            prev = Some(s.version);
        }
        Ok(())
    }
}

/// One field-level difference between two record versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldChange {
    pub path: String,
    pub old: Option<Value>,
    pub new: Option<Value>,
}

/// Per-kind store of lineages keyed by resource name.
#[derive(Debug, Clone, PartialEq)]
pub struct LineageStore {
    kind: EntityKind,
    lineages: BTreeMap<String, Lineage>,
}

impl LineageStore {
    pub fn new(kind: EntityKind) -> Self {
        LineageStore {
            kind,
            lineages: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn append(&mut self, record: RegistrationRecord) -> Result<Snapshot> {
        let name = record.name().to_string();
        let lineage = self
            .lineages
            .entry(name.clone())
            .or_insert_with(|| Lineage::new(name));
        lineage.append(record).cloned()
    }

    pub fn lineage(&self, name: &str) -> Result<&Lineage> {
        self.lineages
            .get(name)
            .ok_or_else(|| Error::not_found(self.kind, name))
    }

    pub fn history(&self, name: &str) -> Result<Vec<HistoryEntry>> {
        Ok(self.lineage(name)?.history())
    }

    pub fn snapshot(&self, name: &str, version: Version) -> Result<&Snapshot> {
        self.lineage(name)?
            .get(version)
            .ok_or_else(|| Error::VersionNotFound {
                name: name.to_string(),
                version: version.to_string(),
            })
    }

    pub fn remove(&mut self, name: &str) -> Option<Lineage> {
        self.lineages.remove(name)
    }

    pub fn insert(&mut self, lineage: Lineage) {
        self.lineages.insert(lineage.resource_name.clone(), lineage);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Lineage)> {
        self.lineages.iter()
    }

    pub fn len(&self) -> usize {
        self.lineages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lineages.is_empty()
    }

    pub fn diff(&self, name: &str, a: Version, b: Version) -> Result<Vec<FieldChange>> {
        let old = self.snapshot(name, a)?.record.content();
        let new = self.snapshot(name, b)?.record.content();
        Ok(diff_values(&old, &new))
    }
}

/// Leaf-level differences between two JSON documents, with dotted paths.
/// Arrays are compared as a whole.
pub fn diff_values(old: &Value, new: &Value) -> Vec<FieldChange> {
    let mut out = Vec::new();
    walk("", Some(old), Some(new), &mut out);
    out
}

fn walk(path: &str, old: Option<&Value>, new: Option<&Value>, out: &mut Vec<FieldChange>) {
    match (old, new) {
        (Some(Value::Object(a)), Some(Value::Object(b))) => {
            let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let child = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                walk(&child, a.get(k), b.get(k), out);
            }
        }
        (a, b) if a == b => {}
        (a, b) => out.push(FieldChange {
            path: path.to_string(),
            old: a.cloned(),
            new: b.cloned(),
        }),
    }
}
