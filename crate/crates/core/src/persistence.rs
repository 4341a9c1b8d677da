//! Registry snapshot documents and live hot-swap.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::error::{Error, Result};
use crate::lineage::{Lineage, Snapshot};
use crate::record::{EntityKind, RegistrationRecord};
use crate::registry::Registry;
use crate::version::Version;

pub const FORMAT_VERSION: u64 = 1;

/// `{"format_version":1,"kind":...,"heads":[...],"lineages":{name:[snapshot,...]}}`.
/// Heads are listed in registration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrySnapshotDocument {
    pub format_version: u64,
    pub kind: EntityKind,
    pub heads: Vec<RegistrationRecord>,
    pub lineages: BTreeMap<String, Vec<Snapshot>>,
}

impl RegistrySnapshotDocument {
    pub fn of(registry: &Registry) -> Self {
        RegistrySnapshotDocument {
            format_version: FORMAT_VERSION,
            kind: registry.kind(),
            heads: registry.heads(),
            lineages: registry
                .lineages()
                .into_iter()
                .map(|l| (l.resource_name, l.snapshots))
                .collect(),
        }
    }
}

/// Deterministic bytes: sorted keys, no insignificant whitespace.
pub fn encode_registry(registry: &Registry) -> Vec<u8> {
    canonical::to_bytes(&RegistrySnapshotDocument::of(registry))
}

pub fn decode_registry(bytes: &[u8]) -> Result<Registry> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::ParseError(e.to_string()))?;
    match value.get("format_version") {
        Some(v) => match v.as_u64() {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(Error::UnsupportedFormatVersion(other)),
            None => return Err(Error::ParseError("format_version must be a non-negative integer".into())),
        },
        None => return Err(Error::ParseError("missing format_version".into())),
    }
    let doc: RegistrySnapshotDocument =
        serde_json::from_value(value).map_err(|e| Error::ParseError(e.to_string()))?;
    let lineages = doc
        .lineages
        .into_iter()
        .map(|(name, snapshots)| Lineage {
            resource_name: name,
            snapshots,
        })
        .collect();
    Registry::from_parts(doc.kind, doc.heads, lineages).map_err(|e| match e {
        Error::ParseError(_) => e,
        other => Error::ParseError(other.to_string()),
    })
}

pub fn save_registry(registry: &Registry, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_registry(registry)).map_err(|e| Error::path(path, e))
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::path(path, e))?;
    decode_registry(&bytes)
}

/// Replace a live head as an update would. Readers see the old or the new head, never a mix.
pub fn hot_swap(registry: &Registry, record: RegistrationRecord) -> Result<Version> {
    registry.replace_record(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Update;

    #[test]
    fn empty_registry_document() {
        let r = Registry::new(EntityKind::Prompt);
        let text = String::from_utf8(encode_registry(&r)).unwrap();
        assert_eq!(text, r#"{"format_version":1,"heads":[],"kind":"prompt","lineages":{}}"#);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let r = Registry::new(EntityKind::Prompt);
        r.register(RegistrationRecord::prompt("b", "", "x")).unwrap();
        r.register(RegistrationRecord::prompt("a", "", "y")).unwrap();
        r.update("b", Update::Source("x2".into())).unwrap();
        let bytes = encode_registry(&r);
        assert_eq!(bytes, encode_registry(&r));
        let back = decode_registry(&bytes).unwrap();
        assert_eq!(encode_registry(&back), bytes);
        assert_eq!(back.heads(), r.heads());
        assert_eq!(back.history("b").unwrap().len(), 2);
    }

    #[test]
    fn decode_errors() {
        let r = Registry::new(EntityKind::Tool);
        r.register(RegistrationRecord::tool("t", "", "input")).unwrap();
        let bytes = encode_registry(&r);
        assert!(matches!(decode_registry(&bytes[..bytes.len() / 2]), Err(Error::ParseError(_))));
        let future = String::from_utf8(bytes.clone()).unwrap().replace("\"format_version\":1", "\"format_version\":999");
        assert!(matches!(
            decode_registry(future.as_bytes()),
            Err(Error::UnsupportedFormatVersion(999))
        ));
        let tampered = String::from_utf8(bytes).unwrap().replacen("\"impl_descriptor\":\"input\"", "\"impl_descriptor\":\"1\"", 1);
        assert!(matches!(decode_registry(tampered.as_bytes()), Err(Error::ParseError(_))));
    }

    #[test]
    fn hot_swap_checks() {
        let r = Registry::new(EntityKind::Prompt);
        r.register(RegistrationRecord::prompt("p", "", "old")).unwrap();
        assert_eq!(
            hot_swap(&r, RegistrationRecord::prompt("p", "", "new")).unwrap().to_string(),
            "0.1.1"
        );
        assert!(matches!(
            hot_swap(&r, RegistrationRecord::prompt("ghost", "", "x")),
            Err(Error::NotFound { .. })
        ));
        assert!(matches!(
            hot_swap(&r, RegistrationRecord::prompt("p", "", "x").with_export(crate::ExportForm::NaturalLanguageText, "")),
            Err(Error::InvalidRecord(_))
        ));
    }
}
