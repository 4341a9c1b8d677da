//! Per-kind resource registries: active heads over an append-only lineage.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::contract::{Contract, ContractSection};
use crate::error::{Error, Result};
use crate::lineage::{FieldChange, HistoryEntry, Lineage, LineageStore, Snapshot};
use crate::record::{EntityKind, ExportedRepresentation, Mapping, RegistrationRecord};
use crate::retrieval::{rank, LexicalScorer, RetrievalScorer};
use crate::runtime::{Instance, RunContext};
use crate::trace::EventKind;
use crate::variables::{apply_field, parse_payload, record_variables, EvolvableVariable, FieldRef};
use crate::version::{next_version, Version};

/// Replacement for selected record fields; absent fields keep their value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<Mapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impl_descriptor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_params: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exports: Option<Vec<ExportedRepresentation>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Update {
    /// New source: prompt text, script source, or a memory payload in JSON.
    Source(String),
    Delta(RecordDelta),
}

impl Update {
    fn apply(self, record: &mut RegistrationRecord) -> Result<()> {
        match self {
            Update::Source(text) => match &mut record.entity.mapping {
                Mapping::Prompt { prompt_text } => *prompt_text = text,
                Mapping::Script { .. } => record.impl_descriptor = text,
                Mapping::Memory { payload } => *payload = parse_payload(&text)?,
                Mapping::Agent { .. } | Mapping::AgentProxy { .. } => {
                    return Err(Error::InvalidDelta(format!(
                        "{} '{}' has no source text; send a record delta",
                        record.kind(),
                        record.name()
                    )))
                }
            },
            Update::Delta(d) => {
                if let Some(m) = d.mapping {
                    if !m.allowed_for(record.kind()) {
                        return Err(Error::InvalidDelta(format!(
                            "mapping not permitted for kind {}",
                            record.kind()
                        )));
                    }
                    record.entity.mapping = m;
                }
                if let Some(v) = d.description {
                    record.entity.description = v;
                }
                if let Some(v) = d.trainable {
                    record.entity.trainable = v;
                }
                if let Some(v) = d.metadata {
                    record.entity.metadata = v;
                }
                if let Some(v) = d.impl_descriptor {
                    record.impl_descriptor = v;
                }
                if let Some(v) = d.init_params {
                    record.init_params = v;
                }
                if let Some(v) = d.exports {
                    record.exports = v;
                }
            }
        }
        record
            .validate()
            .map_err(|e| Error::InvalidDelta(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitReport {
    pub registered: Vec<String>,
    pub skipped: Vec<SkipReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "name", rename_all = "snake_case")]
pub enum ContractTarget {
    Resource(String),
    /// Every active resource of the registry's kind, in registration order.
    Kind,
}

#[derive(Debug, Clone)]
struct Head {
    record: RegistrationRecord,
    order: u64,
    /// Changes on every mutation; keys the instance cache.
    generation: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct RegistryInner {
    kind: EntityKind,
    heads: BTreeMap<String, Head>,
    lineage: LineageStore,
    counter: u64,
}

impl RegistryInner {
    fn new(kind: EntityKind) -> Self {
        RegistryInner {
            kind,
            heads: BTreeMap::new(),
            lineage: LineageStore::new(kind),
            counter: 0,
        }
    }

    fn tick(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }

    fn head(&self, name: &str) -> Result<&Head> {
        self.heads.get(name).ok_or_else(|| Error::not_found(self.kind, name))
    }

    fn check_record(&self, record: &RegistrationRecord) -> Result<()> {
        record.validate()?;
        if record.kind() != self.kind {
            return Err(Error::InvalidRecord(format!(
                "record '{}' is a {}, registry holds {}",
                record.name(),
                record.kind(),
                self.kind
            )));
        }
        Ok(())
    }

    fn insert_new(&mut self, mut record: RegistrationRecord) -> Result<Version> {
        self.check_record(&record)?;
        if self.heads.contains_key(record.name()) {
            return Err(Error::duplicate(self.kind, record.name()));
        }
        let version = record.version.unwrap_or(Version::INITIAL);
        record.version = Some(version);
        // A name may be reused after unregister, which drops the old lineage.
        self.lineage.remove(record.name());
        self.lineage.append(record.clone())?;
        let order = self.tick();
        let generation = self.tick();
        self.heads.insert(
            record.name().to_string(),
            Head {
                record,
                order,
                generation,
            },
        );
        Ok(version)
    }

    /// Append `record` as the next patch version of an existing head.
    fn replace(&mut self, mut record: RegistrationRecord) -> Result<Version> {
        let name = record.name().to_string();
        let current = self.head(&name)?.record.version;
        let version = next_version(current);
        record.version = Some(version);
        self.lineage.append(record.clone())?;
        let generation = self.tick();
        let head = self.heads.get_mut(&name).expect("checked above");
        head.record = record;
        head.generation = generation;
        Ok(version)
    }

    /// Validate a batch of field assignments and return the updated records without committing.
    pub(crate) fn prepare(&self, assignments: &[(FieldRef, String)]) -> Result<Vec<RegistrationRecord>> {
        let mut staged: Vec<RegistrationRecord> = Vec::new();
        for (field, value) in assignments {
            if field.kind != self.kind {
                return Err(Error::UnknownVariable(field.to_string()));
            }
            let idx = match staged.iter().position(|r| r.name() == field.name) {
                Some(i) => i,
                None => {
                    let head = &self.head(&field.name)?.record;
                    if !head.entity.trainable {
                        return Err(Error::NotLearnable(field.to_string()));
                    }
                    staged.push(head.clone());
                    staged.len() - 1
                }
            };
            apply_field(&mut staged[idx], &field.field, value)?;
        }
        Ok(staged)
    }

    pub(crate) fn commit(&mut self, staged: Vec<RegistrationRecord>) -> Result<Vec<(String, Version)>> {
        staged
            .into_iter()
            .map(|r| {
                let name = r.name().to_string();
                self.replace(r).map(|v| (name, v))
            })
            .collect()
    }

    fn ordered_heads(&self) -> Vec<&Head> {
        let mut heads: Vec<&Head> = self.heads.values().collect();
        heads.sort_by_key(|h| h.order);
        heads
    }
}

/// Registry for one entity kind. Reads run concurrently; mutations are serialized.
pub struct Registry {
    inner: RwLock<RegistryInner>,
    instances: Mutex<HashMap<String, (u64, Arc<Mutex<Instance>>)>>,
    scorer: RwLock<Arc<dyn RetrievalScorer>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.read();
        f.debug_struct("Registry")
            .field("kind", &inner.kind)
            .field("heads", &inner.heads.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Registry {
    pub fn new(kind: EntityKind) -> Self {
        Registry {
            inner: RwLock::new(RegistryInner::new(kind)),
            instances: Mutex::new(HashMap::new()),
            scorer: RwLock::new(Arc::new(LexicalScorer)),
        }
    }

    /// Rebuild a registry from heads (in registration order) and their lineages.
    pub fn from_parts(kind: EntityKind, heads: Vec<RegistrationRecord>, lineages: Vec<Lineage>) -> Result<Self> {
        let mut inner = RegistryInner::new(kind);
        for lineage in lineages {
            lineage.validate()?;
            inner.lineage.insert(lineage);
        }
        for record in heads {
            inner.check_record(&record)?;
            let name = record.name().to_string();
            if inner.heads.contains_key(&name) {
                return Err(Error::duplicate(kind, name));
            }
            let last = inner
                .lineage
                .lineage(&name)
                .ok()
                .and_then(|l| l.last())
                .ok_or_else(|| Error::ParseError(format!("head '{name}' has no lineage")))?;
            if Some(last.version) != record.version || last.record != record {
                return Err(Error::ParseError(format!("head '{name}' does not match its latest snapshot")));
            }
            let order = inner.tick();
            let generation = inner.tick();
            inner.heads.insert(
                name,
                Head {
                    record,
                    order,
                    generation,
                },
            );
        }
        if let Some((name, _)) = inner.lineage.iter().find(|(n, _)| !inner.heads.contains_key(*n)) {
            return Err(Error::ParseError(format!("lineage '{name}' has no active head")));
        }
        Ok(Registry {
            inner: RwLock::new(inner),
            instances: Mutex::new(HashMap::new()),
            scorer: RwLock::new(Arc::new(LexicalScorer)),
        })
    }

    pub fn kind(&self) -> EntityKind {
        self.inner.read().kind
    }

    pub fn set_scorer(&self, scorer: Arc<dyn RetrievalScorer>) {
        *self.scorer.write() = scorer;
    }

    pub(crate) fn write(&self) -> RwLockWriteGuard<'_, RegistryInner> {
        self.inner.write()
    }

    /// Independent copy sharing no state; used to stage candidate changes.
    pub fn fork(&self) -> Registry {
        Registry {
            inner: RwLock::new(self.inner.read().clone()),
            instances: Mutex::new(HashMap::new()),
            scorer: RwLock::new(self.scorer.read().clone()),
        }
    }

    /// Register every `*.json` record file under `root`, each at version 0.1.0.
    pub fn init(&self, root: impl AsRef<Path>) -> Result<InitReport> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::RootNotFound(root.to_path_buf()));
        }
        let kind = self.kind();
        let mut report = InitReport::default();
        let walker = walkdir::WalkDir::new(root).sort_by_file_name();
        for entry in walker {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    report.skipped.push(SkipReport {
                        path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let path = entry.path();
            if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let skip = |reason: String| SkipReport {
                path: path.to_path_buf(),
                reason,
            };
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    report.skipped.push(skip(e.to_string()));
                    continue;
                }
            };
            let mut record: RegistrationRecord = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => {
                    report.skipped.push(skip(format!("malformed record: {e}")));
                    continue;
                }
            };
            if record.kind() != kind {
                // Files for other kinds are not this registry's concern.
                continue;
            }
            record.version = Some(Version::INITIAL);
            let name = record.entity.name.clone();
            match self.register(record) {
                Ok(_) => report.registered.push(name),
                Err(e) => report.skipped.push(skip(e.to_string())),
            }
        }
        Ok(report)
    }

    pub fn register(&self, record: RegistrationRecord) -> Result<Version> {
        self.inner.write().insert_new(record)
    }

    /// Remove the head and its whole lineage.
    pub fn unregister(&self, name: &str) -> Result<RegistrationRecord> {
        let mut inner = self.inner.write();
        let head = inner.heads.remove(name).ok_or_else(|| Error::not_found(inner.kind, name))?;
        inner.lineage.remove(name);
        self.instances.lock().remove(name);
        Ok(head.record)
    }

    pub fn get_info(&self, name: &str) -> Result<RegistrationRecord> {
        Ok(self.inner.read().head(name)?.record.clone())
    }

    /// Shared instance handle for the current head, built on first use.
    pub fn get(&self, name: &str) -> Result<Arc<Mutex<Instance>>> {
        let (record, generation) = {
            let inner = self.inner.read();
            let h = inner.head(name)?;
            (h.record.clone(), h.generation)
        };
        let mut cache = self.instances.lock();
        if let Some((g, handle)) = cache.get(name) {
            if *g == generation {
                return Ok(handle.clone());
            }
        }
        let handle = Arc::new(Mutex::new(Instance::from_record(&record)?));
        cache.insert(name.to_string(), (generation, handle.clone()));
        Ok(handle)
    }

    pub fn list(&self) -> Vec<String> {
        self.inner.read().heads.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, name: &str) -> bool {
        self.inner.read().heads.contains_key(name)
    }

    /// Heads in registration order.
    pub fn heads(&self) -> Vec<RegistrationRecord> {
        self.inner.read().ordered_heads().into_iter().map(|h| h.record.clone()).collect()
    }

    pub fn lineages(&self) -> Vec<Lineage> {
        self.inner.read().lineage.iter().map(|(_, l)| l.clone()).collect()
    }

    /// Name → content hash of every head.
    pub fn head_hashes(&self) -> BTreeMap<String, String> {
        self.inner
            .read()
            .heads
            .iter()
            .map(|(n, h)| (n.clone(), h.record.content_hash()))
            .collect()
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let scorer = self.scorer.read().clone();
        let scored = self
            .inner
            .read()
            .heads
            .iter()
            .map(|(n, h)| (n.clone(), scorer.score(query, &h.record.search_text())))
            .collect();
        rank(scored, k)
    }

    /// Build an unregistered instance of this registry's kind.
    pub fn build(&self, descriptor: &str, params: &BTreeMap<String, Value>) -> Result<Instance> {
        Instance::build(self.kind(), descriptor, params)
    }

    pub fn get_state(&self, name: &str) -> Result<Value> {
        let kind = self.kind();
        if !matches!(kind, EntityKind::Environment | EntityKind::Memory) {
            return Err(Error::Unsupported(format!("{kind} resources have no state")));
        }
        let handle = self.get(name)?;
        let state = handle.lock().state().unwrap_or_else(|| Value::Object(Map::new()));
        Ok(state)
    }

    pub fn update(&self, name: &str, update: Update) -> Result<Version> {
        let mut inner = self.inner.write();
        let mut record = inner.head(name)?.record.clone();
        update.apply(&mut record)?;
        inner.replace(record)
    }

    /// Replace the head with a complete record; `record.version` is ignored.
    pub fn replace_record(&self, record: RegistrationRecord) -> Result<Version> {
        let mut inner = self.inner.write();
        inner.head(record.name())?;
        inner.check_record(&record)?;
        inner.replace(record)
    }

    pub fn copy(&self, name: &str, new_name: &str) -> Result<Version> {
        let mut inner = self.inner.write();
        let mut record = inner.head(name)?.record.clone();
        record.entity.name = new_name.to_string();
        record.version = None;
        inner.insert_new(record)
    }

    /// Append a new head whose content equals the snapshot at `version`.
    pub fn restore(&self, name: &str, version: Version) -> Result<Version> {
        let mut inner = self.inner.write();
        inner.head(name)?;
        let record = inner.lineage.snapshot(name, version)?.record.clone();
        inner.replace(record)
    }

    pub fn get_variables(&self, name: &str) -> Result<Vec<EvolvableVariable>> {
        Ok(record_variables(&self.inner.read().head(name)?.record))
    }

    /// Atomic batch: every assignment commits or none does. One patch bump per touched resource.
    pub fn set_variables(&self, assignments: &[(String, String)]) -> Result<Vec<Version>> {
        let parsed = assignments
            .iter()
            .map(|(id, v)| Ok((id.parse::<FieldRef>()?, v.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut inner = self.inner.write();
        let staged = inner.prepare(&parsed)?;
        Ok(inner.commit(staged)?.into_iter().map(|(_, v)| v).collect())
    }

    pub fn history(&self, name: &str) -> Result<Vec<HistoryEntry>> {
        self.inner.read().lineage.history(name)
    }

    pub fn snapshot(&self, name: &str, version: Version) -> Result<Snapshot> {
        self.inner.read().lineage.snapshot(name, version).cloned()
    }

    pub fn diff(&self, name: &str, a: Version, b: Version) -> Result<Vec<FieldChange>> {
        self.inner.read().lineage.diff(name, a, b)
    }

    /// Run the current head. Records a `tool_call` event (and an `error` event on failure)
    /// when the context carries a trace. Never changes the record.
    pub fn run(&self, name: &str, input: Value, ctx: &dyn RunContext) -> Result<Value> {
        let (kind, version) = {
            let inner = self.inner.read();
            (inner.kind, inner.head(name)?.record.version)
        };
        let handle = self.get(name)?;
        let result = match handle.try_lock() {
            Some(mut instance) => instance.run(input.clone(), ctx),
            // Re-entrant or concurrent use gets a private instance.
            None => {
                let record = self.get_info(name)?;
                Instance::from_record(&record)?.run(input.clone(), ctx)
            }
        };
        if let Some(trace) = ctx.trace() {
            let mut payload = json!({
                "kind": kind,
                "name": name,
                "version": version,
                "input": input,
            });
            match &result {
                Ok(out) => {
                    payload["ok"] = true.into();
                    payload["output"] = out.clone();
                }
                Err(e) => {
                    payload["ok"] = false.into();
                    payload["error"] = e.to_string().into();
                }
            }
            let span = trace.record(EventKind::ToolCall, payload, None).ok();
            if let Err(e) = &result {
                let _ = trace.record(
                    EventKind::Error,
                    json!({ "kind": e.kind_name(), "message": e.to_string(), "resource": name }),
                    span.as_deref(),
                );
            }
        }
        result
    }

    pub fn contract(&self, target: &ContractTarget) -> Result<Contract> {
        let inner = self.inner.read();
        let sections = match target {
            ContractTarget::Resource(name) => vec![ContractSection::from_record(&inner.head(name)?.record)],
            ContractTarget::Kind => inner
                .ordered_heads()
                .into_iter()
                .map(|h| ContractSection::from_record(&h.record))
                .collect(),
        };
        Ok(Contract {
            kind: inner.kind,
            sections,
        })
    }

    pub fn save_contract(&self, target: &ContractTarget, path: impl AsRef<Path>) -> Result<String> {
        self.contract(target)?.save(path)
    }

    pub fn load_contract(&self, path: impl AsRef<Path>) -> Result<Contract> {
        Contract::load(path)
    }
}
