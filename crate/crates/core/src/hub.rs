//! The five per-kind registries plus the model gateway, and the context agents run in.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest, ModelResponse};
use crate::persistence::{load_registry, save_registry};
use crate::record::{EntityKind, Mapping, RegistrationRecord};
use crate::registry::{InitReport, Registry};
use crate::runtime::RunContext;
use crate::trace::TraceRecorder;
use crate::variables::{EvolvableVariable, FieldRef};
use crate::version::Version;

const MAX_NESTING: u32 = 16;

/// All registries of a running system, addressable by kind.
#[derive(Debug)]
pub struct ResourceHub {
    registries: [Arc<Registry>; 5],
    gateway: Arc<Gateway>,
}

impl Default for ResourceHub {
    fn default() -> Self {
        Self::new(Arc::new(Gateway::new()))
    }
}

/// Per-run options for [`ResourceHub::run_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions<'a> {
    pub trace: Option<&'a TraceRecorder>,
    pub model_override: Option<&'a str>,
    pub tag: &'a str,
}

impl ResourceHub {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        ResourceHub {
            registries: EntityKind::ALL.map(|k| Arc::new(Registry::new(k))),
            gateway,
        }
    }

    pub fn from_registries(registries: [Arc<Registry>; 5], gateway: Arc<Gateway>) -> Result<Self> {
        for (kind, r) in EntityKind::ALL.iter().zip(&registries) {
            if r.kind() != *kind {
                return Err(Error::InvalidConfig(format!("registry slot {kind} holds {}", r.kind())));
            }
        }
        Ok(ResourceHub { registries, gateway })
    }

    pub fn registry(&self, kind: EntityKind) -> &Arc<Registry> {
        &self.registries[kind.index()]
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    /// Shadow copy: forked registries, shared gateway.
    pub fn fork(&self) -> ResourceHub {
        ResourceHub {
            registries: EntityKind::ALL.map(|k| Arc::new(self.registry(k).fork())),
            gateway: self.gateway.clone(),
        }
    }

    pub fn register(&self, record: RegistrationRecord) -> Result<Version> {
        self.registry(record.kind()).register(record)
    }

    pub fn record(&self, kind: EntityKind, name: &str) -> Result<RegistrationRecord> {
        self.registry(kind).get_info(name)
    }

    /// Discover records of every kind under `root`. A file that fails to parse is reported once.
    pub fn init(&self, root: impl AsRef<Path>) -> Result<InitReport> {
        let root = root.as_ref();
        let mut report = InitReport::default();
        let mut seen = BTreeSet::new();
        for kind in EntityKind::ALL {
            let r = self.registry(kind).init(root)?;
            report.registered.extend(r.registered);
            for skip in r.skipped {
                if seen.insert((skip.path.clone(), skip.reason.clone())) {
                    report.skipped.push(skip);
                }
            }
        }
        Ok(report)
    }

    pub fn run(&self, kind: EntityKind, name: &str, input: Value, trace: Option<&TraceRecorder>) -> Result<Value> {
        self.run_with(
            kind,
            name,
            input,
            RunOptions {
                trace,
                ..Default::default()
            },
        )
    }

    pub fn run_with(&self, kind: EntityKind, name: &str, input: Value, options: RunOptions<'_>) -> Result<Value> {
        let ctx = HubContext {
            hub: self,
            options,
            depth: Cell::new(0),
        };
        ctx.run_resource(kind, name, input)
    }

    /// Variables of a resource; an agent expands to the prompts and tools it references.
    pub fn get_variables(&self, kind: EntityKind, name: &str) -> Result<Vec<EvolvableVariable>> {
        let record = self.record(kind, name)?;
        let Mapping::Agent { prompts, tools, .. } = &record.entity.mapping else {
            return self.registry(kind).get_variables(name);
        };
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let refs = prompts
            .iter()
            .map(|p| (EntityKind::Prompt, p))
            .chain(tools.iter().map(|t| (EntityKind::Tool, t)));
        for (k, n) in refs {
            if !seen.insert((k, n.clone())) {
                continue;
            }
            let vars = self
                .registry(k)
                .get_variables(n)
                .map_err(|_| Error::UnregisteredResource(format!("{k}:{n} referenced by agent '{name}'")))?;
            out.extend(vars);
        }
        Ok(out)
    }

    /// Atomic across kinds: all assignments commit, or none do.
    /// Returns one version per touched resource, in first-touch order.
    pub fn set_variables(&self, assignments: &[(String, String)]) -> Result<Vec<Version>> {
        let parsed = assignments
            .iter()
            .map(|(id, v)| Ok((id.parse::<FieldRef>()?, v.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut by_kind: BTreeMap<EntityKind, Vec<(FieldRef, String)>> = BTreeMap::new();
        for (f, v) in &parsed {
            by_kind.entry(f.kind).or_default().push((f.clone(), v.clone()));
        }
        // Fixed lock order (kind order) rules out deadlock between concurrent batches.
        let mut guards = Vec::new();
        for (kind, items) in &by_kind {
            let guard = self.registry(*kind).write();
            let staged = guard.prepare(items)?;
            guards.push((*kind, guard, staged));
        }
        let mut versions: BTreeMap<(EntityKind, String), Version> = BTreeMap::new();
        for (kind, mut guard, staged) in guards {
            for (name, v) in guard.commit(staged)? {
                versions.insert((kind, name), v);
            }
        }
        let mut order = Vec::new();
        let mut seen = BTreeSet::new();
        for (f, _) in &parsed {
            let key = (f.kind, f.name.clone());
            if seen.insert(key.clone()) {
                order.push(versions[&key]);
            }
        }
        Ok(order)
    }

    /// `"<kind>:<name>"` → content hash for every head of every kind.
    pub fn head_hashes(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for kind in EntityKind::ALL {
            for (name, hash) in self.registry(kind).head_hashes() {
                out.insert(format!("{kind}:{name}"), hash);
            }
        }
        out
    }

    /// Write one `<kind>.json` snapshot document per kind into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
        for kind in EntityKind::ALL {
            save_registry(self.registry(kind), dir.join(format!("{kind}.json")))?;
        }
        Ok(())
    }

    /// Load from `save_dir` output; kinds without a file start empty.
    pub fn load_dir(dir: impl AsRef<Path>, gateway: Arc<Gateway>) -> Result<ResourceHub> {
        let dir = dir.as_ref();
        let mut registries = Vec::with_capacity(5);
        for kind in EntityKind::ALL {
            let path = dir.join(format!("{kind}.json"));
            let registry = if path.exists() {
                let r = load_registry(&path)?;
                if r.kind() != kind {
                    return Err(Error::ParseError(format!("{} holds {} records", path.display(), r.kind())));
                }
                r
            } else {
                Registry::new(kind)
            };
            registries.push(Arc::new(registry));
        }
        let registries: [Arc<Registry>; 5] = registries.try_into().expect("five kinds");
        Ok(ResourceHub { registries, gateway })
    }
}

struct HubContext<'a> {
    hub: &'a ResourceHub,
    options: RunOptions<'a>,
    depth: Cell<u32>,
}

impl RunContext for HubContext<'_> {
    fn trace(&self) -> Option<&TraceRecorder> {
        self.options.trace
    }

    fn complete(&self, request: ModelRequest) -> Result<ModelResponse> {
        self.hub.gateway.complete_model(&request, self.options.trace)
    }

    fn resource(&self, kind: EntityKind, name: &str) -> Result<RegistrationRecord> {
        self.hub.record(kind, name)
    }

    fn run_resource(&self, kind: EntityKind, name: &str, input: Value) -> Result<Value> {
        let depth = self.depth.get();
        if depth >= MAX_NESTING {
            return Err(Error::ExecutionError(format!(
                "resource nesting deeper than {MAX_NESTING} at {kind}:{name}"
            )));
        }
        self.depth.set(depth + 1);
        let result = self.hub.registry(kind).run(name, input, self);
        self.depth.set(depth);
        result
    }

    fn model_override(&self) -> Option<String> {
        self.options.model_override.map(str::to_string)
    }

    fn request_tag(&self) -> String {
        self.options.tag.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedBackend, ScriptedRule};
    use crate::trace::EventKind;
    use serde_json::json;

    fn hub_with(rules: Vec<ScriptedRule>) -> ResourceHub {
        let gw = Gateway::new();
        gw.register_backend("scripted", Arc::new(ScriptedBackend::new(rules).unwrap()))
            .unwrap();
        ResourceHub::new(Arc::new(gw))
    }

    #[test]
    fn agent_calls_tool_then_answers() {
        let hub = hub_with(vec![
            ScriptedRule::substring("OBSERVATION: 5", "FINAL: 5"),
            ScriptedRule::substring("Task: add", "CALL adder {\"a\": 2, \"b\": 3}"),
        ]);
        hub.register(RegistrationRecord::prompt("sys", "", "Use tools.")).unwrap();
        hub.register(RegistrationRecord::tool("adder", "adds", "input.a + input.b")).unwrap();
        hub.register(RegistrationRecord::agent("calc", "", &["sys"], &["adder"], "scripted"))
            .unwrap();
        let trace = TraceRecorder::new("t");
        let out = hub
            .run(EntityKind::Agent, "calc", json!({"task": "add"}), Some(&trace))
            .unwrap();
        assert_eq!(out, json!({"answer": "5"}));
        assert_eq!(trace.events().iter().filter(|e| e.kind == EventKind::ModelCall).count(), 2);
        // One for the tool, one for the agent itself.
        assert_eq!(trace.events().iter().filter(|e| e.kind == EventKind::ToolCall).count(), 2);
    }

    #[test]
    fn agent_variables_expand_and_mask() {
        let hub = ResourceHub::default();
        hub.register(RegistrationRecord::prompt("p1", "", "a").trainable(true)).unwrap();
        hub.register(RegistrationRecord::prompt("p2", "", "b")).unwrap();
        hub.register(RegistrationRecord::tool("t", "", "input").trainable(true)).unwrap();
        hub.register(RegistrationRecord::agent("ag", "", &["p1", "p2"], &["t"], "m")).unwrap();
        let vars = hub.get_variables(EntityKind::Agent, "ag").unwrap();
        assert_eq!(vars.len(), 3);
        assert_eq!(vars.iter().filter(|v| v.learnable).count(), 2);
    }

    #[test]
    fn cross_kind_batches_are_atomic() {
        let hub = ResourceHub::default();
        hub.register(RegistrationRecord::prompt("p", "", "a").trainable(true)).unwrap();
        hub.register(RegistrationRecord::tool("t", "", "input")).unwrap();
        let before = hub.head_hashes();
        let batch = vec![
            ("prompt:p#entity.mapping.prompt_text".into(), "b".into()),
            ("tool:t#impl_descriptor".into(), "1".into()),
        ];
        assert!(matches!(hub.set_variables(&batch), Err(Error::NotLearnable(_))));
        assert_eq!(hub.head_hashes(), before);
        hub.registry(EntityKind::Tool)
            .update("t", crate::registry::Update::Delta(crate::registry::RecordDelta {
                trainable: Some(true),
                ..Default::default()
            }))
            .unwrap();
        let v = hub.set_variables(&batch).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].to_string(), "0.1.2");
    }

    #[test]
    fn fork_is_isolated_and_dirs_roundtrip() {
        let hub = ResourceHub::default();
        hub.register(RegistrationRecord::prompt("p", "", "a").trainable(true)).unwrap();
        let shadow = hub.fork();
        shadow
            .set_variables(&[("prompt:p#entity.mapping.prompt_text".into(), "z".into())])
            .unwrap();
        assert_eq!(hub.registry(EntityKind::Prompt).history("p").unwrap().len(), 1);
        let dir = tempfile::tempdir().unwrap();
        shadow.save_dir(dir.path()).unwrap();
        let back = ResourceHub::load_dir(dir.path(), Arc::new(Gateway::new())).unwrap();
        assert_eq!(back.head_hashes(), shadow.head_hashes());
    }

    #[test]
    fn unbounded_proxy_recursion_is_stopped() {
        let hub = hub_with(vec![ScriptedRule::substring("Task", "CALL loopback {\"task\": \"again\"}")]);
        hub.register(RegistrationRecord::new(
            EntityKind::Tool,
            "loopback",
            "",
            Mapping::AgentProxy { agent: "a".into() },
        ))
        .unwrap();
        hub.register(RegistrationRecord::agent("a", "", &[], &["loopback"], "scripted")).unwrap();
        let err = hub.run(EntityKind::Agent, "a", json!({"task": "go"}), None).unwrap_err();
        assert!(matches!(err, Error::ExecutionError(_)));
    }
}
