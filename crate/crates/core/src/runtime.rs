//! Materialized resource instances and the context they run in.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use rhai::{Dynamic, Engine, Scope, AST};
use serde_json::{json, Map, Value};

use crate::canonical;
use crate::error::{Error, Result};
use crate::gateway::{Message, ModelRequest, ModelResponse};
use crate::record::{EntityKind, Mapping, RegistrationRecord};
use crate::trace::{EventKind, TraceRecorder};
use crate::variables::parse_payload;

/// Services a running resource may call back into.
pub trait RunContext {
    fn trace(&self) -> Option<&TraceRecorder>;
    fn complete(&self, request: ModelRequest) -> Result<ModelResponse>;
    fn resource(&self, kind: EntityKind, name: &str) -> Result<RegistrationRecord>;
    fn run_resource(&self, kind: EntityKind, name: &str, input: Value) -> Result<Value>;

    /// Replaces the model id named by agent mappings.
    fn model_override(&self) -> Option<String> {
        None
    }

    /// Tag attached to model requests.
    fn request_tag(&self) -> String {
        String::new()
    }
}

/// A context with no registries or models; only self-contained resources can run in it.
#[derive(Debug, Default, Clone, Copy)]
pub struct Detached;

impl RunContext for Detached {
    fn trace(&self) -> Option<&TraceRecorder> {
        None
    }

    fn complete(&self, _: ModelRequest) -> Result<ModelResponse> {
        Err(Error::ExecutionError("no model gateway attached".into()))
    }

    fn resource(&self, kind: EntityKind, name: &str) -> Result<RegistrationRecord> {
        Err(Error::UnregisteredResource(format!("{kind}:{name}")))
    }

    fn run_resource(&self, kind: EntityKind, name: &str, _: Value) -> Result<Value> {
        Err(Error::UnregisteredResource(format!("{kind}:{name}")))
    }
}

const MAX_OPERATIONS: u64 = 1_000_000;

static ENGINE: LazyLock<Engine> = LazyLock::new(|| {
    let mut engine = Engine::new();
    engine.set_max_operations(MAX_OPERATIONS);
    engine.set_max_expr_depths(64, 32);
    engine.set_max_call_levels(32);
    engine
});

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z0-9_.-]+)\s*\}\}").expect("static regex"));

/// Fill `{{field}}` placeholders from `vars`; unknown placeholders stay verbatim.
pub fn render_template(template: &str, vars: &Map<String, Value>) -> String {
    PLACEHOLDER
        .replace_all(template, |caps: &regex::Captures<'_>| match vars.get(&caps[1]) {
            Some(Value::String(s)) => s.clone(),
            Some(v) => canonical::to_string(v),
            None => caps[0].to_string(),
        })
        .into_owned()
}

fn has_placeholder(template: &str, field: &str) -> bool {
    PLACEHOLDER.captures_iter(template).any(|c| &c[1] == field)
}

fn to_dynamic(v: &Value) -> Result<Dynamic> {
    rhai::serde::to_dynamic(v).map_err(|e| Error::ExecutionError(e.to_string()))
}

fn from_dynamic(d: &Dynamic) -> Result<Value> {
    rhai::serde::from_dynamic::<Value>(d).map_err(|e| Error::ExecutionError(format!("unrepresentable script result: {e}")))
}

struct Script {
    ast: AST,
    state: Dynamic,
    params: Dynamic,
}

impl Script {
    /// Scripts see `input`, a persistent `state` map, and `params`; environments also get `action`.
    fn compile(source: &str, params: &BTreeMap<String, Value>) -> Result<Script> {
        let ast = ENGINE.compile(source).map_err(|e| Error::BuildFailure(e.to_string()))?;
        let params_value = canonical::to_value(params);
        let state = match params.get("state") {
            Some(Value::Object(m)) => Value::Object(m.clone()),
            _ => Value::Object(Map::new()),
        };
        Ok(Script {
            ast,
            state: to_dynamic(&state).map_err(|e| Error::BuildFailure(e.to_string()))?,
            params: to_dynamic(&params_value).map_err(|e| Error::BuildFailure(e.to_string()))?,
        })
    }

    fn run(&mut self, input: &Value, environment: bool) -> Result<Value> {
        let mut scope = Scope::new();
        let input = to_dynamic(input)?;
        if environment {
            scope.push_dynamic("action", input.clone());
        }
        scope.push_dynamic("input", input);
        scope.push_dynamic("state", self.state.clone());
        scope.push_dynamic("params", self.params.clone());
        let out = ENGINE
            .eval_ast_with_scope::<Dynamic>(&mut scope, &self.ast)
            .map_err(|e| Error::ExecutionError(e.to_string()))?;
        if let Some(state) = scope.get("state") {
            self.state = state.clone();
        }
        from_dynamic(&out)
    }
}

enum Body {
    Prompt { template: String },
    Script { script: Script, environment: bool },
    Memory { store: Map<String, Value> },
    Agent(AgentSpec),
    Proxy { agent: String },
}

#[derive(Debug, Clone)]
struct AgentSpec {
    prompts: Vec<String>,
    tools: Vec<String>,
    model: String,
    max_steps: u32,
}

/// A runnable handle. Each handle owns its state; handles are never shared between executors.
pub struct Instance {
    kind: EntityKind,
    name: String,
    body: Body,
}

impl std::fmt::Debug for Instance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Instance")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .finish()
    }
}

impl Instance {
    pub fn from_record(record: &RegistrationRecord) -> Result<Instance> {
        let body = match &record.entity.mapping {
            Mapping::Prompt { prompt_text } => Body::Prompt {
                template: prompt_text.clone(),
            },
            Mapping::Script { language } => {
                if language != "rhai" {
                    return Err(Error::BuildFailure(format!("unsupported script language '{language}'")));
                }
                Body::Script {
                    script: Script::compile(&record.impl_descriptor, &record.init_params)?,
                    environment: record.kind() == EntityKind::Environment,
                }
            }
            Mapping::Memory { payload } => Body::Memory { store: payload.clone() },
            Mapping::Agent {
                prompts,
                tools,
                model,
                max_steps,
            } => Body::Agent(AgentSpec {
                prompts: prompts.clone(),
                tools: tools.clone(),
                model: model.clone(),
                max_steps: *max_steps,
            }),
            Mapping::AgentProxy { agent } => Body::Proxy { agent: agent.clone() },
        };
        Ok(Instance {
            kind: record.kind(),
            name: record.name().to_string(),
            body,
        })
    }

    /// Build an unregistered instance of `kind` from a descriptor: script source for
    /// tools and environments, template text for prompts, a JSON payload for memory,
    /// and a JSON agent mapping for agents.
    pub fn build(kind: EntityKind, descriptor: &str, params: &BTreeMap<String, Value>) -> Result<Instance> {
        let mapping = match kind {
            EntityKind::Tool | EntityKind::Environment => Mapping::script(),
            EntityKind::Prompt => Mapping::Prompt {
                prompt_text: descriptor.to_string(),
            },
            EntityKind::Memory => Mapping::Memory {
                payload: parse_payload(descriptor).map_err(|e| Error::BuildFailure(e.to_string()))?,
            },
            EntityKind::Agent => {
                let mapping: Mapping =
                    serde_json::from_str(descriptor).map_err(|e| Error::BuildFailure(e.to_string()))?;
                if !mapping.allowed_for(kind) {
                    return Err(Error::BuildFailure("descriptor is not an agent mapping".into()));
                }
                mapping
            }
        };
        let mut record = RegistrationRecord::new(kind, "built", "", mapping).with_impl(descriptor);
        record.init_params = params.clone();
        Instance::from_record(&record)
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Structured state of environments and memories.
    pub fn state(&self) -> Option<Value> {
        match &self.body {
            Body::Script {
                script,
                environment: true,
            } => from_dynamic(&script.state).ok(),
            Body::Memory { store } => Some(Value::Object(store.clone())),
            _ => None,
        }
    }

    pub fn run(&mut self, input: Value, ctx: &dyn RunContext) -> Result<Value> {
        match &mut self.body {
            Body::Prompt { template } => {
                let vars = input_vars(&input);
                Ok(json!({ "text": render_template(template, &vars) }))
            }
            Body::Script { script, environment } => script.run(&input, *environment),
            Body::Memory { store } => memory_op(store, &input),
            Body::Agent(spec) => run_agent(&self.name, spec, &input, ctx),
            Body::Proxy { agent } => ctx.run_resource(EntityKind::Agent, agent, input),
        }
    }
}

fn input_vars(input: &Value) -> Map<String, Value> {
    match input {
        Value::Object(m) => m.clone(),
        other => {
            let mut m = Map::new();
            m.insert("input".into(), other.clone());
            m
        }
    }
}

fn memory_op(store: &mut Map<String, Value>, input: &Value) -> Result<Value> {
    let op = input.get("op").and_then(Value::as_str).unwrap_or("");
    let key = || {
        input
            .get("key")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::ExecutionError(format!("memory op '{op}' needs a string key")))
    };
    match op {
        "read" => Ok(json!({ "value": store.get(key()?).cloned().unwrap_or(Value::Null) })),
        "write" => {
            let k = key()?.to_string();
            store.insert(k, input.get("value").cloned().unwrap_or(Value::Null));
            Ok(json!({ "ok": true }))
        }
        "delete" => Ok(json!({ "removed": store.remove(key()?).is_some() })),
        "query" => {
            let q = input.get("query").and_then(Value::as_str).unwrap_or("").to_lowercase();
            let matches: Vec<Value> = store
                .iter()
                .filter(|(k, v)| {
                    let text = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    k.to_lowercase().contains(&q) || text.to_lowercase().contains(&q)
                })
                .map(|(k, v)| json!({ "key": k, "value": v }))
                .collect();
            Ok(json!({ "matches": matches }))
        }
        other => Err(Error::ExecutionError(format!(
            "unknown memory op '{other}'; expected read, write, query, or delete"
        ))),
    }
}

enum Step {
    Call { tool: String, args: Value },
    Final(String),
}

fn parse_step(reply: &str) -> Result<Step> {
    for line in reply.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("CALL ") {
            let rest = rest.trim();
            let (tool, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, "{}"));
            let args: Value = serde_json::from_str(args.trim())
                .map_err(|e| Error::ExecutionError(format!("malformed tool call arguments: {e}")))?;
            return Ok(Step::Call {
                tool: tool.to_string(),
                args,
            });
        }
        if let Some(rest) = line.strip_prefix("FINAL:") {
            return Ok(Step::Final(rest.trim().to_string()));
        }
    }
    Ok(Step::Final(reply.trim().to_string()))
}

fn observation_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => canonical::to_string(other),
    }
}

/// The agent's opening user message: its prompts (rendered against the input) and tool list,
/// followed by the task unless a prompt already places `{{task}}`.
pub fn agent_user_message(
    prompt_texts: &[String],
    tools: &[(String, String)],
    input: &Value,
) -> String {
    let task = match input {
        Value::String(s) => s.clone(),
        other => other.get("task").map(observation_text).unwrap_or_default(),
    };
    let mut vars = input_vars(input);
    vars.entry("task").or_insert_with(|| Value::String(task.clone()));
    let rendered: Vec<String> = prompt_texts.iter().map(|t| render_template(t, &vars)).collect();
    let mut msg = rendered.join("\n\n");
    if !tools.is_empty() {
        if !msg.is_empty() {
            msg.push_str("\n\n");
        }
        msg.push_str("Tools:");
        for (name, desc) in tools {
            msg.push_str(&format!("\n- {name}: {desc}"));
        }
    }
    if !prompt_texts.iter().any(|t| has_placeholder(t, "task")) {
        if !msg.is_empty() {
            msg.push_str("\n\n");
        }
        msg.push_str(&format!("Task: {task}"));
    }
    msg
}

fn run_agent(name: &str, spec: &AgentSpec, input: &Value, ctx: &dyn RunContext) -> Result<Value> {
    let mut prompt_texts = Vec::with_capacity(spec.prompts.len());
    for p in &spec.prompts {
        match ctx.resource(EntityKind::Prompt, p)?.entity.mapping {
            Mapping::Prompt { prompt_text } => prompt_texts.push(prompt_text),
            _ => return Err(Error::ExecutionError(format!("prompt '{p}' has no prompt text"))),
        }
    }
    let mut tools = Vec::with_capacity(spec.tools.len());
    for t in &spec.tools {
        tools.push((t.clone(), ctx.resource(EntityKind::Tool, t)?.entity.description));
    }
    let model = ctx.model_override().unwrap_or_else(|| spec.model.clone());
    if model.is_empty() {
        return Err(Error::InvalidConfig(format!("agent '{name}' names no model")));
    }
    let mut messages = vec![Message::user(agent_user_message(&prompt_texts, &tools, input))];
    for _ in 0..spec.max_steps.max(1) {
        let request = ModelRequest::new(model.clone(), messages.clone()).with_tag(ctx.request_tag());
        let reply = ctx.complete(request)?.text;
        match parse_step(&reply)? {
            Step::Final(answer) => {
                if let Some(trace) = ctx.trace() {
                    let _ = trace.record(
                        EventKind::Decision,
                        json!({ "agent": name, "final_answer": answer }),
                        None,
                    );
                }
                return Ok(json!({ "answer": answer }));
            }
            Step::Call { tool, args } => {
                if !spec.tools.contains(&tool) {
                    return Err(Error::ExecutionError(format!(
                        "agent '{name}' called unavailable tool '{tool}'"
                    )));
                }
                let output = ctx.run_resource(EntityKind::Tool, &tool, args)?;
                messages.push(Message::assistant(reply));
                messages.push(Message::user(format!("OBSERVATION: {}", observation_text(&output))));
            }
        }
    }
    Err(Error::ExecutionError(format!(
        "agent '{name}' exhausted its {} step budget",
        spec.max_steps.max(1)
    )))
}
