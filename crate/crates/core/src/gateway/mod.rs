//! Unified model-API layer: provider registration, routing with fallback and
//! retries, and per-attempt tracing.

mod config;
mod http;
mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, ProviderFailure, Result};
use crate::trace::{EventKind, TraceRecorder};

pub use config::{build_gateway, load_providers, ProviderConfig, ProviderKind};
pub use http::{HttpBackend, HttpTransport, UreqTransport};
pub use scripted::{Matcher, ScriptedBackend, ScriptedRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<Message>,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Free-form label carried into traces; scripted rules may filter on it.
    #[serde(default)]
    pub tag: String,
}

fn default_max_tokens() -> u32 {
    1024
}

impl ModelRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        ModelRequest {
            messages,
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            tag: String::new(),
        }
    }

    pub fn user(model_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(model_id, vec![Message::user(text)])
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest("at least one message is required".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub provider: String,
    pub model_id: String,
}

/// A model provider. Errors are diagnostics that the gateway collects while
/// falling back along the route.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> std::result::Result<String, String>;

    /// Exclusive backends are never called concurrently; the gateway serializes them.
    fn exclusive(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub provider: String,
    #[serde(default)]
    pub priority: u32,
    #[serde(default)]
    pub cost_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub chain: Vec<RouteEntry>,
    #[serde(default)]
    pub retry_limit: u32,
}

impl RouteConfig {
    pub fn new(providers: &[&str]) -> Self {
        RouteConfig {
            chain: providers
                .iter()
                .map(|p| RouteEntry {
                    provider: p.to_string(),
                    priority: 0,
                    cost_weight: 0.0,
                })
                .collect(),
            retry_limit: 0,
        }
    }

    pub fn with_retry_limit(mut self, retry_limit: u32) -> Self {
        self.retry_limit = retry_limit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain.is_empty() {
            return Err(Error::InvalidConfig("route chain must be non-empty".into()));
        }
        if let Some(e) = self.chain.iter().find(|e| !e.cost_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cost weight of '{}' is not finite",
                e.provider
            )));
        }
        Ok(())
    }

    /// Attempt order: stable sort by (priority, cost weight).
    pub fn ordered(&self) -> Vec<&RouteEntry> {
        let mut entries: Vec<&RouteEntry> = self.chain.iter().collect();
        entries.sort_by(|a, b| {
            a.priority
                .cmp(&b.priority)
                .then(a.cost_weight.total_cmp(&b.cost_weight))
        });
        entries
    }
}

struct Slot {
    backend: Arc<dyn ModelBackend>,
    exclusive: Option<Mutex<()>>,
}

#[derive(Default)]
pub struct Gateway {
    backends: RwLock<BTreeMap<String, Arc<Slot>>>,
    routes: RwLock<BTreeMap<String, RouteConfig>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backends", &self.backends.read().keys().collect::<Vec<_>>())
            .field("routes", &*self.routes.read())
            .finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_backend(&self, name: impl Into<String>, backend: Arc<dyn ModelBackend>) -> Result<()> {
        let name = name.into();
        let mut backends = self.backends.write();
        if backends.contains_key(&name) {
            return Err(Error::duplicate("backend", name));
        }
        let exclusive = backend.exclusive().then(|| Mutex::new(()));
        backends.insert(name, Arc::new(Slot { backend, exclusive }));
        Ok(())
    }

    pub fn has_backend(&self, name: &str) -> bool {
        self.backends.read().contains_key(name)
    }

    /// Bind a model id to a route. Unbound model ids route to the provider of the same name.
    pub fn set_route(&self, model_id: impl Into<String>, route: RouteConfig) -> Result<()> {
        route.validate()?;
        self.routes.write().insert(model_id.into(), route);
        Ok(())
    }

    pub fn route_for(&self, model_id: &str) -> RouteConfig {
        self.routes
            .read()
            .get(model_id)
            .cloned()
            .unwrap_or_else(|| RouteConfig::new(&[model_id]))
    }

    /// Complete using the route bound to `request.model_id`.
    pub fn complete_model(&self, request: &ModelRequest, trace: Option<&TraceRecorder>) -> Result<ModelResponse> {
        let route = self.route_for(&request.model_id);
        self.complete(request, &route, trace)
    }

    pub fn complete(
        &self,
        request: &ModelRequest,
        route: &RouteConfig,
        trace: Option<&TraceRecorder>,
    ) -> Result<ModelResponse> {
        request.validate()?;
        route.validate()?;
        let mut failures = Vec::new();
        for entry in route.ordered() {
            let slot = self.backends.read().get(&entry.provider).cloned();
            let Some(slot) = slot else {
                let failure = ProviderFailure {
                    provider: entry.provider.clone(),
                    attempt: 1,
                    message: format!("UnknownProvider: '{}' is not registered", entry.provider),
                };
                record_attempt(trace, request, &failure.provider, 1, Err(&failure.message));
                failures.push(failure);
                continue;
            };
            for attempt in 1..=route.retry_limit + 1 {
                let result = {
                    let _guard = slot.exclusive.as_ref().map(|m| m.lock());
                    slot.backend.complete(request)
                };
                record_attempt(trace, request, &entry.provider, attempt, result.as_deref().map_err(String::as_str));
                match result {
                    Ok(text) => {
                        return Ok(ModelResponse {
                            text,
                            provider: entry.provider.clone(),
                            model_id: request.model_id.clone(),
                        })
                    }
                    Err(message) => failures.push(ProviderFailure {
                        provider: entry.provider.clone(),
                        attempt,
                        message,
                    }),
                }
            }
        }
        Err(Error::AllProvidersFailed(failures))
    }
}

fn record_attempt(
    trace: Option<&TraceRecorder>,
    request: &ModelRequest,
    provider: &str,
    attempt: u32,
    result: std::result::Result<&str, &str>,
) {
    let Some(trace) = trace else { return };
    let mut payload = json!({
        "provider": provider,
        "model_id": request.model_id,
        "tag": request.tag,
        "attempt": attempt,
        "prompt": request.last_user_message().unwrap_or_default(),
    });
    match result {
        Ok(text) => {
            payload["ok"] = true.into();
            payload["response"] = text.into();
        }
        Err(msg) => {
            payload["ok"] = false.into();
            payload["error"] = msg.into();
        }
    }
    // A closed trace means the caller has finished observing; dropping the event is correct.
    let _ = trace.record(EventKind::ModelCall, payload, None);
}
