use std::sync::Arc;

use serde_json::{json, Value};

use super::{ModelBackend, ModelRequest};

/// Transport seam for HTTP providers; tests substitute an in-memory implementation.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport {
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_json::<Value>().map_err(|e| e.to_string())
    }
}

/// OpenAI-compatible chat-completions provider.
pub struct HttpBackend {
    base_url: String,
    api_key_env: Option<String>,
    model: Option<String>,
    transport: Arc<dyn HttpTransport>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key_env: Option<String>) -> Self {
        Self::with_transport(base_url, api_key_env, Arc::new(UreqTransport::default()))
    }

    pub fn with_transport(
        base_url: impl Into<String>,
        api_key_env: Option<String>,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        HttpBackend {
            base_url: base_url.into(),
            api_key_env,
            model: None,
            transport,
        }
    }

    /// Provider-side model name; defaults to the request's model id.
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

impl ModelBackend for HttpBackend {
    fn complete(&self, request: &ModelRequest) -> Result<String, String> {
        let key = match &self.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
            None => None,
        };
        let body = json!({
            "model": self.model.as_deref().unwrap_or(&request.model_id),
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let resp = self.transport.post_json(&self.endpoint(), key.as_deref(), &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("malformed completion response: {resp}"))
    }
}
