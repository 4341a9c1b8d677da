use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Gateway, HttpBackend, ScriptedBackend, ScriptedRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    Http,
}

/// One entry of the provider configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key. Keys are never stored in config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<ScriptedRule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

pub fn load_providers(path: impl AsRef<Path>) -> Result<Vec<ProviderConfig>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))
}

pub fn build_gateway(providers: &[ProviderConfig]) -> Result<Gateway> {
    let gateway = Gateway::new();
    for p in providers {
        match p.kind {
            ProviderKind::Scripted => {
                let mut backend = ScriptedBackend::new(p.rules.clone().unwrap_or_default())?;
                if let Some(fb) = &p.fallback {
                    backend = backend.with_fallback(fb.clone());
                }
                gateway.register_backend(p.name.clone(), Arc::new(backend))?;
            }
            ProviderKind::Http => {
                let url = p.base_url.clone().ok_or_else(|| {
                    Error::InvalidConfig(format!("http provider '{}' needs base_url", p.name))
                })?;
                let mut backend = HttpBackend::new(url, p.api_key_env.clone());
                if let Some(m) = &p.model {
                    backend = backend.with_model(m.clone());
                }
                gateway.register_backend(p.name.clone(), Arc::new(backend))?;
            }
        }
    }
    Ok(gateway)
}
