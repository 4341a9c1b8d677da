use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ModelBackend, ModelRequest};
use crate::error::{Error, Result};

/// How a rule matches the last user message of a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Matcher {
    Exact(String),
    Substring(String),
    Pattern(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub matcher: Matcher,
    /// Optional substring that the request tag must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// The n-th match returns `responses[n]`; the last response repeats.
    pub responses: Vec<String>,
}

impl ScriptedRule {
    pub fn exact(text: impl Into<String>, response: impl Into<String>) -> Self {
        Self::with(Matcher::Exact(text.into()), vec![response.into()])
    }

    pub fn substring(text: impl Into<String>, response: impl Into<String>) -> Self {
        Self::with(Matcher::Substring(text.into()), vec![response.into()])
    }

    pub fn pattern(re: impl Into<String>, response: impl Into<String>) -> Self {
        Self::with(Matcher::Pattern(re.into()), vec![response.into()])
    }

    pub fn with(matcher: Matcher, responses: Vec<String>) -> Self {
        ScriptedRule {
            matcher,
            tag: None,
            responses,
        }
    }

    pub fn sequence(matcher: Matcher, responses: &[&str]) -> Self {
        Self::with(matcher, responses.iter().map(|s| s.to_string()).collect())
    }

    pub fn for_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }
}

enum Compiled {
    Exact(String),
    Substring(String),
    Pattern(Regex),
}

impl Compiled {
    fn matches(&self, text: &str) -> bool {
        match self {
            Compiled::Exact(s) => text == s,
            Compiled::Substring(s) => text.contains(s.as_str()),
            Compiled::Pattern(re) => re.is_match(text),
        }
    }
}

/// Deterministic backend for offline runs: first matching rule wins.
pub struct ScriptedBackend {
    rules: Vec<(Compiled, ScriptedRule)>,
    calls: Mutex<Vec<usize>>,
    fallback: Option<String>,
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("rules", &self.rules.iter().map(|(_, r)| r).collect::<Vec<_>>())
            .field("fallback", &self.fallback)
            .finish()
    }
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in rules {
            if rule.responses.is_empty() {
                return Err(Error::InvalidConfig("scripted rule has no responses".into()));
            }
            let c = match &rule.matcher {
                Matcher::Exact(s) => Compiled::Exact(s.clone()),
                Matcher::Substring(s) => Compiled::Substring(s.clone()),
                Matcher::Pattern(p) => Compiled::Pattern(
                    Regex::new(p).map_err(|e| Error::InvalidConfig(format!("bad pattern '{p}': {e}")))?,
                ),
            };
            compiled.push((c, rule));
        }
        let n = compiled.len();
        Ok(ScriptedBackend {
            rules: compiled,
            calls: Mutex::new(vec![0; n]),
            fallback: None,
        })
    }

    /// Response used when no rule matches; without one, unmatched requests fail.
    pub fn with_fallback(mut self, response: impl Into<String>) -> Self {
        self.fallback = Some(response.into());
        self
    }

    pub fn rules(&self) -> impl Iterator<Item = &ScriptedRule> {
        self.rules.iter().map(|(_, r)| r)
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> std::result::Result<String, String> {
        let text = request.last_user_message().unwrap_or_default();
        for (idx, (compiled, rule)) in self.rules.iter().enumerate() {
            if let Some(tag) = &rule.tag {
                if !request.tag.contains(tag.as_str()) {
                    continue;
                }
            }
            if compiled.matches(text) {
                let mut calls = self.calls.lock();
                let n = calls[idx];
                calls[idx] += 1;
                let i = n.min(rule.responses.len() - 1);
                return Ok(rule.responses[i].clone());
            }
        }
        self.fallback
            .clone()
            .ok_or_else(|| "no scripted rule matched".to_string())
    }
}
