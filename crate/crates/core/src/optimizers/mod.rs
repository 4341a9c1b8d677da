//! The four optimizer instantiations of the evolution loop and their shared text formats.
//!
//! Critic replies use line formats that scripted backends can produce:
//!
//! ```text
//! HYPOTHESIS [high] prompt:solver#entity.mapping.prompt_text: the prompt never names the target
//!
//! PROPOSAL prompt:solver#entity.mapping.prompt_text
//! RATIONALE: name the target explicitly
//! <improved>
//! new value, possibly spanning lines
//! </improved>
//! ```

mod reflection;
mod rl;
pub mod signals;
pub mod similarity;
mod textgrad;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{Error, Result};
use crate::gateway::ModelRequest;
use crate::sepl::{Hypothesis, Optimizer, Proposal, RoundContext, VariableSet};
use crate::trace::Trace;
use crate::variables::OUTPUT_ID;

pub use reflection::Reflection;
pub use rl::{grpo_loop, reinforcepp_loop, Grpo, ReinforcePlusPlus};
pub use signals::{GroupSignals, RlConfig, RlSignals};
pub use textgrad::{TextGrad, NO_ISSUES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Reflection,
    Textgrad,
    Reinforcepp,
    Grpo,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Reflection,
        OptimizerKind::Textgrad,
        OptimizerKind::Reinforcepp,
        OptimizerKind::Grpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Reflection => "reflection",
            OptimizerKind::Textgrad => "textgrad",
            OptimizerKind::Reinforcepp => "reinforcepp",
            OptimizerKind::Grpo => "grpo",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown optimizer '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    /// Overrides the agent's own model when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default = "default_critic")]
    pub evaluator: String,
    #[serde(default = "default_critic")]
    pub optimizer: String,
}

fn default_critic() -> String {
    "critic".to_string()
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            actor: None,
            evaluator: default_critic(),
            optimizer: default_critic(),
        }
    }
}

/// `{optimizer, epsilon, beta, epsilon0, K, T, models:{actor, evaluator, optimizer}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub optimizer: OptimizerKind,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_epsilon0")]
    pub epsilon0: f64,
    #[serde(rename = "K", default = "d_k")]
    pub k: usize,
    #[serde(rename = "T", default = "d_t")]
    pub t: usize,
    #[serde(default)]
    pub models: ModelsConfig,
}

fn d_epsilon() -> f64 {
    RlConfig::default().epsilon
}
fn d_beta() -> f64 {
    RlConfig::default().beta
}
fn d_epsilon0() -> f64 {
    RlConfig::default().epsilon0
}
fn d_k() -> usize {
    RlConfig::default().k
}
fn d_t() -> usize {
    RlConfig::default().t
}

impl OptimizerConfig {
    pub fn new(optimizer: OptimizerKind) -> Self {
        OptimizerConfig {
            optimizer,
            epsilon: d_epsilon(),
            beta: d_beta(),
            epsilon0: d_epsilon0(),
            k: d_k(),
            t: d_t(),
            models: ModelsConfig::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        let c: OptimizerConfig =
            serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
        c.rl().validate()?;
        Ok(c)
    }

    pub fn rl(&self) -> RlConfig {
        RlConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            epsilon0: self.epsilon0,
            k: self.k,
            t: self.t,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Optimizer>> {
        self.rl().validate()?;
        let m = &self.models;
        Ok(match self.optimizer {
            OptimizerKind::Reflection => Box::new(Reflection::new(&m.evaluator, &m.optimizer)),
            OptimizerKind::Textgrad => Box::new(TextGrad::new(&m.evaluator, &m.optimizer)),
            OptimizerKind::Reinforcepp => Box::new(ReinforcePlusPlus::new(self.rl(), &m.evaluator, &m.optimizer)),
            OptimizerKind::Grpo => Box::new(Grpo::new(self.rl(), &m.evaluator, &m.optimizer)),
        })
    }
}

const TRACE_LINE_LIMIT: usize = 240;

/// One line per event: `[seq] kind: payload`, payloads truncated.
pub fn summarize_trace(trace: &Trace) -> String {
    trace
        .events
        .iter()
        .map(|e| {
            let mut payload = canonical::to_string(&e.payload);
            if payload.chars().count() > TRACE_LINE_LIMIT {
                payload = payload.chars().take(TRACE_LINE_LIMIT).collect::<String>() + "...";
            }
            let kind = serde_json::to_value(e.kind).expect("kind");
            format!("[{}] {}: {payload}", e.seq, kind.as_str().unwrap_or_default())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn describe_variables(variables: &VariableSet) -> String {
    variables
        .all()
        .iter()
        .map(|v| {
            let mask = if v.learnable { "learnable" } else { "frozen" };
            format!("- {} ({mask}): {}", v.id, v.value.replace('\n', "\\n"))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn describe_safety(cx: &RoundContext<'_>) -> String {
    cx.evaluation
        .safety
        .iter()
        .map(|(k, ok)| format!("{k}={}", if *ok { "pass" } else { "fail" }))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Reflect prompt. `extra` carries optimizer-specific signal lines.
pub(crate) fn reflect_prompt(cx: &RoundContext<'_>, extra: &str) -> String {
    let mut p = format!(
        "REFLECT\nTask: {}\nAnswer: {}\nScore: {}\nSafety: {}\n",
        cx.objective.task,
        cx.evaluation.answer,
        cx.evaluation.score,
        describe_safety(cx)
    );
    if !extra.is_empty() {
        p.push_str(extra);
        p.push('\n');
    }
    p.push_str(&format!(
        "Variables:\n{}\nTrace:\n{}\n\
         Reply with one line per failure hypothesis:\n\
         HYPOTHESIS [severity] <variable-id>[, <variable-id>]: <diagnosis>\n\
         or NONE when nothing needs to change.",
        describe_variables(cx.variables),
        summarize_trace(cx.trace)
    ));
    p
}

pub(crate) fn select_prompt(cx: &RoundContext<'_>, hypotheses: &[Hypothesis]) -> String {
    let hyps = hypotheses
        .iter()
        .map(|h| format!("- [{}] {}: {}", h.severity, h.targets.join(", "), h.text))
        .collect::<Vec<_>>()
        .join("\n");
    let learnable = cx
        .variables
        .theta()
        .map(|v| format!("{} ({})\n{}", v.id, v.role_description, v.value))
        .collect::<Vec<_>>()
        .join("\n\n");
    format!(
        "SELECT\nTask: {}\nAnswer: {}\nHypotheses:\n{hyps}\nLearnable variables:\n{learnable}\n\
         Reply with one block per change:\n\
         PROPOSAL <variable-id>\nRATIONALE: <why>\n<improved>\n<complete new value>\n</improved>",
        cx.objective.task, cx.evaluation.answer
    )
}

/// Send `prompt` to `model`, recording the call in the round trace. Failures become a warning.
pub(crate) fn ask(cx: &RoundContext<'_>, model: &str, prompt: String, tag: &str) -> Option<String> {
    let request = ModelRequest::user(model, prompt).with_tag(tag);
    match cx.system.hub.gateway().complete_model(&request, Some(cx.recorder)) {
        Ok(r) => Some(r.text),
        Err(e) => {
            cx.warn(format!("{tag}: model call failed: {e}"));
            None
        }
    }
}

/// Hypotheses from `HYPOTHESIS` lines. `None` when the text follows neither that format nor `NONE`.
/// Targets outside `variables` are dropped, as are hypotheses left without targets.
pub fn parse_hypotheses(text: &str, variables: &VariableSet) -> Option<Vec<Hypothesis>> {
    if text.trim() == "NONE" {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut saw_line = false;
    for line in text.lines().map(str::trim) {
        let Some(rest) = line.strip_prefix("HYPOTHESIS") else {
            continue;
        };
        let rest = rest.trim_start();
        let (severity, rest) = match rest.strip_prefix('[').and_then(|r| r.split_once(']')) {
            Some((sev, tail)) => (sev.trim().to_string(), tail.trim_start()),
            None => ("medium".to_string(), rest),
        };
        // Ids contain ':' themselves, so the separator is the first ": " after the id list.
        let Some((ids, diagnosis)) = rest.split_once(": ") else {
            continue;
        };
        saw_line = true;
        let targets: Vec<String> = ids
            .split(',')
            .map(str::trim)
            .filter(|id| variables.get(id).is_some())
            .map(str::to_string)
            .collect();
        if !targets.is_empty() {
            out.push(Hypothesis {
                text: diagnosis.trim().to_string(),
                targets,
                severity,
            });
        }
    }
    saw_line.then_some(out)
}

/// Content between the exact lines `<improved>` and `</improved>`.
pub fn extract_improved(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| l.trim_end() == "<improved>")?;
    let end = lines[start + 1..].iter().position(|l| l.trim_end() == "</improved>")? + start + 1;
    Some(lines[start + 1..end].join("\n"))
}

/// Proposals from `PROPOSAL` blocks. `None` when no block is present and the text is not `NONE`.
pub fn parse_proposals(text: &str) -> Option<Vec<Proposal>> {
    if text.trim() == "NONE" {
        return Some(Vec::new());
    }
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with("PROPOSAL "))
        .map(|(i, _)| i)
        .collect();
    if starts.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for (n, &s) in starts.iter().enumerate() {
        let end = starts.get(n + 1).copied().unwrap_or(lines.len());
        let block = &lines[s..end];
        let id = block[0].trim_start().trim_start_matches("PROPOSAL ").trim().to_string();
        let rationale = block
            .iter()
            .find_map(|l| l.trim_start().strip_prefix("RATIONALE:"))
            .map(|r| r.trim().to_string())
            .unwrap_or_default();
        if let Some(value) = extract_improved(&block.join("\n")) {
            out.push(Proposal {
                variable_id: id,
                value,
                rationale,
            });
        }
    }
    Some(out)
}

/// Keep proposals aimed at Θ or the output artifact; warn about the rest.
pub(crate) fn admissible(cx: &RoundContext<'_>, proposals: Vec<Proposal>) -> Vec<Proposal> {
    proposals
        .into_iter()
        .filter(|p| {
            let ok = p.variable_id == OUTPUT_ID || cx.variables.get(&p.variable_id).is_some_and(|v| v.learnable);
            if !ok {
                cx.warn(format!("dropped proposal for non-learnable or unknown variable '{}'", p.variable_id));
            }
            ok
        })
        .collect()
}

/// Shared select step: one optimizer-model call over the hypotheses.
pub(crate) fn select_with_model(cx: &RoundContext<'_>, model: &str, hypotheses: &[Hypothesis], tag: &str) -> Vec<Proposal> {
    if hypotheses.is_empty() {
        return Vec::new();
    }
    let Some(reply) = ask(cx, model, select_prompt(cx, hypotheses), tag) else {
        return Vec::new();
    };
    match parse_proposals(&reply) {
        Some(p) => admissible(cx, p),
        None => {
            cx.warn(format!("{tag}: unparseable proposal reply"));
            Vec::new()
        }
    }
}

/// Shared reflect step: one evaluator-model call; unparseable replies yield no hypotheses.
pub(crate) fn reflect_with_model(cx: &RoundContext<'_>, model: &str, extra: &str, tag: &str) -> Vec<Hypothesis> {
    let Some(reply) = ask(cx, model, reflect_prompt(cx, extra), tag) else {
        return Vec::new();
    };
    match parse_hypotheses(&reply, cx.variables) {
        Some(h) => h,
        None => {
            cx.warn(format!("{tag}: unparseable critique"));
            Vec::new()
        }
    }
}
