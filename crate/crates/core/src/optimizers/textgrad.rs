use std::collections::BTreeMap;

use serde_json::json;

use super::{ask, extract_improved, summarize_trace};
use crate::error::Result;
use crate::record::EntityKind;
use crate::sepl::{Evaluation, Hypothesis, Optimizer, Proposal, RoundContext};
use crate::trace::EventKind;
use crate::variables::{EvolvableVariable, Origin};

/// Evaluator critique that means "stop": a local convention, since a critique string has no
/// natural convergence test.
pub const NO_ISSUES: &str = "NO_ISSUES";

/// Textual gradient descent over prompt variables.
///
/// One critique per round is copied into the gradient buffer of every learnable prompt;
/// each prompt is then rewritten from its role, current value and buffered feedback.
#[derive(Debug, Clone)]
pub struct TextGrad {
    evaluator: String,
    optimizer: String,
    gradients: BTreeMap<String, Vec<String>>,
    converged: bool,
}

fn is_optimizable_prompt(v: &EvolvableVariable) -> bool {
    v.learnable && matches!(v.origin, Origin::Resource { kind: EntityKind::Prompt, .. })
}

impl TextGrad {
    pub fn new(evaluator: impl Into<String>, optimizer: impl Into<String>) -> Self {
        TextGrad {
            evaluator: evaluator.into(),
            optimizer: optimizer.into(),
            gradients: BTreeMap::new(),
            converged: false,
        }
    }

    /// Variable id → feedback accumulated this round.
    pub fn gradients(&self) -> &BTreeMap<String, Vec<String>> {
        &self.gradients
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    fn loss_prompt(cx: &RoundContext<'_>) -> String {
        format!(
            "EVALUATE\nTask: {}\nAnswer: {}\nScore: {}\nTrace:\n{}\n\
             Critique the answer in plain language, or reply {NO_ISSUES} if nothing should change.",
            cx.objective.task,
            cx.evaluation.answer,
            cx.evaluation.score,
            summarize_trace(cx.trace)
        )
    }

    fn update_prompt(v: &EvolvableVariable, feedback: &[String]) -> String {
        format!(
            "UPDATE\nVariable: {}\nRole: {}\nCurrent value:\n{}\nFeedback:\n{}\n\
             Return the complete improved value between a line containing only <improved> \
             and a line containing only </improved>.",
            v.id,
            v.role_description,
            v.value,
            feedback.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n")
        )
    }
}

impl Optimizer for TextGrad {
    fn name(&self) -> &str {
        "textgrad"
    }

    fn reflect(&mut self, cx: &RoundContext<'_>) -> Result<Vec<Hypothesis>> {
        self.gradients.clear();
        let targets: Vec<&EvolvableVariable> = cx.variables.all().iter().filter(|v| is_optimizable_prompt(v)).collect();
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let Some(critique) = ask(cx, &self.evaluator, Self::loss_prompt(cx), "textgrad/loss") else {
            return Ok(Vec::new());
        };
        let critique = critique.trim().to_string();
        if critique == NO_ISSUES {
            self.converged = true;
            let _ = cx.recorder.record(EventKind::Decision, json!({ "textgrad": NO_ISSUES }), None);
            return Ok(Vec::new());
        }
        for v in &targets {
            self.gradients.entry(v.id.clone()).or_default().push(critique.clone());
        }
        Ok(vec![Hypothesis {
            text: critique,
            targets: targets.iter().map(|v| v.id.clone()).collect(),
            severity: "medium".into(),
        }])
    }

    fn select(&mut self, cx: &RoundContext<'_>, _hypotheses: &[Hypothesis]) -> Result<Vec<Proposal>> {
        let mut out = Vec::new();
        for (id, feedback) in &self.gradients {
            let Some(v) = cx.variables.get(id) else { continue };
            let Some(reply) = ask(cx, &self.optimizer, Self::update_prompt(v, feedback), "textgrad/update") else {
                continue;
            };
            match extract_improved(&reply) {
                Some(value) => out.push(Proposal::new(id.clone(), value, feedback.join(" | "))),
                None => cx.warn(format!("textgrad/update: no delimited value for '{id}', left unchanged")),
            }
        }
        Ok(out)
    }

    fn observe(&mut self, _accepted: bool, _evaluation: &Evaluation) {
        self.gradients.clear();
    }

    fn finished(&self) -> bool {
        self.converged
    }
}
