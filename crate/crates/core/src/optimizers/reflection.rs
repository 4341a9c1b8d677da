use super::{reflect_with_model, select_with_model};
use crate::error::Result;
use crate::sepl::{Hypothesis, Optimizer, Proposal, RoundContext};

/// Trace-driven critique by the evaluator model, then targeted rewrites by the optimizer model.
#[derive(Debug, Clone)]
pub struct Reflection {
    evaluator: String,
    optimizer: String,
}

impl Reflection {
    pub fn new(evaluator: impl Into<String>, optimizer: impl Into<String>) -> Self {
        Reflection {
            evaluator: evaluator.into(),
            optimizer: optimizer.into(),
        }
    }
}

impl Optimizer for Reflection {
    fn name(&self) -> &str {
        "reflection"
    }

    fn reflect(&mut self, cx: &RoundContext<'_>) -> Result<Vec<Hypothesis>> {
        // Nothing to attribute when the committed state already scores perfectly.
        if cx.evaluation.score >= 1.0 && cx.evaluation.all_safe() {
            return Ok(Vec::new());
        }
        Ok(reflect_with_model(cx, &self.evaluator, "", "reflection/reflect"))
    }

    fn select(&mut self, cx: &RoundContext<'_>, hypotheses: &[Hypothesis]) -> Result<Vec<Proposal>> {
        Ok(select_with_model(cx, &self.optimizer, hypotheses, "reflection/select"))
    }
}
