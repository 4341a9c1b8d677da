use std::path::Path;
use std::sync::LazyLock;

use rhai::{Engine, Scope};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::similarity;

pub const NO_RUNTIME_ERROR: &str = "no_runtime_error";
pub const OUTPUT_NONEMPTY: &str = "output_nonempty";
pub const CONTRACT_PARSE_OK: &str = "contract_parse_ok";
/// Set by the loop when a proposal targets a variable outside the learnable set.
pub const MASK_RESPECTED: &str = "mask_respected";

pub const DEFAULT_SAFETY: [&str; 3] = [NO_RUNTIME_ERROR, OUTPUT_NONEMPTY, CONTRACT_PARSE_OK];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessKind {
    ExactMatch,
    Substring,
    /// A rhai expression over `answer` returning a bool.
    PredicateScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessSpec {
    pub kind: SuccessKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreSpec {
    /// 1 on success, else 0.
    Success,
    /// Token similarity to `reference`, or to the success value when absent.
    Similarity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
}

fn default_score() -> ScoreSpec {
    ScoreSpec::Success
}

fn default_safety() -> Vec<String> {
    DEFAULT_SAFETY.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub task: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
    pub success: SuccessSpec,
    #[serde(default = "default_score")]
    pub score: ScoreSpec,
    #[serde(default = "default_safety")]
    pub safety: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

static PREDICATES: LazyLock<Engine> = LazyLock::new(|| {
    let mut e = Engine::new();
    e.set_max_operations(100_000);
    e
});

impl Objective {
    pub fn exact(task: impl Into<String>, answer: impl Into<String>) -> Self {
        Objective {
            task: task.into(),
            attachments: Vec::new(),
            success: SuccessSpec {
                kind: SuccessKind::ExactMatch,
                value: answer.into(),
            },
            score: ScoreSpec::Success,
            safety: default_safety(),
            threshold: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Objective> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        let o: Objective =
            serde_json::from_str(&text).map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!("threshold {t} outside [0, 1]")));
            }
        }
        if let Some(s) = self.safety.iter().find(|s| !DEFAULT_SAFETY.contains(&s.as_str())) {
            return Err(Error::InvalidConfig(format!("unknown safety invariant '{s}'")));
        }
        if self.success.kind == SuccessKind::PredicateScript {
            PREDICATES
                .compile_expression(&self.success.value)
                .map_err(|e| Error::InvalidConfig(format!("success predicate: {e}")))?;
        }
        Ok(())
    }

    /// The expected answer, when the success predicate names one.
    pub fn target(&self) -> Option<&str> {
        match self.success.kind {
            SuccessKind::ExactMatch | SuccessKind::Substring => Some(&self.success.value),
            SuccessKind::PredicateScript => None,
        }
    }

    pub fn is_success(&self, answer: &str) -> bool {
        let norm = |s: &str| s.trim().to_lowercase();
        match self.success.kind {
            SuccessKind::ExactMatch => norm(answer) == norm(&self.success.value),
            SuccessKind::Substring => norm(answer).contains(&norm(&self.success.value)),
            SuccessKind::PredicateScript => {
                let mut scope = Scope::new();
                scope.push("answer", answer.to_string());
                PREDICATES
                    .eval_expression_with_scope::<bool>(&mut scope, &self.success.value)
                    .unwrap_or(false)
            }
        }
    }

    /// Score in [0, 1].
    pub fn score(&self, answer: &str) -> f64 {
        match &self.score {
            ScoreSpec::Success => {
                if self.is_success(answer) {
                    1.0
                } else {
                    0.0
                }
            }
            ScoreSpec::Similarity { reference } => {
                let reference = reference.as_deref().unwrap_or(&self.success.value);
                similarity::similarity(answer, reference).clamp(0.0, 1.0)
            }
        }
    }

    pub fn is_converged_score(&self, score: f64) -> bool {
        score >= 1.0 || self.threshold.is_some_and(|t| score >= t)
    }
}
