//! Bundled offline tasks with scripted models.
//!
//! `string-target`: the actor names the wrong fruit until its prompt carries an explicit
//! instruction. `arithmetic-format`: the actor computes correctly but wraps the number in prose
//! until its prompt demands digits only.

use std::sync::Arc;

use serde_json::json;

use crate::error::{Error, Result};
use crate::gateway::{build_gateway, Matcher, ProviderConfig, ProviderKind, ScriptedRule};
use crate::hub::ResourceHub;
use crate::optimizers::OptimizerConfig;
use crate::record::RegistrationRecord;
use crate::sepl::{run_loop, AgentSystem, LoopOutcome, Objective};

pub const ACTOR: &str = "actor";
pub const CRITIC: &str = "critic";

#[derive(Debug, Clone)]
pub struct ToyTask {
    pub name: &'static str,
    pub agent: &'static str,
    pub objective: Objective,
    pub records: Vec<RegistrationRecord>,
    pub providers: Vec<ProviderConfig>,
    pub expected_score: f64,
}

fn scripted(name: &str, rules: Vec<ScriptedRule>, fallback: &str) -> ProviderConfig {
    ProviderConfig {
        name: name.to_string(),
        kind: ProviderKind::Scripted,
        base_url: None,
        api_key_env: None,
        model: None,
        rules: Some(rules),
        fallback: Some(fallback.to_string()),
    }
}

/// Critic rules shared by every optimizer: REFLECT/SELECT for reflection and the RL variants,
/// EVALUATE/UPDATE for TextGrad, REFINE for solution refinement.
fn critic(var: &str, diagnosis: &str, improved: &str, refined: &str) -> ProviderConfig {
    let block = format!("<improved>\n{improved}\n</improved>");
    let rules = vec![
        ScriptedRule::pattern("^REFLECT", format!("HYPOTHESIS [high] {var}: {diagnosis}")),
        ScriptedRule::pattern("^SELECT", format!("PROPOSAL {var}\nRATIONALE: {diagnosis}\n{block}")),
        ScriptedRule::pattern("^EVALUATE", diagnosis.to_string()),
        ScriptedRule::pattern("^UPDATE", block.clone()),
        ScriptedRule::pattern("^REFINE", format!("<improved>\n{refined}\n</improved>")),
    ];
    scripted(CRITIC, rules, "NONE")
}

impl ToyTask {
    pub const NAMES: [&'static str; 2] = ["string-target", "arithmetic-format"];

    pub fn by_name(name: &str) -> Result<ToyTask> {
        match name {
            "string-target" => Ok(Self::string_target()),
            "arithmetic-format" => Ok(Self::arithmetic_format()),
            other => Err(Error::InvalidConfig(format!(
                "unknown toy task '{other}' (expected one of {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn string_target() -> ToyTask {
        let var = "prompt:solver#entity.mapping.prompt_text";
        ToyTask {
            name: "string-target",
            agent: "fruit-agent",
            objective: Objective::exact("Name the fruit that is long, curved and yellow.", "banana"),
            records: vec![
                RegistrationRecord::prompt("solver", "System prompt of the fruit agent", "Reply with a fruit name.")
                    .trainable(true),
                RegistrationRecord::agent("fruit-agent", "Answers fruit riddles", &["solver"], &[], ACTOR),
            ],
            providers: vec![
                scripted(
                    ACTOR,
                    vec![ScriptedRule::with(Matcher::Substring("instruction".into()), vec!["FINAL: banana".into()])],
                    "FINAL: apple",
                ),
                critic(
                    var,
                    "the prompt gives no instruction that ties the answer to the riddle",
                    "Follow this instruction: read the riddle and reply with exactly the one fruit it describes.",
                    "banana",
                ),
            ],
            expected_score: 1.0,
        }
    }

    pub fn arithmetic_format() -> ToyTask {
        let var = "prompt:formatter#entity.mapping.prompt_text";
        let adder = RegistrationRecord::tool("adder", "Adds two integers", "input.a + input.b").with_metadata(
            "arguments",
            json!([
                {"name": "a", "type": "integer", "description": "first addend"},
                {"name": "b", "type": "integer", "description": "second addend"}
            ]),
        );
        ToyTask {
            name: "arithmetic-format",
            agent: "calc-agent",
            objective: Objective::exact("What is 19 + 23?", "42"),
            records: vec![
                RegistrationRecord::prompt(
                    "formatter",
                    "Output-format prompt of the calculator agent",
                    "Explain your reasoning, then give the result.",
                )
                .trainable(true),
                adder,
                RegistrationRecord::agent("calc-agent", "Solves arithmetic questions", &["formatter"], &["adder"], ACTOR),
            ],
            providers: vec![
                scripted(
                    ACTOR,
                    vec![ScriptedRule::substring("digits only", "FINAL: 42")],
                    "FINAL: The answer is 42",
                ),
                critic(
                    var,
                    "the number is right but it is wrapped in prose; the reply must be the bare number",
                    "Compute the result and reply with digits only.",
                    "42",
                ),
            ],
            expected_score: 1.0,
        }
    }

    pub fn hub(&self) -> Result<Arc<ResourceHub>> {
        let hub = ResourceHub::new(Arc::new(build_gateway(&self.providers)?));
        for r in &self.records {
            hub.register(r.clone())?;
        }
        Ok(Arc::new(hub))
    }

    pub fn system(&self) -> Result<AgentSystem> {
        Ok(AgentSystem::new(self.hub()?, self.agent))
    }

    /// Fresh hub, then the configured optimizer for `config.T` rounds.
    pub fn run(&self, config: &OptimizerConfig) -> Result<LoopOutcome> {
        let mut system = self.system()?;
        if let Some(actor) = &config.models.actor {
            system = system.with_actor_model(actor.clone());
        }
        let mut optimizer = config.build()?;
        run_loop(&system, &self.objective, optimizer.as_mut(), config.t)
    }
}
