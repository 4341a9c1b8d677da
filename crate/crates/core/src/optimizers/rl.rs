use std::thread;

use serde_json::json;

use super::signals::{grpo_signals, reinforcepp_signals, GroupSignals, RlConfig, RlSignals};
use super::similarity::reward;
use super::{ask, extract_improved, reflect_with_model, select_with_model};
use crate::canonical;
use crate::error::{Error, Result};
use crate::sepl::{run_loop, AgentSystem, Hypothesis, LoopOutcome, Objective, Optimizer, Proposal, RoundContext};
use crate::trace::EventKind;
use crate::variables::OUTPUT_ID;

fn target_of(cx: &RoundContext<'_>) -> Result<String> {
    cx.objective
        .target()
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidConfig("RL optimizers need an exact or substring target answer".into()))
}

/// Ask the optimizer model for a refined final answer; proposes an output override.
fn refine(cx: &RoundContext<'_>, model: &str, context: &str) -> Option<Proposal> {
    let prompt = format!(
        "REFINE\nTask: {}\nCurrent answer: {}\n{context}\n\
         Return the improved final answer between a line containing only <improved> \
         and a line containing only </improved>.",
        cx.objective.task, cx.evaluation.answer
    );
    let reply = ask(cx, model, prompt, "rl/refine")?;
    match extract_improved(&reply) {
        Some(v) => Some(Proposal::new(OUTPUT_ID, v, "solution refinement")),
        None => {
            cx.warn("rl/refine: no delimited answer");
            None
        }
    }
}

fn signal_lines(s: &RlSignals) -> String {
    format!(
        "RL signals: reward={} advantage={} objective={} ratio={} penalty={}",
        s.reward, s.advantage, s.objective, s.ratio, s.penalty
    )
}

/// Reflection conditioned on the reward, penalty and clipped objective of the current answer.
#[derive(Debug, Clone)]
pub struct ReinforcePlusPlus {
    config: RlConfig,
    evaluator: String,
    optimizer: String,
    y_star: String,
    /// Reference solution for the penalty; the baseline answer unless set.
    y_sft: Option<String>,
    y_prev: String,
    last: Option<RlSignals>,
    satisfied: bool,
    pub refine_solution: bool,
}

impl ReinforcePlusPlus {
    pub fn new(config: RlConfig, evaluator: impl Into<String>, optimizer: impl Into<String>) -> Self {
        ReinforcePlusPlus {
            config,
            evaluator: evaluator.into(),
            optimizer: optimizer.into(),
            y_star: String::new(),
            y_sft: None,
            y_prev: String::new(),
            last: None,
            satisfied: false,
            refine_solution: false,
        }
    }

    pub fn with_reference(mut self, y_sft: impl Into<String>) -> Self {
        self.y_sft = Some(y_sft.into());
        self
    }

    pub fn last_signals(&self) -> Option<&RlSignals> {
        self.last.as_ref()
    }
}

impl Optimizer for ReinforcePlusPlus {
    fn name(&self) -> &str {
        "reinforcepp"
    }

    fn begin(&mut self, cx: &RoundContext<'_>) -> Result<()> {
        self.config.validate()?;
        self.y_star = target_of(cx)?;
        if self.y_sft.is_none() {
            self.y_sft = Some(cx.evaluation.answer.clone());
        }
        self.y_prev = cx.evaluation.answer.clone();
        self.satisfied = reward(&cx.evaluation.answer, &self.y_star) == 1.0;
        Ok(())
    }

    fn reflect(&mut self, cx: &RoundContext<'_>) -> Result<Vec<Hypothesis>> {
        let y_t = &cx.evaluation.answer;
        let y_sft = self.y_sft.as_deref().unwrap_or(y_t);
        let s = reinforcepp_signals(y_t, &self.y_prev, &self.y_star, y_sft, &self.config);
        let _ = cx
            .recorder
            .record(EventKind::Decision, json!({ "reinforcepp": canonical::to_value(&s) }), None);
        self.y_prev = y_t.clone();
        self.last = Some(s);
        if s.reward == 1.0 {
            self.satisfied = true;
            return Ok(Vec::new());
        }
        Ok(reflect_with_model(cx, &self.evaluator, &signal_lines(&s), "reinforcepp/reflect"))
    }

    fn select(&mut self, cx: &RoundContext<'_>, hypotheses: &[Hypothesis]) -> Result<Vec<Proposal>> {
        let mut out = select_with_model(cx, &self.optimizer, hypotheses, "reinforcepp/select");
        if self.refine_solution {
            let ctx = self.last.as_ref().map(signal_lines).unwrap_or_default();
            out.extend(refine(cx, &self.optimizer, &ctx));
        }
        Ok(out)
    }

    fn finished(&self) -> bool {
        self.satisfied
    }
}

/// Reflection conditioned on K sampled rollouts and their group-normalized signals.
#[derive(Debug, Clone)]
pub struct Grpo {
    config: RlConfig,
    evaluator: String,
    optimizer: String,
    y_star: String,
    last: Option<(Vec<String>, GroupSignals)>,
    satisfied: bool,
    pub refine_solution: bool,
}

impl Grpo {
    pub fn new(config: RlConfig, evaluator: impl Into<String>, optimizer: impl Into<String>) -> Self {
        Grpo {
            config,
            evaluator: evaluator.into(),
            optimizer: optimizer.into(),
            y_star: String::new(),
            last: None,
            satisfied: false,
            refine_solution: false,
        }
    }

    /// Candidates and signals of the latest round.
    pub fn last_group(&self) -> Option<&(Vec<String>, GroupSignals)> {
        self.last.as_ref()
    }

    /// K rollouts of the committed state, run concurrently. A failed rollout yields "".
    fn sample(&self, cx: &RoundContext<'_>) -> Vec<String> {
        let system = cx.system;
        thread::scope(|s| {
            let handles: Vec<_> = (0..self.config.k)
                .map(|i| {
                    s.spawn(move || {
                        system
                            .execute(&system.hub, cx.objective, cx.recorder, &format!("grpo/rollout-{i}"))
                            .unwrap_or_default()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_default()).collect()
        })
    }
}

impl Optimizer for Grpo {
    fn name(&self) -> &str {
        "grpo"
    }

    fn begin(&mut self, cx: &RoundContext<'_>) -> Result<()> {
        self.config.validate()?;
        self.y_star = target_of(cx)?;
        self.satisfied = reward(&cx.evaluation.answer, &self.y_star) == 1.0;
        Ok(())
    }

    fn reflect(&mut self, cx: &RoundContext<'_>) -> Result<Vec<Hypothesis>> {
        if reward(&cx.evaluation.answer, &self.y_star) == 1.0 {
            self.satisfied = true;
            return Ok(Vec::new());
        }
        let candidates = self.sample(cx);
        let g = grpo_signals(&candidates, &self.y_star, &cx.evaluation.answer, &self.config)?;
        let _ = cx.recorder.record(
            EventKind::Decision,
            json!({ "grpo": canonical::to_value(&g), "candidates": candidates }),
            None,
        );
        let mut extra = format!("Group: mean reward={} std={}\nCandidates:", g.mean, g.std);
        for (i, y) in candidates.iter().enumerate() {
            extra.push_str(&format!(
                "\n- [{i}] reward={} advantage={} objective={} ratio={}: {}",
                g.rewards[i],
                g.advantages[i],
                g.objectives[i],
                g.ratios[i],
                y.replace('\n', "\\n")
            ));
        }
        self.last = Some((candidates, g));
        Ok(reflect_with_model(cx, &self.evaluator, &extra, "grpo/reflect"))
    }

    fn select(&mut self, cx: &RoundContext<'_>, hypotheses: &[Hypothesis]) -> Result<Vec<Proposal>> {
        let mut out = select_with_model(cx, &self.optimizer, hypotheses, "grpo/select");
        if self.refine_solution {
            let ctx = self
                .last
                .as_ref()
                .map(|(c, _)| format!("Sampled candidates:\n{}", c.join("\n")))
                .unwrap_or_default();
            out.extend(refine(cx, &self.optimizer, &ctx));
        }
        Ok(out)
    }

    fn finished(&self) -> bool {
        self.satisfied
    }
}

/// Run Reinforce++ towards `y_star` for `config.t` rounds.
pub fn reinforcepp_loop(
    system: &AgentSystem,
    task: &str,
    y_star: &str,
    y_sft: Option<&str>,
    config: RlConfig,
    evaluator: &str,
    optimizer: &str,
) -> Result<LoopOutcome> {
    config.validate()?;
    let mut opt = ReinforcePlusPlus::new(config, evaluator, optimizer);
    if let Some(r) = y_sft {
        opt = opt.with_reference(r);
    }
    run_loop(system, &Objective::exact(task, y_star), &mut opt, config.t)
}

/// Run GRPO towards `y_star` for `config.t` rounds.
pub fn grpo_loop(
    system: &AgentSystem,
    task: &str,
    y_star: &str,
    config: RlConfig,
    evaluator: &str,
    optimizer: &str,
) -> Result<LoopOutcome> {
    config.validate()?;
    let mut opt = Grpo::new(config, evaluator, optimizer);
    run_loop(system, &Objective::exact(task, y_star), &mut opt, config.t)
}
