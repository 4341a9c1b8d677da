//! The self-evolution loop: lift resources to variables, then
//! reflect → select → improve → evaluate → commit until converged or out of budget.

mod objective;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical;
use crate::contract::{Contract, ContractSection};
use crate::error::{Error, Result};
use crate::hub::{ResourceHub, RunOptions};
use crate::record::{EntityKind, Mapping};
use crate::trace::{EventKind, Outcome, Trace, TraceRecorder};
use crate::variables::{EvolvableVariable, OUTPUT_ID};

pub use objective::{
    Objective, ScoreSpec, SuccessKind, SuccessSpec, CONTRACT_PARSE_OK, DEFAULT_SAFETY, MASK_RESPECTED,
    NO_RUNTIME_ERROR, OUTPUT_NONEMPTY,
};

/// An agent resource together with the hub holding everything it references.
#[derive(Debug, Clone)]
pub struct AgentSystem {
    pub hub: Arc<ResourceHub>,
    pub agent: String,
    /// Replaces the model named by the agent mapping when set.
    pub actor_model: Option<String>,
}

impl AgentSystem {
    pub fn new(hub: Arc<ResourceHub>, agent: impl Into<String>) -> Self {
        AgentSystem {
            hub,
            agent: agent.into(),
            actor_model: None,
        }
    }

    pub fn with_actor_model(mut self, model: impl Into<String>) -> Self {
        self.actor_model = Some(model.into());
        self
    }

    pub fn task_input(objective: &Objective) -> Value {
        let mut input = json!({ "task": objective.task });
        if !objective.attachments.is_empty() {
            input["attachments"] = json!(objective.attachments);
        }
        input
    }

    /// Run the agent on `hub` (the live hub or a shadow of it) and return its answer text.
    pub fn execute(&self, hub: &ResourceHub, objective: &Objective, trace: &TraceRecorder, tag: &str) -> Result<String> {
        let out = hub.run_with(
            EntityKind::Agent,
            &self.agent,
            Self::task_input(objective),
            RunOptions {
                trace: Some(trace),
                model_override: self.actor_model.as_deref(),
                tag,
            },
        )?;
        Ok(answer_text(&out))
    }
}

pub fn answer_text(out: &Value) -> String {
    match out.get("answer") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => canonical::to_string(other),
        None => match out {
            Value::String(s) => s.clone(),
            other => canonical::to_string(other),
        },
    }
}

/// Resource-backed variables plus the output artifact, which is always last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSet {
    variables: Vec<EvolvableVariable>,
}

impl VariableSet {
    pub fn new(mut resource_vars: Vec<EvolvableVariable>, output: impl Into<String>) -> Self {
        resource_vars.retain(|v| !v.is_output());
        resource_vars.push(EvolvableVariable::output(output));
        VariableSet {
            variables: resource_vars,
        }
    }

    pub fn all(&self) -> &[EvolvableVariable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EvolvableVariable> {
        self.variables.iter().find(|v| v.id == id)
    }

    /// Θ: the learnable variables.
    pub fn theta(&self) -> impl Iterator<Item = &EvolvableVariable> {
        self.variables.iter().filter(|v| v.learnable)
    }

    pub fn output(&self) -> &EvolvableVariable {
        self.variables.last().expect("output is always present")
    }

    pub fn set_output(&mut self, value: impl Into<String>) {
        let last = self.variables.len() - 1;
        self.variables[last].value = value.into();
    }

    fn set_value(&mut self, id: &str, value: &str) {
        if let Some(v) = self.variables.iter_mut().find(|v| v.id == id) {
            v.value = value.to_string();
        }
    }

    /// id → value for every variable.
    pub fn values(&self) -> BTreeMap<String, String> {
        self.variables.iter().map(|v| (v.id.clone(), v.value.clone())).collect()
    }
}

pub fn lift_variables(system: &AgentSystem) -> Result<VariableSet> {
    lift_from(&system.hub, &system.agent)
}

pub fn lift_from(hub: &ResourceHub, agent: &str) -> Result<VariableSet> {
    if hub.record(EntityKind::Agent, agent).is_err() {
        return Err(Error::UnregisteredResource(format!("agent:{agent}")));
    }
    Ok(VariableSet::new(hub.get_variables(EntityKind::Agent, agent)?, ""))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub targets: Vec<String>,
    pub severity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub variable_id: String,
    pub value: String,
    pub rationale: String,
}

impl Proposal {
    pub fn new(variable_id: impl Into<String>, value: impl Into<String>, rationale: impl Into<String>) -> Self {
        Proposal {
            variable_id: variable_id.into(),
            value: value.into(),
            rationale: rationale.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    pub safety: BTreeMap<String, bool>,
    pub converged: bool,
    pub answer: String,
    pub success: bool,
}

impl Evaluation {
    pub fn all_safe(&self) -> bool {
        self.safety.values().all(|ok| *ok)
    }

    fn mask_violation(error: &Error) -> Self {
        let mut safety = BTreeMap::new();
        safety.insert(MASK_RESPECTED.to_string(), false);
        Evaluation {
            score: 0.0,
            safety,
            converged: false,
            answer: format!("rejected before execution: {error}"),
            success: false,
        }
    }
}

/// A staged candidate state. The shadow hub is discarded unless the candidate commits.
#[derive(Debug)]
pub struct Candidate {
    pub hub: ResourceHub,
    pub variables: VariableSet,
    /// Resource-backed changes to replay on the live hub at commit.
    pub assignments: Vec<(String, String)>,
    /// Solution refinement: replaces the executed answer when set.
    pub output_override: Option<String>,
}

/// ι: apply proposals to a shadow copy of the live hub.
pub fn improve(system: &AgentSystem, variables: &VariableSet, proposals: &[Proposal]) -> Result<Candidate> {
    let mut assignments: Vec<(String, String)> = Vec::new();
    let mut output_override = None;
    for p in proposals {
        if p.variable_id == OUTPUT_ID {
            output_override = Some(p.value.clone());
            continue;
        }
        let var = variables
            .get(&p.variable_id)
            .ok_or_else(|| Error::UnknownVariable(p.variable_id.clone()))?;
        if !var.learnable {
            return Err(Error::NotLearnable(p.variable_id.clone()));
        }
        assignments.retain(|(id, _)| id != &p.variable_id);
        if var.value != p.value {
            assignments.push((p.variable_id.clone(), p.value.clone()));
        }
    }
    let hub = system.hub.fork();
    hub.set_variables(&assignments)?;
    let mut next = variables.clone();
    for (id, v) in &assignments {
        next.set_value(id, v);
    }
    Ok(Candidate {
        hub,
        variables: next,
        assignments,
        output_override,
    })
}

fn contract_roundtrips(hub: &ResourceHub, agent: &str) -> bool {
    let Ok(record) = hub.record(EntityKind::Agent, agent) else {
        return false;
    };
    let mut sections = vec![(EntityKind::Agent, ContractSection::from_record(&record))];
    if let Mapping::Agent { tools, .. } = &record.entity.mapping {
        for t in tools {
            match hub.record(EntityKind::Tool, t) {
                Ok(r) => sections.push((EntityKind::Tool, ContractSection::from_record(&r))),
                Err(_) => return false,
            }
        }
    }
    sections.into_iter().all(|(kind, s)| {
        let c = Contract {
            kind,
            sections: vec![s],
        };
        Contract::parse(&c.render()).is_ok_and(|back| back == c)
    })
}

/// ε: execute on `hub` and score the result. Execution failures score 0 with
/// `no_runtime_error` failed; they never abort.
pub fn evaluate_on(
    system: &AgentSystem,
    hub: &ResourceHub,
    output_override: Option<&str>,
    objective: &Objective,
    trace: &TraceRecorder,
) -> Evaluation {
    let run = system.execute(hub, objective, trace, "sepl/execute");
    if let Err(e) = &run {
        let _ = trace.record(
            EventKind::Error,
            json!({ "kind": e.kind_name(), "message": e.to_string(), "agent": system.agent }),
            None,
        );
    }
    let mut answer = run.as_ref().cloned().unwrap_or_default();
    if let Some(o) = output_override {
        let _ = trace.record(
            EventKind::Decision,
            json!({ "refined_output": o, "executed_output": answer }),
            None,
        );
        answer = o.to_string();
    }
    let mut safety = BTreeMap::new();
    for name in &objective.safety {
        let ok = match name.as_str() {
            NO_RUNTIME_ERROR => run.is_ok(),
            OUTPUT_NONEMPTY => !answer.trim().is_empty(),
            CONTRACT_PARSE_OK => contract_roundtrips(hub, &system.agent),
            _ => false,
        };
        safety.insert(name.clone(), ok);
    }
    let score = if run.is_ok() || output_override.is_some() {
        objective.score(&answer)
    } else {
        0.0
    };
    let success = score > 0.0 && objective.is_success(&answer);
    let all_safe = safety.values().all(|ok| *ok);
    let eval = Evaluation {
        score,
        converged: all_safe && objective.is_converged_score(score),
        safety,
        answer,
        success,
    };
    let _ = trace.record(EventKind::Evaluation, canonical::to_value(&eval), None);
    eval
}

pub fn evaluate(system: &AgentSystem, candidate: &Candidate, objective: &Objective, trace: &TraceRecorder) -> Evaluation {
    evaluate_on(system, &candidate.hub, candidate.output_override.as_deref(), objective, trace)
}

/// κ: accept iff score ≥ best and every safety flag passes. On accept the staged
/// assignments are replayed on the live hub. Exactly one commit or rollback event is recorded.
pub fn commit(
    system: &AgentSystem,
    candidate: &Candidate,
    evaluation: &Evaluation,
    best: f64,
    trace: &TraceRecorder,
) -> Result<bool> {
    let accept = evaluation.score >= best && evaluation.all_safe();
    if !accept {
        let reason = if evaluation.all_safe() {
            "score regressed"
        } else {
            "safety invariant failed"
        };
        let _ = trace.record(
            EventKind::Rollback,
            json!({ "score": evaluation.score, "best": best, "reason": reason }),
            None,
        );
        return Ok(false);
    }
    let versions = system.hub.set_variables(&candidate.assignments)?;
    let _ = trace.record(
        EventKind::Commit,
        json!({
            "score": evaluation.score,
            "best_before": best,
            "variables": candidate.assignments.iter().map(|(id, _)| id).collect::<Vec<_>>(),
            "versions": versions,
        }),
        None,
    );
    Ok(true)
}

/// What an optimizer sees each iteration.
pub struct RoundContext<'a> {
    pub iteration: usize,
    pub system: &'a AgentSystem,
    pub objective: &'a Objective,
    pub variables: &'a VariableSet,
    /// Trace and evaluation of the current committed state.
    pub trace: &'a Trace,
    pub evaluation: &'a Evaluation,
    pub best_score: f64,
    /// Open trace of this iteration; optimizers record their model calls and warnings here.
    pub recorder: &'a TraceRecorder,
}

impl RoundContext<'_> {
    pub fn warn(&self, message: impl Into<String>) {
        let _ = self
            .recorder
            .record(EventKind::Decision, json!({ "warning": message.into() }), None);
    }
}

/// The ρ and σ operators plus optional hooks.
pub trait Optimizer {
    fn name(&self) -> &str;

    /// Called once with the baseline state before the first iteration.
    fn begin(&mut self, _cx: &RoundContext<'_>) -> Result<()> {
        Ok(())
    }

    fn reflect(&mut self, cx: &RoundContext<'_>) -> Result<Vec<Hypothesis>>;

    fn select(&mut self, cx: &RoundContext<'_>, hypotheses: &[Hypothesis]) -> Result<Vec<Proposal>>;

    /// After commit gating.
    fn observe(&mut self, _accepted: bool, _evaluation: &Evaluation) {}

    /// The optimizer's own stop predicate, checked after reflect and after commit.
    fn finished(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    /// The best committed state.
    pub variables: VariableSet,
    pub baseline: Evaluation,
    /// One per iteration executed.
    pub evaluations: Vec<Evaluation>,
    pub accepted: Vec<bool>,
    /// Best committed score after each iteration.
    pub committed_scores: Vec<f64>,
    pub best_score: f64,
    pub converged: bool,
    /// Baseline trace first, then one per iteration.
    pub traces: Vec<Trace>,
}

impl LoopOutcome {
    pub fn rounds(&self) -> usize {
        self.evaluations.len()
    }
}

fn close(recorder: &TraceRecorder, eval: &Evaluation) -> Result<Trace> {
    recorder.close(Outcome {
        final_answer: eval.answer.clone(),
        success: eval.success,
    })
}

pub fn run_loop(
    system: &AgentSystem,
    objective: &Objective,
    optimizer: &mut dyn Optimizer,
    budget: usize,
) -> Result<LoopOutcome> {
    objective.validate()?;
    if budget == 0 {
        return Err(Error::InvalidConfig("budget must be at least 1".into()));
    }
    let mut variables = lift_variables(system)?;
    let baseline_rec = TraceRecorder::new(format!("{}-baseline", system.agent));
    let baseline = evaluate_on(system, &system.hub, None, objective, &baseline_rec);
    let baseline_trace = close(&baseline_rec, &baseline)?;
    variables.set_output(baseline.answer.clone());

    let mut best = baseline.score;
    let mut state_eval = baseline.clone();
    let mut state_trace = baseline_trace.clone();
    let mut outcome = LoopOutcome {
        variables: variables.clone(),
        baseline: baseline.clone(),
        evaluations: Vec::new(),
        accepted: Vec::new(),
        committed_scores: Vec::new(),
        best_score: best,
        converged: baseline.converged,
        traces: vec![baseline_trace],
    };
    {
        let scratch = TraceRecorder::new(format!("{}-begin", system.agent));
        optimizer.begin(&RoundContext {
            iteration: 0,
            system,
            objective,
            variables: &variables,
            trace: &state_trace,
            evaluation: &state_eval,
            best_score: best,
            recorder: &scratch,
        })?;
    }
    if baseline.converged {
        return Ok(outcome);
    }

    for iteration in 1..=budget {
        let recorder = TraceRecorder::new(format!("{}-iter-{iteration}", system.agent));
        let cx = RoundContext {
            iteration,
            system,
            objective,
            variables: &variables,
            trace: &state_trace,
            evaluation: &state_eval,
            best_score: best,
            recorder: &recorder,
        };
        let hypotheses = optimizer.reflect(&cx)?;
        if optimizer.finished() {
            outcome.traces.push(close(&recorder, &state_eval)?);
            break;
        }
        let proposals = optimizer.select(&cx, &hypotheses)?;
        let _ = recorder.record(
            EventKind::Decision,
            json!({
                "optimizer": optimizer.name(),
                "hypotheses": hypotheses,
                "proposals": proposals.iter().map(|p| &p.variable_id).collect::<Vec<_>>(),
            }),
            None,
        );

        let (evaluation, accepted, candidate) = match improve(system, &variables, &proposals) {
            Ok(candidate) => {
                let eval = evaluate(system, &candidate, objective, &recorder);
                let accepted = commit(system, &candidate, &eval, best, &recorder)?;
                (eval, accepted, Some(candidate))
            }
            Err(e @ (Error::NotLearnable(_) | Error::UnknownVariable(_))) => {
                let eval = Evaluation::mask_violation(&e);
                let _ = recorder.record(EventKind::Evaluation, canonical::to_value(&eval), None);
                let _ = recorder.record(
                    EventKind::Rollback,
                    json!({ "score": 0.0, "best": best, "reason": e.to_string() }),
                    None,
                );
                (eval, false, None)
            }
            Err(e) => return Err(e),
        };
        optimizer.observe(accepted, &evaluation);
        let trace = close(&recorder, &evaluation)?;
        if accepted {
            let candidate = candidate.expect("accepted candidates exist");
            variables = candidate.variables;
            variables.set_output(evaluation.answer.clone());
            best = evaluation.score;
            state_eval = evaluation.clone();
            state_trace = trace.clone();
        }
        outcome.traces.push(trace);
        outcome.evaluations.push(evaluation.clone());
        outcome.accepted.push(accepted);
        outcome.committed_scores.push(best);
        if accepted && evaluation.converged {
            outcome.converged = true;
            break;
        }
        if optimizer.finished() {
            break;
        }
    }
    outcome.variables = variables;
    outcome.best_score = best;
    Ok(outcome)
}
