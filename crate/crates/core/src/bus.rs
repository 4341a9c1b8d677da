//! Message bus and a plan/broadcast/collect/replan orchestrator over sub-agents.
//!
//! Sub-agents never call each other. Every subtask and result travels as a [`BusMessage`],
//! and every message is recorded as a decision event when the bus has a trace attached.
//! The plan lives in the Memory resource `plan.md` and is versioned once per round.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::gateway::ModelRequest;
use crate::hub::{ResourceHub, RunOptions};
use crate::record::{EntityKind, Mapping, RegistrationRecord};
use crate::sepl::answer_text;
use crate::trace::{EventKind, TraceRecorder};
use crate::version::Version;

pub const ORCHESTRATOR: &str = "orchestrator";
pub const RESULT_TOPIC: &str = "result";
pub const PLAN_RESOURCE: &str = "plan.md";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub topic: String,
    pub sender: String,
    pub correlation_id: String,
    pub payload: Value,
}

struct Topic {
    tx: Sender<BusMessage>,
    rx: Receiver<BusMessage>,
}

#[derive(Default)]
struct BusInner {
    topics: Mutex<HashMap<String, Topic>>,
    log: Mutex<Vec<BusMessage>>,
    trace: Option<Arc<TraceRecorder>>,
}

/// Multi-producer, multi-consumer topics. Delivery is FIFO per topic.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus").field("messages", &self.inner.log.lock().len()).finish()
    }
}

impl Bus {
    pub fn new(trace: Option<Arc<TraceRecorder>>) -> Self {
        Bus {
            inner: Arc::new(BusInner {
                trace,
                ..Default::default()
            }),
        }
    }

    fn topic<R>(&self, name: &str, f: impl FnOnce(&Topic) -> R) -> R {
        let mut topics = self.inner.topics.lock();
        let t = topics.entry(name.to_string()).or_insert_with(|| {
            let (tx, rx) = unbounded();
            Topic { tx, rx }
        });
        f(t)
    }

    pub fn publish(&self, message: BusMessage) {
        if let Some(trace) = &self.inner.trace {
            let _ = trace.record(EventKind::Decision, json!({ "bus": message }), None);
        }
        self.inner.log.lock().push(message.clone());
        let topic = message.topic.clone();
        self.topic(&topic, |t| {
            // The bus holds a receiver for every topic, so the channel never disconnects.
            let _ = t.tx.send(message);
        });
    }

    pub fn subscribe(&self, topic: &str) -> Receiver<BusMessage> {
        self.topic(topic, |t| t.rx.clone())
    }

    /// Every message published so far, in publish order.
    pub fn messages(&self) -> Vec<BusMessage> {
        self.inner.log.lock().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: String,
    pub agent: String,
    pub description: String,
    pub done: bool,
}

/// The plan.md artifact: title line, fenced flowchart, checklist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub title: String,
    pub flowchart: String,
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn new(task: &str) -> Self {
        Plan {
            title: task.lines().next().unwrap_or_default().trim().to_string(),
            flowchart: String::new(),
            steps: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("# Plan: {}\n\n```flowchart\n", self.title);
        if !self.flowchart.is_empty() {
            out.push_str(&self.flowchart);
            out.push('\n');
        }
        out.push_str("```\n");
        if !self.steps.is_empty() {
            out.push('\n');
        }
        for s in &self.steps {
            let mark = if s.done { 'x' } else { ' ' };
            out.push_str(&format!("- [{mark}] {} ({}): {}\n", s.id, s.agent, s.description));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Plan> {
        let bad = |n: usize, m: &str| Error::ParseError(format!("plan line {n}: {m}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let title = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# Plan: "))
            .ok_or_else(|| bad(1, "expected '# Plan: <title>'"))?
            .to_string();
        let mut flow: Vec<&str> = Vec::new();
        let mut in_fence = false;
        let mut fence_done = false;
        let mut steps = Vec::new();
        for (n, line) in lines {
            if !fence_done {
                if !in_fence {
                    if line == "```flowchart" {
                        in_fence = true;
                    } else if !line.is_empty() {
                        return Err(bad(n, "expected flowchart fence"));
                    }
                } else if line == "```" {
                    fence_done = true;
                } else {
                    flow.push(line);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (done, rest) = if let Some(r) = line.strip_prefix("- [x] ") {
                (true, r)
            } else if let Some(r) = line.strip_prefix("- [ ] ") {
                (false, r)
            } else {
                return Err(bad(n, "expected checklist item"));
            };
            let (head, description) = rest.split_once("): ").ok_or_else(|| bad(n, "expected 'id (agent): text'"))?;
            let (id, agent) = head.split_once(" (").ok_or_else(|| bad(n, "expected 'id (agent)'"))?;
            steps.push(PlanStep {
                id: id.to_string(),
                agent: agent.to_string(),
                description: description.to_string(),
                done,
            });
        }
        if !fence_done {
            return Err(Error::ParseError("plan: unterminated flowchart fence".into()));
        }
        Ok(Plan {
            title,
            flowchart: flow.join("\n"),
            steps,
        })
    }
}

fn plan_payload(plan: &Plan) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("plan_md".into(), Value::String(plan.render()));
    m
}

/// Planner reply: `FLOWCHART <line>` lines and `STEP <id> <agent>: <description>` lines.
pub fn parse_planner_reply(task: &str, reply: &str) -> Option<Plan> {
    let mut plan = Plan::new(task);
    let mut flow = Vec::new();
    for line in reply.lines().map(str::trim) {
        if let Some(f) = line.strip_prefix("FLOWCHART ") {
            flow.push(f.to_string());
        } else if let Some(rest) = line.strip_prefix("STEP ") {
            let (head, description) = rest.split_once(": ")?;
            let (id, agent) = head.trim().split_once(' ')?;
            plan.steps.push(PlanStep {
                id: id.to_string(),
                agent: agent.trim().to_string(),
                description: description.trim().to_string(),
                done: false,
            });
        }
    }
    plan.flowchart = flow.join("\n");
    (!plan.steps.is_empty()).then_some(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub planner_model: String,
    pub max_rounds: usize,
    /// Results not collected within this window count as failed.
    pub round_timeout_ms: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            planner_model: "planner".into(),
            max_rounds: 3,
            round_timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub correlation_id: String,
    pub step: String,
    pub agent: String,
    pub ok: bool,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestrationOutcome {
    pub final_answer: String,
    pub complete: bool,
    pub rounds: usize,
    /// Versions of plan.md written by this run, initial version first.
    pub plan_versions: Vec<Version>,
    /// Correlation id → result, over all rounds.
    pub results: BTreeMap<String, SubtaskResult>,
    pub messages: Vec<BusMessage>,
}

fn summarize(round: usize, results: &[SubtaskResult]) -> String {
    let mut s = format!("Round {round} results:");
    for r in results {
        let status = if r.ok { "ok" } else { "failed" };
        s.push_str(&format!("\n- {} ({}) {status}: {}", r.step, r.agent, r.output));
    }
    s
}

fn write_plan(hub: &ResourceHub, plan: &Plan) -> Result<Version> {
    let reg = hub.registry(EntityKind::Memory);
    if reg.contains(PLAN_RESOURCE) {
        reg.update(
            PLAN_RESOURCE,
            crate::registry::Update::Source(Value::Object(plan_payload(plan)).to_string()),
        )
    } else {
        reg.register(RegistrationRecord::memory(
            PLAN_RESOURCE,
            "Orchestrator plan",
            plan_payload(plan),
        ))
    }
}

fn spawn_worker(hub: Arc<ResourceHub>, bus: Bus, agent: String, inbox: Receiver<BusMessage>, expected: usize) {
    std::thread::spawn(move || {
        for msg in inbox.iter().take(expected) {
            let input = json!({ "task": msg.payload["description"], "context": msg.payload["task"] });
            let trace = bus.inner.trace.as_deref();
            let (ok, output) = match hub.run_with(
                EntityKind::Agent,
                &agent,
                input,
                RunOptions {
                    trace,
                    tag: "bus/subtask",
                    ..Default::default()
                },
            ) {
                Ok(v) => (true, answer_text(&v)),
                Err(e) => (false, e.to_string()),
            };
            bus.publish(BusMessage {
                topic: RESULT_TOPIC.into(),
                sender: agent.clone(),
                correlation_id: msg.correlation_id.clone(),
                payload: json!({ "step": msg.payload["step"], "ok": ok, "output": output }),
            });
        }
    });
}

/// Plan, broadcast, collect, and decide until the planner answers `COMPLETE` or the rounds run out.
pub fn orchestrate(
    hub: Arc<ResourceHub>,
    task: &str,
    sub_agents: &[String],
    config: &OrchestratorConfig,
    trace: Option<Arc<TraceRecorder>>,
) -> Result<OrchestrationOutcome> {
    if sub_agents.is_empty() {
        return Err(Error::NoAgents);
    }
    if config.max_rounds == 0 {
        return Err(Error::InvalidConfig("max_rounds must be at least 1".into()));
    }
    let mut roster = String::new();
    for a in sub_agents {
        let r = hub.record(EntityKind::Agent, a)?;
        roster.push_str(&format!("\n- {a}: {}", r.entity.description));
    }
    let bus = Bus::new(trace.clone());
    let results_rx = bus.subscribe(RESULT_TOPIC);
    let mut plan = Plan::new(task);
    let mut outcome = OrchestrationOutcome {
        final_answer: String::new(),
        complete: false,
        rounds: 0,
        plan_versions: vec![write_plan(&hub, &plan)?],
        results: BTreeMap::new(),
        messages: Vec::new(),
    };
    let ask = |prompt: String, tag: &str| -> Option<String> {
        let req = ModelRequest::user(&config.planner_model, prompt).with_tag(tag);
        hub.gateway().complete_model(&req, trace.as_deref()).ok().map(|r| r.text)
    };
    let mut last_summary = String::new();

    for round in 1..=config.max_rounds {
        outcome.rounds = round;
        let prompt = format!(
            "PLAN\nTask: {task}\nRound: {round}\nAgents:{roster}\nPrevious plan:\n{}\nPrevious results:\n{last_summary}\n\
             Reply with FLOWCHART <line> lines and STEP <id> <agent>: <description> lines.",
            plan.render()
        );
        plan = match ask(prompt, "bus/plan").and_then(|r| parse_planner_reply(task, &r)) {
            Some(p) => p,
            None => {
                // Without a usable plan every agent gets the whole task.
                let mut p = Plan::new(task);
                p.steps = sub_agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| PlanStep {
                        id: format!("s{}", i + 1),
                        agent: a.clone(),
                        description: task.to_string(),
                        done: false,
                    })
                    .collect();
                p
            }
        };

        let mut pending: BTreeMap<String, SubtaskResult> = BTreeMap::new();
        let mut per_agent: BTreeMap<&str, usize> = BTreeMap::new();
        for step in &plan.steps {
            let cid = format!("r{round}-{}", step.id);
            if !sub_agents.contains(&step.agent) {
                bus.publish(BusMessage {
                    topic: RESULT_TOPIC.into(),
                    sender: ORCHESTRATOR.into(),
                    correlation_id: cid.clone(),
                    payload: json!({ "step": step.id, "ok": false, "output": format!("unknown agent '{}'", step.agent) }),
                });
            } else {
                *per_agent.entry(step.agent.as_str()).or_default() += 1;
            }
            pending.insert(
                cid,
                SubtaskResult {
                    correlation_id: String::new(),
                    step: step.id.clone(),
                    agent: step.agent.clone(),
                    ok: false,
                    output: "timed out".into(),
                },
            );
        }
        for (agent, n) in &per_agent {
            let inbox = bus.subscribe(&format!("subtask.{agent}.r{round}"));
            spawn_worker(hub.clone(), bus.clone(), agent.to_string(), inbox, *n);
        }
        for step in plan.steps.iter().filter(|s| sub_agents.contains(&s.agent)) {
            bus.publish(BusMessage {
                topic: format!("subtask.{}.r{round}", step.agent),
                sender: ORCHESTRATOR.into(),
                correlation_id: format!("r{round}-{}", step.id),
                payload: json!({ "step": step.id, "description": step.description, "task": task }),
            });
        }

        let deadline = Instant::now() + Duration::from_millis(config.round_timeout_ms);
        let mut collected: BTreeMap<String, SubtaskResult> = BTreeMap::new();
        while collected.len() < pending.len() {
            match results_rx.recv_deadline(deadline) {
                Ok(msg) => {
                    // Late results of earlier rounds carry stale ids and are ignored.
                    if let Some(p) = pending.get(&msg.correlation_id) {
                        collected.insert(
                            msg.correlation_id.clone(),
                            SubtaskResult {
                                correlation_id: msg.correlation_id.clone(),
                                step: p.step.clone(),
                                agent: p.agent.clone(),
                                ok: msg.payload["ok"].as_bool().unwrap_or(false),
                                output: msg.payload["output"].as_str().unwrap_or_default().to_string(),
                            },
                        );
                    }
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let round_results: Vec<SubtaskResult> = pending
            .into_iter()
            .map(|(cid, p)| {
                collected.remove(&cid).unwrap_or(SubtaskResult {
                    correlation_id: cid,
                    ..p
                })
            })
            .collect();
        for step in plan.steps.iter_mut() {
            let cid = format!("r{round}-{}", step.id);
            step.done = round_results.iter().any(|r| r.correlation_id == cid && r.ok);
        }
        outcome.plan_versions.push(write_plan(&hub, &plan)?);
        last_summary = summarize(round, &round_results);
        for r in round_results {
            outcome.results.insert(r.correlation_id.clone(), r);
        }

        let decision = ask(
            format!("DECIDE\nTask: {task}\n{last_summary}\nReply COMPLETE: <final answer> or REPLAN."),
            "bus/decide",
        )
        .unwrap_or_default();
        if let Some(rest) = decision.trim().strip_prefix("COMPLETE") {
            let answer = rest.trim_start_matches(':').trim();
            outcome.final_answer = if answer.is_empty() { last_summary.clone() } else { answer.to_string() };
            outcome.complete = true;
            break;
        }
        outcome.final_answer = last_summary.clone();
    }
    outcome.messages = bus.messages();
    Ok(outcome)
}

/// Register a tool named after `agent` whose run dispatches the agent and returns its output.
pub fn wrap_agent_as_tool(hub: &ResourceHub, agent: &str) -> Result<Version> {
    let record = hub.record(EntityKind::Agent, agent)?;
    let tool = RegistrationRecord::new(
        EntityKind::Tool,
        agent,
        format!("Delegates to agent '{agent}': {}", record.entity.description),
        Mapping::AgentProxy { agent: agent.to_string() },
    )
    .with_metadata(
        "arguments",
        json!([{"name": "task", "type": "string", "description": "task handed to the agent"}]),
    );
    hub.register(tool)
}
