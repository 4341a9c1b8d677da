mod common;

use std::sync::Arc;
use std::time::Duration;

use agp_core::bus::{orchestrate, wrap_agent_as_tool, Bus, BusMessage, OrchestratorConfig, Plan, PLAN_RESOURCE, RESULT_TOPIC};
use agp_core::gateway::{Gateway, Matcher, ModelBackend, ModelRequest, ScriptedBackend, ScriptedRule};
use agp_core::{EntityKind, Error, Mapping, RegistrationRecord, ResourceHub, TraceRecorder};
use common::*;
use proptest::prelude::*;
use serde_json::json;

fn plan_text(hub: &ResourceHub) -> String {
    match hub.record(EntityKind::Memory, PLAN_RESOURCE).unwrap().entity.mapping {
        Mapping::Memory { payload } => payload["plan_md"].as_str().unwrap().to_string(),
        _ => unreachable!(),
    }
}

fn single_worker_hub(planner: Vec<ScriptedRule>, planner_fallback: &str) -> Arc<ResourceHub> {
    let gateway = scripted_gateway(vec![
        ("actor", vec![ScriptedRule::substring("weather", "FINAL: sunny")], "FINAL: ok"),
        ("planner", planner, planner_fallback),
    ]);
    hub_with(
        gateway,
        vec![
            RegistrationRecord::prompt("role", "", "Be brief."),
            RegistrationRecord::agent("solo", "forecaster", &["role"], &[], "actor"),
        ],
    )
}

fn solo() -> Vec<String> {
    vec!["solo".to_string()]
}

#[test]
fn one_agent_completes_in_one_round() {
    let hub = single_worker_hub(
        vec![
            ScriptedRule::pattern("^PLAN", "STEP s1 solo: report the weather"),
            ScriptedRule::pattern("^DECIDE", "COMPLETE: sunny"),
        ],
        "REPLAN",
    );
    let out = orchestrate(hub.clone(), "Weather today", &solo(), &OrchestratorConfig::default(), None).unwrap();
    assert!(out.complete);
    assert_eq!(out.final_answer, "sunny");
    assert_eq!(out.rounds, 1);
    assert_eq!(hub.registry(EntityKind::Memory).history(PLAN_RESOURCE).unwrap().len(), 2);
    assert_eq!(out.results["r1-s1"].output, "sunny");
    let plan = Plan::parse(&plan_text(&hub)).unwrap();
    assert_eq!(plan.title, "Weather today");
    assert!(plan.steps[0].done);
}

#[test]
fn round_limit_leaves_the_task_incomplete() {
    let hub = single_worker_hub(vec![ScriptedRule::pattern("^PLAN", "STEP s1 solo: weather")], "REPLAN");
    let config = OrchestratorConfig { max_rounds: 1, ..Default::default() };
    let out = orchestrate(hub.clone(), "Weather", &solo(), &config, None).unwrap();
    assert!(!out.complete);
    assert_eq!(out.rounds, 1);
    assert!(out.final_answer.starts_with("Round 1 results:"), "{}", out.final_answer);
    assert_eq!(out.plan_versions.len(), 2);
}

struct Slow(Duration);

impl ModelBackend for Slow {
    fn complete(&self, _: &ModelRequest) -> Result<String, String> {
        std::thread::sleep(self.0);
        Ok("FINAL: late".into())
    }
}

#[test]
fn slow_agents_time_out_as_failures() {
    let gw = Gateway::new();
    gw.register_backend("actor", Arc::new(Slow(Duration::from_millis(400)))).unwrap();
    let planner = ScriptedBackend::new(vec![ScriptedRule::pattern("^PLAN", "STEP s1 solo: weather")])
        .unwrap()
        .with_fallback("REPLAN");
    gw.register_backend("planner", Arc::new(planner)).unwrap();
    let hub = hub_with(
        Arc::new(gw),
        vec![
            RegistrationRecord::prompt("role", "", "x"),
            RegistrationRecord::agent("solo", "", &["role"], &[], "actor"),
        ],
    );
    let config = OrchestratorConfig { max_rounds: 1, round_timeout_ms: 50, ..Default::default() };
    let out = orchestrate(hub.clone(), "Weather", &solo(), &config, None).unwrap();
    let r = &out.results["r1-s1"];
    assert!(!r.ok);
    assert_eq!(r.output, "timed out");
    assert!(!Plan::parse(&plan_text(&hub)).unwrap().steps[0].done);
}

#[test]
fn steps_for_unknown_agents_fail_without_dispatch() {
    let hub = single_worker_hub(
        vec![ScriptedRule::pattern("^PLAN", "STEP s1 solo: weather\nSTEP s2 ghost: haunt")],
        "COMPLETE",
    );
    let out = orchestrate(hub, "Weather", &solo(), &OrchestratorConfig::default(), None).unwrap();
    assert!(out.results["r1-s1"].ok);
    let ghost = &out.results["r1-s2"];
    assert!(!ghost.ok);
    assert!(ghost.output.contains("unknown agent"));
    assert!(!out.messages.iter().any(|m| m.topic.starts_with("subtask.ghost")));
    // COMPLETE without an answer returns the round summary.
    assert!(out.complete);
    assert!(out.final_answer.contains("s2 (ghost) failed"));
}

#[test]
fn unusable_plan_falls_back_to_whole_task_per_agent() {
    let hub = single_worker_hub(vec![ScriptedRule::pattern("^DECIDE", "COMPLETE: done")], "no plan here");
    let out = orchestrate(hub.clone(), "Weather", &solo(), &OrchestratorConfig::default(), None).unwrap();
    assert_eq!(out.results.len(), 1);
    assert_eq!(Plan::parse(&plan_text(&hub)).unwrap().steps[0].description, "Weather");
}

#[test]
fn rejects_empty_rosters_and_unknown_agents() {
    let hub = single_worker_hub(vec![], "REPLAN");
    assert!(matches!(
        orchestrate(hub.clone(), "t", &[], &OrchestratorConfig::default(), None),
        Err(Error::NoAgents)
    ));
    assert!(matches!(
        orchestrate(hub.clone(), "t", &["nobody".to_string()], &OrchestratorConfig::default(), None),
        Err(Error::NotFound { .. })
    ));
    let zero = OrchestratorConfig { max_rounds: 0, ..Default::default() };
    assert!(matches!(orchestrate(hub, "t", &solo(), &zero, None), Err(Error::InvalidConfig(_))));
}

#[test]
fn existing_plan_resource_is_versioned_not_replaced() {
    let hub = single_worker_hub(vec![ScriptedRule::pattern("^PLAN", "STEP s1 solo: weather")], "COMPLETE: x");
    let mut payload = serde_json::Map::new();
    payload.insert("plan_md".into(), json!("# Plan: old\n"));
    hub.register(RegistrationRecord::memory(PLAN_RESOURCE, "", payload)).unwrap();
    let out = orchestrate(hub.clone(), "Weather", &solo(), &OrchestratorConfig::default(), None).unwrap();
    assert_eq!(out.plan_versions.first().unwrap().to_string(), "0.1.1");
    assert_eq!(hub.registry(EntityKind::Memory).history(PLAN_RESOURCE).unwrap().len(), 3);
}

#[test]
fn wrapped_agent_fails_once_the_agent_is_gone() {
    let hub = single_worker_hub(vec![], "REPLAN");
    wrap_agent_as_tool(&hub, "solo").unwrap();
    let contract = hub.registry(EntityKind::Tool).get_info("solo").unwrap();
    assert!(contract.entity.description.contains("forecaster"));
    let out = hub.run(EntityKind::Tool, "solo", json!({"task": "weather"}), None).unwrap();
    assert_eq!(out, hub.run(EntityKind::Agent, "solo", json!({"task": "weather"}), None).unwrap());
    hub.registry(EntityKind::Agent).unregister("solo").unwrap();
    assert!(hub.run(EntityKind::Tool, "solo", json!({"task": "weather"}), None).is_err());
    assert!(matches!(wrap_agent_as_tool(&hub, "solo"), Err(Error::NotFound { .. })));
}

#[test]
fn bus_traces_every_message() {
    let rec = Arc::new(TraceRecorder::new("bus"));
    let bus = Bus::new(Some(rec.clone()));
    let rx = bus.subscribe("t");
    for i in 0..3 {
        bus.publish(BusMessage {
            topic: "t".into(),
            sender: "s".into(),
            correlation_id: format!("c{i}"),
            payload: json!(i),
        });
    }
    let got: Vec<String> = rx.try_iter().map(|m| m.correlation_id).collect();
    assert_eq!(got, ["c0", "c1", "c2"]);
    assert_eq!(rec.len(), 3);
    assert_eq!(bus.messages().len(), 3);
    assert!(bus.subscribe(RESULT_TOPIC).try_recv().is_err());
}

#[test]
fn planner_sequence_drives_replanning() {
    let hub = single_worker_hub(
        vec![
            ScriptedRule::pattern("^PLAN", "STEP s1 solo: weather"),
            ScriptedRule::sequence(Matcher::Pattern("^DECIDE".into()), &["REPLAN", "REPLAN", "COMPLETE: sunny"]),
        ],
        "REPLAN",
    );
    let out = orchestrate(hub.clone(), "Weather", &solo(), &OrchestratorConfig::default(), None).unwrap();
    assert_eq!(out.rounds, 3);
    assert_eq!(out.plan_versions.len(), 4);
    assert_eq!(out.results.keys().cloned().collect::<Vec<_>>(), ["r1-s1", "r2-s1", "r3-s1"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_roundtrip_through_markdown(
        title in "[A-Za-z][A-Za-z ]{0,20}[A-Za-z]",
        steps in prop::collection::vec(("[a-z][a-z0-9]{0,4}", "[a-z]{1,6}", "[a-z][a-z :]{0,20}[a-z]", any::<bool>()), 0..6),
    ) {
        let plan = Plan {
            title,
            flowchart: steps.iter().map(|s| s.0.clone()).collect::<Vec<_>>().join(" --> "),
            steps: steps
                .into_iter()
                .map(|(id, agent, description, done)| agp_core::bus::PlanStep { id, agent, description, done })
                .collect(),
        };
        prop_assert_eq!(Plan::parse(&plan.render()).unwrap(), plan);
    }
}
