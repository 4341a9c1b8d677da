mod common;

use std::sync::Arc;

use agp_core::gateway::{Matcher, ScriptedRule};
use agp_core::optimizers::{grpo_loop, reinforcepp_loop, Grpo, OptimizerConfig, OptimizerKind, Reflection, RlConfig, TextGrad};
use agp_core::sepl::{evaluate_on, lift_variables, run_loop, AgentSystem, Objective, Optimizer, RoundContext};
use agp_core::toy::ToyTask;
use agp_core::trace::EventKind;
use agp_core::{Error, RegistrationRecord, ResourceHub, TraceRecorder};
use common::*;
use serde_json::Value;

const VAR: &str = "prompt:solver#entity.mapping.prompt_text";

/// Fruit riddle: the actor says banana once its prompt mentions an instruction.
fn fruit_hub(actor_rules: Vec<ScriptedRule>, critic_rules: Vec<ScriptedRule>) -> Arc<ResourceHub> {
    hub_with(
        scripted_gateway(vec![("actor", actor_rules, "FINAL: apple"), ("critic", critic_rules, "NONE")]),
        vec![
            RegistrationRecord::prompt("solver", "", "Reply with a fruit.").trainable(true),
            RegistrationRecord::agent("fruit", "", &["solver"], &[], "actor"),
        ],
    )
}

fn fixing_critic() -> Vec<ScriptedRule> {
    vec![
        ScriptedRule::pattern("^REFLECT", format!("HYPOTHESIS [high] {VAR}: no instruction")),
        ScriptedRule::pattern("^SELECT", format!("PROPOSAL {VAR}\nRATIONALE: r\n<improved>\nFollow the instruction.\n</improved>")),
    ]
}

fn instruction_actor() -> Vec<ScriptedRule> {
    vec![ScriptedRule::substring("instruction", "FINAL: banana")]
}

fn objective() -> Objective {
    Objective::exact("Which fruit is yellow and curved?", "banana")
}

/// Evaluate the live state once and hand the optimizer a round context over it.
fn with_round<R>(system: &AgentSystem, f: impl FnOnce(&RoundContext<'_>) -> R) -> (R, Vec<agp_core::trace::TraceEvent>) {
    let objective = objective();
    let base = TraceRecorder::new("base");
    let eval = evaluate_on(system, &system.hub, None, &objective, &base);
    let trace = base.close(agp_core::trace::Outcome { final_answer: eval.answer.clone(), success: eval.success }).unwrap();
    let mut vars = lift_variables(system).unwrap();
    vars.set_output(eval.answer.clone());
    let recorder = TraceRecorder::new("round");
    let cx = RoundContext {
        iteration: 1,
        system,
        objective: &objective,
        variables: &vars,
        trace: &trace,
        evaluation: &eval,
        best_score: eval.score,
        recorder: &recorder,
    };
    let r = f(&cx);
    (r, recorder.events())
}

fn model_calls(events: &[agp_core::trace::TraceEvent]) -> usize {
    events.iter().filter(|e| e.kind == EventKind::ModelCall).count()
}

fn warnings(events: &[agp_core::trace::TraceEvent]) -> Vec<String> {
    events
        .iter()
        .filter_map(|e| e.payload.get("warning").and_then(Value::as_str).map(str::to_string))
        .collect()
}

#[test]
fn reflection_attributes_an_error_trace() {
    // The critic only diagnoses when the trace it is shown contains the runtime error.
    let critic = vec![ScriptedRule::pattern(
        "(?s)^REFLECT.*ExecutionError",
        format!("HYPOTHESIS [high] {VAR}: the agent calls a tool it does not have"),
    )];
    let hub = fruit_hub(vec![ScriptedRule::substring("Task", "CALL ghost {}")], critic);
    let system = AgentSystem::new(hub, "fruit");
    let mut opt = Reflection::new("critic", "critic");
    let (hyps, _) = with_round(&system, |cx| opt.reflect(cx).unwrap());
    assert_eq!(hyps.len(), 1, "{hyps:?}");
    assert_eq!(hyps[0].targets, [VAR]);
    assert_eq!(hyps[0].severity, "high");
}

#[test]
fn reflection_skips_a_perfect_state() {
    let hub = fruit_hub(vec![ScriptedRule::substring("Task", "FINAL: banana")], fixing_critic());
    let system = AgentSystem::new(hub, "fruit");
    let mut opt = Reflection::new("critic", "critic");
    let ((hyps, props), events) = with_round(&system, |cx| {
        let h = opt.reflect(cx).unwrap();
        let p = opt.select(cx, &h).unwrap();
        (h, p)
    });
    assert!(hyps.is_empty() && props.is_empty());
    assert_eq!(model_calls(&events), 0);
}

#[test]
fn unparseable_critique_becomes_a_warning() {
    let hub = fruit_hub(vec![], vec![ScriptedRule::pattern("^REFLECT", "I think it is fine?")]);
    let system = AgentSystem::new(hub, "fruit");
    let mut opt = Reflection::new("critic", "critic");
    let (hyps, events) = with_round(&system, |cx| opt.reflect(cx).unwrap());
    assert!(hyps.is_empty());
    assert_eq!(warnings(&events), ["reflection/reflect: unparseable critique"]);
}

#[test]
fn proposals_for_frozen_variables_are_dropped() {
    let critic = vec![
        ScriptedRule::pattern("^REFLECT", format!("HYPOTHESIS {VAR}: x")),
        ScriptedRule::pattern("^SELECT", "PROPOSAL agent:fruit#impl_descriptor\n<improved>\nx\n</improved>"),
    ];
    let hub = fruit_hub(vec![], critic);
    let system = AgentSystem::new(hub, "fruit");
    let mut opt = Reflection::new("critic", "critic");
    let (props, events) = with_round(&system, |cx| {
        let h = opt.reflect(cx).unwrap();
        opt.select(cx, &h).unwrap()
    });
    assert!(props.is_empty());
    assert_eq!(warnings(&events).len(), 1);
}

#[test]
fn reinforcepp_stops_once_reward_is_one() {
    let hub = fruit_hub(instruction_actor(), fixing_critic());
    let system = AgentSystem::new(hub.clone(), "fruit");
    let config = RlConfig { t: 5, ..Default::default() };
    let out = reinforcepp_loop(&system, &objective().task, "banana", None, config, "critic", "critic").unwrap();
    assert_eq!(out.best_score, 1.0);
    assert!(out.converged);
    assert_eq!(out.rounds(), 1);
    assert_eq!(out.accepted, [true]);
    let solver = hub.registry(agp_core::EntityKind::Prompt).get_info("solver").unwrap();
    assert_eq!(solver.version.unwrap().to_string(), "0.1.1");
}

#[test]
fn reinforcepp_without_improvement_keeps_the_baseline() {
    let hub = fruit_hub(vec![], vec![]);
    let before = hub.head_hashes();
    let system = AgentSystem::new(hub.clone(), "fruit");
    let config = RlConfig { t: 1, ..Default::default() };
    let out = reinforcepp_loop(&system, &objective().task, "banana", None, config, "critic", "critic").unwrap();
    assert_eq!(out.rounds(), 1);
    assert_eq!(out.best_score, 0.0);
    assert!(!out.converged);
    assert_eq!(hub.head_hashes(), before);
    // The signals of the single round are traced as a decision event.
    let signals: Vec<&Value> = out.traces[1].events.iter().filter_map(|e| e.payload.get("reinforcepp")).collect();
    assert_eq!(signals.len(), 1);
    // y_t = y_prev = y_sft = "apple": ρ = 1, penalty 0, reward 0.
    let s = signals[0];
    assert_eq!((s["reward"].as_f64(), s["ratio"].as_f64(), s["penalty"].as_f64()), (Some(0.0), Some(1.0), Some(0.0)));
}

#[test]
fn reinforcepp_is_satisfied_by_a_correct_baseline() {
    let hub = fruit_hub(vec![ScriptedRule::substring("Task", "FINAL: banana")], fixing_critic());
    let system = AgentSystem::new(hub.clone(), "fruit");
    let out = reinforcepp_loop(&system, &objective().task, "banana", None, RlConfig::default(), "critic", "critic").unwrap();
    assert_eq!(out.rounds(), 0);
    assert_eq!(out.best_score, 1.0);
    assert!(out.traces.len() == 1 && out.accepted.is_empty());
}

#[test]
fn grpo_normalizes_a_group_with_one_perfect_rollout() {
    let actor = vec![ScriptedRule::substring("Task", "FINAL: banana").for_tag("grpo/rollout-2")];
    let hub = fruit_hub(actor, vec![]);
    let system = AgentSystem::new(hub, "fruit");
    let config = RlConfig { k: 4, t: 1, ..Default::default() };
    let mut opt = Grpo::new(config, "critic", "critic");
    run_loop(&system, &objective(), &mut opt, 1).unwrap();
    let (cands, g) = opt.last_group().unwrap();
    assert_eq!(cands, &["apple", "apple", "banana", "apple"]);
    assert_eq!(g.rewards, [0.0, 0.0, 1.0, 0.0]);
    let (mean, std) = ref_mean_std(&g.rewards);
    assert!((g.mean - mean).abs() < 1e-12 && (g.std - std).abs() < 1e-12);
    for (a, r) in g.advantages.iter().zip(&g.rewards) {
        assert!((a - (r - mean) / std).abs() < 1e-12);
    }
    // ρ = η("apple", y_i): 1 for the apple rollouts, 0 for banana.
    assert_eq!(g.ratios, [1.0, 1.0, 0.0, 1.0]);
    for i in 0..4 {
        assert!((g.objectives[i] - ref_grpo_objective(g.ratios[i], g.advantages[i], 0.2)).abs() < 1e-12);
    }
}

#[test]
fn grpo_single_rollout_has_zero_advantage() {
    let hub = fruit_hub(vec![], vec![]);
    let system = AgentSystem::new(hub, "fruit");
    let config = RlConfig { k: 1, t: 1, ..Default::default() };
    let out = grpo_loop(&system, &objective().task, "banana", config, "critic", "critic").unwrap();
    assert_eq!(out.rounds(), 1);
    let g = out.traces[1].events.iter().find_map(|e| e.payload.get("grpo")).unwrap();
    assert_eq!(g["advantages"], serde_json::json!([0.0]));
    assert_eq!(g["std"], serde_json::json!(0.0));
}

#[test]
fn rl_optimizers_need_a_target() {
    let hub = fruit_hub(vec![], vec![]);
    let system = AgentSystem::new(hub, "fruit");
    let mut objective = objective();
    objective.success.kind = agp_core::sepl::SuccessKind::PredicateScript;
    objective.success.value = "answer.len() > 3".into();
    objective.score = agp_core::sepl::ScoreSpec::Similarity { reference: Some("banana".into()) };
    let mut opt = Grpo::new(RlConfig::default(), "critic", "critic");
    assert!(matches!(run_loop(&system, &objective, &mut opt, 1), Err(Error::InvalidConfig(_))));
    let bad = RlConfig { k: 0, ..Default::default() };
    assert!(matches!(grpo_loop(&system, "t", "banana", bad, "critic", "critic"), Err(Error::InvalidConfig(_))));
}

#[test]
fn textgrad_without_trainable_prompts_makes_no_calls() {
    let hub = hub_with(
        scripted_gateway(vec![("actor", vec![], "FINAL: apple"), ("critic", vec![], "NONE")]),
        vec![
            RegistrationRecord::prompt("solver", "", "x"),
            RegistrationRecord::agent("fruit", "", &["solver"], &[], "actor"),
        ],
    );
    let before = hub.head_hashes();
    let system = AgentSystem::new(hub.clone(), "fruit");
    let mut opt = TextGrad::new("critic", "critic");
    let (props, events) = with_round(&system, |cx| {
        let h = opt.reflect(cx).unwrap();
        opt.select(cx, &h).unwrap()
    });
    assert!(props.is_empty());
    assert_eq!(model_calls(&events), 0);
    assert!(opt.gradients().is_empty());
    assert_eq!(hub.head_hashes(), before);
}

#[test]
fn loop_rejects_a_zero_budget() {
    let system = AgentSystem::new(fruit_hub(vec![], vec![]), "fruit");
    let mut opt = Reflection::new("critic", "critic");
    assert!(matches!(run_loop(&system, &objective(), &mut opt, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn toys_reach_their_expected_score_with_every_optimizer() {
    for name in ToyTask::NAMES {
        for kind in OptimizerKind::ALL {
            let toy = ToyTask::by_name(name).unwrap();
            let out = toy.run(&OptimizerConfig::new(kind)).unwrap();
            assert_eq!(out.best_score, toy.expected_score, "{name}/{kind:?}");
            assert!(out.committed_scores.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn textgrad_on_the_toy_uses_its_sequence_rules() {
    // A critic whose UPDATE replies change between rounds: first non-conforming, then delimited.
    let critic = vec![
        ScriptedRule::pattern("^EVALUATE", "too vague"),
        ScriptedRule::sequence(
            Matcher::Pattern("^UPDATE".into()),
            &["no markers here", "<improved>\nFollow the instruction.\n</improved>"],
        ),
    ];
    let hub = fruit_hub(instruction_actor(), critic);
    let system = AgentSystem::new(hub, "fruit");
    let mut opt = TextGrad::new("critic", "critic");
    let out = run_loop(&system, &objective(), &mut opt, 3).unwrap();
    assert_eq!(out.committed_scores, [0.0, 1.0]);
    let warned = out.traces[1].events.iter().any(|e| e.payload.get("warning").is_some());
    assert!(warned);
}
