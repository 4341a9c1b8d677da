//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls the hashing, similarity, or signal code under test: every reference
//! value is recomputed from the formulas directly.
#![allow(dead_code)]

use std::sync::Arc;

use agp_core::gateway::{Gateway, ScriptedBackend, ScriptedRule};
use agp_core::registry::{RecordDelta, Registry, Update};
use agp_core::{EntityKind, RegistrationRecord, ResourceHub};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

// ---------------------------------------------------------------------------
// Canonical hashing oracle

/// Sorted-key, whitespace-free JSON written by hand.
pub fn canon(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canon(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canon).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Wire form of a record with its version dropped: what must be equal for two records to
/// carry the same content.
pub fn content_wire(record: &RegistrationRecord) -> Value {
    let mut v = serde_json::to_value(record).unwrap();
    v.as_object_mut().unwrap().remove("version");
    v
}

pub fn oracle_hash(record: &RegistrationRecord) -> String {
    sha256_hex(&canon(&content_wire(record)))
}

/// Drop every `created_at` field; timestamps differ between otherwise identical replays.
pub fn strip_timestamps(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| k.as_str() != "created_at")
                .map(|(k, v)| (k.clone(), strip_timestamps(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip_timestamps).collect()),
        other => other.clone(),
    }
}

// ---------------------------------------------------------------------------
// Similarity and signal oracles

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Full-matrix Levenshtein, memo-free and allocation-heavy on purpose.
pub fn ref_levenshtein(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = *[d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost].iter().min().unwrap();
        }
    }
    d[a.len()][b.len()]
}

pub fn ref_eta(a: &str, b: &str) -> f64 {
    let (ta, tb) = (toks(a), toks(b));
    let longest = [ta.len(), tb.len(), 1].into_iter().max().unwrap();
    1.0 - ref_levenshtein(&ta, &tb) as f64 / longest as f64
}

pub fn ref_reward(y: &str, y_star: &str) -> f64 {
    let norm = |s: &str| s.trim().to_lowercase();
    if norm(y) == norm(y_star) {
        1.0
    } else {
        0.0
    }
}

/// Symmetric clip written per sign of A: for A ≥ 0 the upper bound binds, for A < 0 the lower.
pub fn ref_ppo_objective(rho: f64, a: f64, eps: f64) -> f64 {
    if a >= 0.0 {
        a * if rho > 1.0 + eps { 1.0 + eps } else { rho }
    } else {
        a * if rho < 1.0 - eps { 1.0 - eps } else { rho }
    }
}

/// Asymmetric clip with explicit case analysis.
pub fn ref_grpo_objective(rho: f64, a: f64, eps: f64) -> f64 {
    let bar = if a >= 0.0 {
        if rho < 1.0 + eps {
            rho
        } else {
            1.0 + eps
        }
    } else if rho > 1.0 - eps {
        rho
    } else {
        1.0 - eps
    };
    let (x, y) = (rho * a, bar * a);
    if x < y {
        x
    } else {
        y
    }
}

pub fn ref_penalty(eta_sft: f64, beta: f64, eps0: f64) -> f64 {
    let floor = if eta_sft > eps0 { eta_sft } else { eps0 };
    beta * (-floor.ln()).abs()
}

/// (r, ρ, pen, A, J) by the formulas.
pub fn ref_reinforcepp(y: &str, y_prev: &str, y_star: &str, y_sft: &str, eps: f64, beta: f64, eps0: f64) -> [f64; 5] {
    let r = ref_reward(y, y_star);
    let rho = ref_eta(y_prev, y);
    let pen = ref_penalty(ref_eta(y_sft, y), beta, eps0);
    let a = r - pen;
    [r, rho, pen, a, ref_ppo_objective(rho, a, eps)]
}

/// Two-pass population mean and std.
pub fn ref_mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Random generators

pub const VOCAB: [&str; 10] = ["apple", "banana", "kiwi", "Fig", "plum", "lime", "pear", "date", "1", "2"];
pub const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

pub fn random_text(rng: &mut StdRng, max_tokens: usize) -> String {
    let n = rng.gen_range(0..=max_tokens);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str([" ", "  ", "\t", "\n"][rng.gen_range(0..4)]);
        }
        s.push_str(VOCAB[rng.gen_range(0..VOCAB.len())]);
    }
    s
}

pub fn nonempty_text(rng: &mut StdRng) -> String {
    let mut s = random_text(rng, 6);
    if s.trim().is_empty() {
        s = "kiwi".into();
    }
    s
}

pub fn random_payload(rng: &mut StdRng) -> Map<String, Value> {
    let mut m = Map::new();
    for _ in 0..rng.gen_range(0..4) {
        let v = match rng.gen_range(0..4) {
            0 => json!(rng.gen_range(-5..50)),
            1 => json!(nonempty_text(rng)),
            2 => json!([rng.gen_bool(0.5), null]),
            _ => json!({ "nested": nonempty_text(rng) }),
        };
        m.insert(NAMES[rng.gen_range(0..NAMES.len())].to_string(), v);
    }
    m
}

const TOOL_SCRIPTS: [&str; 3] = ["input", "42", "`${input}`"];

pub fn random_record(rng: &mut StdRng, kind: EntityKind, name: &str) -> RegistrationRecord {
    let desc = random_text(rng, 4);
    let mut r = match kind {
        EntityKind::Prompt => RegistrationRecord::prompt(name, desc, nonempty_text(rng)),
        EntityKind::Tool => RegistrationRecord::tool(name, desc, TOOL_SCRIPTS[rng.gen_range(0..TOOL_SCRIPTS.len())]),
        EntityKind::Environment => RegistrationRecord::environment(name, desc, "input"),
        EntityKind::Memory => RegistrationRecord::memory(name, desc, random_payload(rng)),
        EntityKind::Agent => RegistrationRecord::agent(name, desc, &["a"], &[], "actor"),
    }
    .trainable(rng.gen_bool(0.5));
    if rng.gen_bool(0.3) {
        r = r.with_metadata("note", json!(nonempty_text(rng)));
    }
    if rng.gen_bool(0.2) {
        r = r.with_param("seed", json!(rng.gen_range(0..100)));
    }
    if rng.gen_bool(0.2) {
        r = r.with_export(agp_core::record::ExportForm::NaturalLanguageText, nonempty_text(rng));
    }
    r
}

/// A random update that is valid for `kind` most of the time.
pub fn random_update(rng: &mut StdRng, kind: EntityKind) -> Update {
    if rng.gen_bool(0.35) {
        return Update::Delta(RecordDelta {
            description: Some(random_text(rng, 4)),
            trainable: rng.gen_bool(0.3).then(|| rng.gen_bool(0.5)),
            ..Default::default()
        });
    }
    match kind {
        EntityKind::Memory => Update::Source(Value::Object(random_payload(rng)).to_string()),
        EntityKind::Tool | EntityKind::Environment => {
            Update::Source(TOOL_SCRIPTS[rng.gen_range(0..TOOL_SCRIPTS.len())].to_string())
        }
        _ => Update::Source(nonempty_text(rng)),
    }
}

pub fn field_of(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Prompt => "entity.mapping.prompt_text",
        EntityKind::Memory => "entity.mapping.payload",
        _ => "impl_descriptor",
    }
}

/// A value acceptable for the variable field of `kind`.
pub fn random_field_value(rng: &mut StdRng, kind: EntityKind) -> String {
    match kind {
        EntityKind::Memory => Value::Object(random_payload(rng)).to_string(),
        EntityKind::Tool | EntityKind::Environment => TOOL_SCRIPTS[rng.gen_range(0..TOOL_SCRIPTS.len())].to_string(),
        _ => nonempty_text(rng),
    }
}

/// Fill `reg` with a random history of registrations and mutations; errors are expected and ignored.
pub fn random_registry(rng: &mut StdRng, kind: EntityKind, ops: usize) -> Registry {
    let reg = Registry::new(kind);
    for _ in 0..ops {
        let name = *NAMES.choose(rng).unwrap();
        match rng.gen_range(0..10) {
            0..=2 => {
                let _ = reg.register(random_record(rng, kind, name));
            }
            3..=5 => {
                let _ = reg.update(name, random_update(rng, kind));
            }
            6 => {
                let _ = reg.copy(name, NAMES.choose(rng).unwrap());
            }
            7 => {
                if let Ok(h) = reg.history(name) {
                    let _ = reg.restore(name, h.choose(rng).unwrap().version);
                }
            }
            8 => {
                let id = format!("{kind}:{name}#{}", field_of(kind));
                let _ = reg.set_variables(&[(id, random_field_value(rng, kind))]);
            }
            _ => {
                if rng.gen_bool(0.3) {
                    let _ = reg.unregister(name);
                }
            }
        }
    }
    reg
}

// ---------------------------------------------------------------------------
// Hub fixtures

/// A gateway of scripted providers: `(name, rules, fallback)`.
pub fn scripted_gateway(providers: Vec<(&str, Vec<ScriptedRule>, &str)>) -> Arc<Gateway> {
    let gw = Gateway::new();
    for (name, rules, fallback) in providers {
        let backend = ScriptedBackend::new(rules).unwrap().with_fallback(fallback);
        gw.register_backend(name, Arc::new(backend)).unwrap();
    }
    Arc::new(gw)
}

pub fn hub_with(gateway: Arc<Gateway>, records: Vec<RegistrationRecord>) -> Arc<ResourceHub> {
    let hub = ResourceHub::new(gateway);
    for r in records {
        hub.register(r).unwrap();
    }
    Arc::new(hub)
}
