//! Deterministic fixtures shared by the benchmarks.

use agp_core::registry::Registry;
use agp_core::{EntityKind, RegistrationRecord};

/// `n` space-separated tokens drawn from a small vocabulary, shifted by `seed`.
pub fn token_text(n: usize, seed: usize) -> String {
    const VOCAB: [&str; 8] = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    (0..n)
        .map(|i| VOCAB[(i * 7 + seed) % VOCAB.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A prompt registry with `resources` heads, each updated `updates` times.
pub fn prompt_registry(resources: usize, updates: usize) -> Registry {
    let reg = Registry::new(EntityKind::Prompt);
    for r in 0..resources {
        let name = format!("p{r}");
        reg.register(RegistrationRecord::prompt(&name, "bench prompt", token_text(16, r)).trainable(true))
            .expect("register");
        for u in 0..updates {
            reg.update(&name, agp_core::registry::Update::Source(token_text(16, r + u + 1)))
                .expect("update");
        }
    }
    reg
}
