//! Reward, advantage, and clipped-objective signals for the RL-style optimizers.

use serde::{Deserialize, Serialize};

use super::similarity::{reward, similarity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    /// Clip width ε, in (0, 1).
    pub epsilon: f64,
    /// Penalty coefficient β ≥ 0.
    pub beta: f64,
    /// Log floor ε₀ > 0.
    pub epsilon0: f64,
    /// Candidates per group, K ≥ 1.
    pub k: usize,
    /// Budget T ≥ 1.
    pub t: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            epsilon: 0.2,
            beta: 0.01,
            epsilon0: 1e-8,
            k: 4,
            t: 3,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta {} must be non-negative", self.beta)));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon0 {} must be positive", self.epsilon0)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if self.t == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlSignals {
    pub reward: f64,
    pub advantage: f64,
    pub objective: f64,
    pub ratio: f64,
    pub penalty: f64,
}

/// J = min(ρA, clip(ρ, 1−ε, 1+ε)·A).
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// pen = β·|ln max(η_sft, ε₀)|.
pub fn penalty(eta_sft: f64, beta: f64, epsilon0: f64) -> f64 {
    beta * eta_sft.max(epsilon0).ln().abs()
}

pub fn reinforcepp_signals(y_t: &str, y_prev: &str, y_star: &str, y_sft: &str, config: &RlConfig) -> RlSignals {
    let r = reward(y_t, y_star);
    let ratio = similarity(y_prev, y_t);
    let pen = penalty(similarity(y_sft, y_t), config.beta, config.epsilon0);
    let advantage = r - pen;
    RlSignals {
        reward: r,
        advantage,
        objective: clipped_objective(ratio, advantage, config.epsilon),
        ratio,
        penalty: pen,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSignals {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub objectives: Vec<f64>,
    pub ratios: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation, and A_i = (r_i − r̄)/σ (all zero when σ = 0).
pub fn group_advantages(rewards: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let adv = if std > 0.0 {
        rewards.iter().map(|r| (r - mean) / std).collect()
    } else {
        vec![0.0; rewards.len()]
    };
    (mean, std, adv)
}

/// Asymmetric clip: ρ̄ = min(ρ, 1+ε) when A ≥ 0, else max(ρ, 1−ε); J = min(ρA, ρ̄A).
pub fn grpo_clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = if advantage >= 0.0 {
        ratio.min(1.0 + epsilon)
    } else {
        ratio.max(1.0 - epsilon)
    };
    (ratio * advantage).min(clipped * advantage)
}

pub fn grpo_signals(candidates: &[String], y_star: &str, y_prev: &str, config: &RlConfig) -> Result<GroupSignals> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let rewards: Vec<f64> = candidates.iter().map(|y| reward(y, y_star)).collect();
    let (mean, std, advantages) = group_advantages(&rewards);
    let ratios: Vec<f64> = candidates.iter().map(|y| similarity(y_prev, y)).collect();
    let objectives = ratios
        .iter()
        .zip(&advantages)
        .map(|(&rho, &a)| grpo_clipped_objective(rho, a, config.epsilon))
        .collect();
    Ok(GroupSignals {
        rewards,
        advantages,
        objectives,
        ratios,
        mean,
        std,
    })
}
