use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::Execution;

/// Penalty on consecutive weight differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// Entrywise absolute sum; suits sudden changes.
    #[default]
    L1,
    /// Euclidean norm of the flattened difference; suits smooth drift.
    L2,
}

/// How latent noise is treated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Fresh Gaussian draw every step.
    #[default]
    Sampled,
    /// Closed-form expectation over the noise; deterministic.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Default annealing schedule: `0.6, 0.6², …, 0.6⁶, 0`.
pub fn default_anneal_schedule() -> Vec<f64> {
    let mut s: Vec<f64> = (1..=6).map(|k| 0.6f64.powi(k)).collect();
    s.push(0.0);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Number of latent factors.
    pub m: usize,
    pub lambda: f64,
    /// Decay of cross-period sample weights, `α_t(τ) = β^|t−τ|`.
    pub beta: f64,
    pub phi: Penalty,
    pub anneal_schedule: Vec<f64>,
    pub steps_per_round: usize,
    /// Per-round budget for the pooled initialization; `None` means half of
    /// `steps_per_round`.
    pub init_steps_per_round: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub weight_cutoff: f64,
    /// Relative change between consecutive `convergence_window`-step means of
    /// the objective below which a round stops early.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub noise: NoiseMode,
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m: 8,
            lambda: 0.0,
            beta: 0.5,
            phi: Penalty::L1,
            anneal_schedule: default_anneal_schedule(),
            steps_per_round: 500,
            init_steps_per_round: None,
            adam: AdamConfig::default(),
            seed: 0,
            weight_cutoff: 1e-9,
            convergence_tol: 1e-6,
            convergence_window: 10,
            noise: NoiseMode::Sampled,
            execution: Execution::Parallel,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.anneal_schedule.is_empty() || *self.anneal_schedule.last().unwrap() != 0.0 {
            return bad("anneal schedule must be non-empty and end in 0".into());
        }
        if self.anneal_schedule.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("anneal noise levels must lie in [0, 1]".into());
        }
        if self.steps_per_round == 0 {
            return bad("steps_per_round must be positive".into());
        }
        if self.convergence_window == 0 {
            return bad("convergence_window must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        if !(self.weight_cutoff > 0.0 && self.weight_cutoff <= 1.0) {
            return bad(format!("weight_cutoff must lie in (0, 1], got {}", self.weight_cutoff));
        }
        Ok(())
    }

    pub fn init_steps(&self) -> usize {
        self.init_steps_per_round
            .unwrap_or(self.steps_per_round / 2)
            .max(1)
    }
}
