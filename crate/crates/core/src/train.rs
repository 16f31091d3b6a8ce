//! Annealed Adam training shared by the static and temporal estimators.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{FitConfig, Penalty};
use crate::corex::{covariance_estimate, CorexWeights};
use crate::dlr::DiagLowRank;
use crate::error::{Error, Result};
use crate::optimizer::{adam_step, check_finite, AdamState};
use crate::rng::{stream, Purpose};
use crate::tcorex::objective::{Problem, StepObjective};

/// Objective trace of one annealing round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub eps: f64,
    /// Objective at the start of every step, before the update.
    pub objectives: Vec<f64>,
    pub converged: bool,
    pub seconds: f64,
}

impl RoundLog {
    /// Largest rise of the `window`-step moving average above its running
    /// minimum, as a fraction of the moving average's range. Zero for a
    /// non-increasing trend.
    pub fn trend_violation(&self, window: usize) -> f64 {
        let n = self.objectives.len();
        if window == 0 || n < window + 1 {
            return 0.0;
        }
        let smoothed: Vec<f64> = self
            .objectives
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        let lo = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range <= 0.0 {
            return 0.0;
        }
        let mut running_min = f64::INFINITY;
        let mut worst: f64 = 0.0;
        for s in smoothed {
            running_min = running_min.min(s);
            worst = worst.max(s - running_min);
        }
        worst / range
    }
}

/// Everything recorded while fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub init_rounds: Vec<RoundLog>,
    pub rounds: Vec<RoundLog>,
    pub total_seconds: f64,
}

impl FitLog {
    /// Objective after the last recorded step.
    pub fn final_objective(&self) -> Option<f64> {
        self.rounds
            .last()
            .or(self.init_rounds.last())
            .and_then(|r| r.objectives.last().copied())
    }

    pub fn total_steps(&self) -> usize {
        self.rounds.iter().map(|r| r.objectives.len()).sum()
    }
}

pub(crate) struct TrainSettings<'a> {
    pub config: &'a FitConfig,
    pub lambda: f64,
    pub phi: Penalty,
    pub steps_per_round: usize,
    /// Separates the noise streams of independent training phases.
    pub phase: u64,
}

fn converged(history: &[f64], window: usize, tol: f64) -> bool {
    let n = history.len();
    if n < 2 * window {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let prev = mean(&history[n - 2 * window..n - window]);
    let cur = mean(&history[n - window..]);
    (cur - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// Runs every annealing round on `stack` in place.
pub(crate) fn run(
    problem: &Problem,
    stack: &mut [Array2<f64>],
    settings: &TrainSettings,
) -> Result<Vec<RoundLog>> {
    let cfg = settings.config;
    let mut adam = AdamState::new(stack);
    let mut logs = Vec::with_capacity(cfg.anneal_schedule.len());
    let mut global_step: u64 = 0;
    for (round, &eps) in cfg.anneal_schedule.iter().enumerate() {
        let started = Instant::now();
        let mut objectives = Vec::with_capacity(settings.steps_per_round);
        let mut done = false;
        for step in 0..settings.steps_per_round {
            let key = (settings.phase << 32) | global_step;
            global_step += 1;
            let data = problem.annealed(eps, cfg.seed, key);
            let objective = StepObjective {
                problem,
                data: data.view(),
                lambda: settings.lambda,
                phi: settings.phi,
                noise: cfg.noise,
                seed: cfg.seed,
                key,
                execution: cfg.execution,
            };
            let diverged = |detail: String| Error::Divergence { round, step, detail };
            let value = objective.evaluate(stack, true).map_err(|e| diverged(e.to_string()))?;
            if !value.total.is_finite() {
                return Err(diverged(format!("objective is {}", value.total)));
            }
            check_finite(&value.gradients).map_err(|e| diverged(e.to_string()))?;
            objectives.push(value.total);
            adam_step(stack, &value.gradients, &mut adam, &cfg.adam)?;
            if converged(&objectives, cfg.convergence_window, cfg.convergence_tol) {
                done = true;
                break;
            }
        }
        logs.push(RoundLog {
            eps,
            objectives,
            converged: done,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(logs)
}

/// Noise-free covariance estimate of every period.
pub(crate) fn final_covariances(
    problem: &Problem,
    stack: &[Array2<f64>],
    config: &FitConfig,
) -> Result<Vec<DiagLowRank>> {
    problem
        .analytic_moments(stack, config.execution)?
        .iter()
        .map(covariance_estimate)
        .collect()
}

/// Single-period fit from random `N(0, 1/p)` weights.
pub(crate) fn fit_static(
    data: ArrayView2<f64>,
    m: usize,
    config: &FitConfig,
    steps_per_round: usize,
    phase: u64,
) -> Result<(CorexWeights, DiagLowRank, Vec<RoundLog>)> {
    let config = FitConfig { m, ..config.clone() };
    config.validate()?;
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::InvalidArgument("empty data".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input data".into()));
    }
    let problem = Problem::new(&[data.to_owned()], 0.5, 1.0);
    let init = CorexWeights::random(m, data.ncols(), &mut stream(config.seed, Purpose::Init, phase, 0));
    let mut stack = vec![init.into_inner()];
    let settings = TrainSettings {
        config: &config,
        lambda: 0.0,
        phi: config.phi,
        steps_per_round,
        phase,
    };
    let logs = run(&problem, &mut stack, &settings)?;
    let cov = final_covariances(&problem, &stack, &config)?.pop().expect("one period");
    let w = CorexWeights::new(stack.pop().expect("one period"))?;
    Ok((w, cov, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_violation_detects_rise() {
        let falling = RoundLog {
            eps: 0.0,
            objectives: (0..50).map(|i| 100.0 - i as f64).collect(),
            converged: false,
            seconds: 0.0,
        };
        assert_eq!(falling.trend_violation(10), 0.0);
        let mut rising = falling.clone();
        rising.objectives.extend((0..20).map(|i| 51.0 + 2.0 * i as f64));
        assert!(rising.trend_violation(10) > 0.1);
    }

    #[test]
    fn convergence_window() {
        let flat = vec![1.0; 20];
        assert!(converged(&flat, 10, 1e-6));
        let moving: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(!converged(&moving, 10, 1e-6));
        assert!(!converged(&flat[..19], 10, 1e-6));
    }
}
