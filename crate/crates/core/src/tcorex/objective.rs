//! The temporal objective: per-period CorEx terms on cross-weighted samples
//! plus a penalty on consecutive weight differences.

use ndarray::{Array1, Array2, ArrayView2, CowArray, Ix2};

use crate::config::{FitConfig, NoiseMode, Penalty};
use crate::corex::{evaluate, CorexWeights, LatentNoise, MomentStats, WeightedSamples};
use crate::error::{Error, Result};
use crate::optimizer::StackObjective;
use crate::parallel::{map_indexed, Execution};
use crate::rng::{standard_normal, stream, Purpose};

use super::dataset::{sample_weights, TemporalDataset};

/// Floor under the squared norm of the ℓ2 penalty.
pub const L2_NORM_FLOOR: f64 = 1e-12;

/// `Σ_t Φ(W_{t+1} − W_t)`.
pub fn temporal_penalty(weights: &[CorexWeights], phi: Penalty) -> Result<f64> {
    let stack: Vec<_> = weights.iter().map(|w| w.as_array().clone()).collect();
    check_stack(&stack)?;
    Ok(penalty_value_and_gradient(&stack, phi).0)
}

fn check_stack(stack: &[Array2<f64>]) -> Result<()> {
    if let Some(first) = stack.first() {
        if let Some((t, w)) = stack.iter().enumerate().find(|(_, w)| w.dim() != first.dim()) {
            return Err(Error::DimensionMismatch(format!(
                "weights of period {t} are {:?}, period 0 has {:?}",
                w.dim(),
                first.dim()
            )));
        }
    }
    Ok(())
}

/// Penalty value and its (sub)gradient with respect to every `W_t`.
/// The ℓ1 subgradient at zero is zero; the ℓ2 norm is `√(Σδ² + 1e-12)`.
pub fn penalty_value_and_gradient(stack: &[Array2<f64>], phi: Penalty) -> (f64, Vec<Array2<f64>>) {
    let mut grads: Vec<Array2<f64>> = stack.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let mut total = 0.0;
    for t in 1..stack.len() {
        let delta = &stack[t] - &stack[t - 1];
        let g = match phi {
            Penalty::L1 => {
                total += delta.iter().map(|v| v.abs()).sum::<f64>();
                delta.mapv(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
            }
            Penalty::L2 => {
                let norm = (delta.iter().map(|v| v * v).sum::<f64>() + L2_NORM_FLOOR).sqrt();
                total += norm;
                delta / norm
            }
        };
        grads[t] += &g;
        grads[t - 1] -= &g;
    }
    (total, grads)
}

/// Which periods feed period `t`: a contiguous row range of the stacked data
/// and the per-row weights `α_t(τ)` for those rows.
#[derive(Debug, Clone)]
struct PeriodWindow {
    start: usize,
    end: usize,
    row_weights: Array1<f64>,
}

/// Standardized periods prepared for repeated objective evaluations.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    stacked: Array2<f64>,
    offsets: Vec<usize>,
    windows: Vec<PeriodWindow>,
}

impl Problem {
    pub(crate) fn new(periods: &[Array2<f64>], beta: f64, cutoff: f64) -> Self {
        let views: Vec<_> = periods.iter().map(|b| b.view()).collect();
        let stacked = ndarray::concatenate(ndarray::Axis(0), &views).expect("periods share p");
        let mut offsets = vec![0];
        for b in periods {
            offsets.push(offsets.last().unwrap() + b.nrows());
        }
        let big_t = periods.len();
        let windows = (0..big_t)
            .map(|t| {
                let weights = sample_weights(t, big_t, beta, cutoff);
                let first = weights.first().unwrap().0;
                let last = weights.last().unwrap().0;
                let row_weights = weights
                    .iter()
                    .flat_map(|&(tau, a)| std::iter::repeat_n(a, periods[tau].nrows()))
                    .collect();
                PeriodWindow {
                    start: offsets[first],
                    end: offsets[last + 1],
                    row_weights,
                }
            })
            .collect();
        Self {
            stacked,
            offsets,
            windows,
        }
    }

    pub(crate) fn n_periods(&self) -> usize {
        self.windows.len()
    }

    pub(crate) fn p(&self) -> usize {
        self.stacked.ncols()
    }

    /// `√(1−ε²)·D + ε·E` with a fresh `E` per period keyed by `(phase, step)`.
    pub(crate) fn annealed(&self, eps: f64, seed: u64, key: u64) -> CowArray<'_, f64, Ix2> {
        if eps == 0.0 {
            return CowArray::from(self.stacked.view());
        }
        let keep = (1.0 - eps * eps).sqrt();
        let mut out = &self.stacked * keep;
        for tau in 0..self.offsets.len() - 1 {
            let (a, b) = (self.offsets[tau], self.offsets[tau + 1]);
            let noise = standard_normal(&mut stream(seed, Purpose::DataNoise, key, tau as u64), b - a, self.p());
            out.slice_mut(ndarray::s![a..b, ..]).scaled_add(eps, &noise);
        }
        CowArray::from(out)
    }

    pub(crate) fn samples<'a>(&self, data: ArrayView2<'a, f64>, t: usize) -> Result<WeightedSamples<'a>> {
        let w = &self.windows[t];
        WeightedSamples::new(data.slice_move(ndarray::s![w.start..w.end, ..]), w.row_weights.view())
    }

    pub(crate) fn rows(&self, t: usize) -> usize {
        self.windows[t].end - self.windows[t].start
    }

    /// Noise-free moments of every period under `stack`.
    pub(crate) fn analytic_moments(&self, stack: &[Array2<f64>], exec: Execution) -> Result<Vec<MomentStats>> {
        map_indexed(exec, self.n_periods(), |t| {
            let samples = self.samples(self.stacked.view(), t)?;
            let w = CorexWeights::new(stack[t].clone())?;
            Ok(evaluate(&w, &samples, &LatentNoise::Analytic, false)?.stats)
        })
        .into_iter()
        .collect()
    }
}

/// One evaluation of the training objective: fixed annealing level and fixed
/// noise draws, so value and gradient are deterministic functions of the
/// weight stack.
pub(crate) struct StepObjective<'a> {
    pub problem: &'a Problem,
    pub data: ArrayView2<'a, f64>,
    pub lambda: f64,
    pub phi: Penalty,
    pub noise: NoiseMode,
    pub seed: u64,
    pub key: u64,
    pub execution: Execution,
}

/// Per-period breakdown of a step evaluation.
pub(crate) struct StepValue {
    pub total: f64,
    pub gradients: Vec<Array2<f64>>,
}

impl StepObjective<'_> {
    fn latent_noise(&self, t: usize, m: usize) -> LatentNoise {
        match self.noise {
            NoiseMode::Analytic => LatentNoise::Analytic,
            NoiseMode::Sampled => LatentNoise::sample(
                &mut stream(self.seed, Purpose::LatentNoise, self.key, t as u64),
                self.problem.rows(t),
                m,
            ),
        }
    }

    pub(crate) fn evaluate(&self, stack: &[Array2<f64>], with_gradient: bool) -> Result<StepValue> {
        if stack.len() != self.problem.n_periods() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight matrices for {} periods",
                stack.len(),
                self.problem.n_periods()
            )));
        }
        check_stack(stack)?;
        if stack[0].ncols() != self.problem.p() {
            return Err(Error::DimensionMismatch(format!(
                "weights have {} columns, data has {}",
                stack[0].ncols(),
                self.problem.p()
            )));
        }
        let m = stack[0].nrows();
        let terms = map_indexed(self.execution, stack.len(), |t| {
            let samples = self.problem.samples(self.data, t)?;
            let w = CorexWeights::new(stack[t].clone())?;
            let ev = evaluate(&w, &samples, &self.latent_noise(t, m), with_gradient)?;
            Ok::<_, Error>((ev.value, ev.gradient))
        });
        let mut total = 0.0;
        let mut gradients = Vec::with_capacity(stack.len());
        for (t, term) in terms.into_iter().enumerate() {
            let (v, g) = term.map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("period {t}: {msg}")),
                other => other,
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("period {t}: objective {v}")));
            }
            total += v;
            gradients.push(g.unwrap_or_else(|| Array2::zeros(stack[t].raw_dim())));
        }
        if self.lambda > 0.0 {
            let (pen, pg) = penalty_value_and_gradient(stack, self.phi);
            total += self.lambda * pen;
            for (g, p) in gradients.iter_mut().zip(pg) {
                g.scaled_add(self.lambda, &p);
            }
        }
        Ok(StepValue { total, gradients })
    }
}

impl StackObjective for StepObjective<'_> {
    fn value_and_gradient(&self, stack: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
        let v = self.evaluate(stack, true)?;
        Ok((v.total, v.gradients))
    }

    fn value(&self, stack: &[Array2<f64>]) -> Result<f64> {
        Ok(self.evaluate(stack, false)?.total)
    }
}

/// The full temporal objective at annealing level `eps` for an already
/// standardized dataset, with noise drawn from `noise_seed`.
pub fn tcorex_objective(
    weights: &[CorexWeights],
    dataset: &TemporalDataset,
    config: &FitConfig,
    eps: f64,
    noise_seed: u64,
) -> Result<f64> {
    Ok(tcorex_objective_and_gradient(weights, dataset, config, eps, noise_seed)?.0)
}

/// Objective and its exact gradient with respect to every period's weights,
/// with the annealing and latent noise drawn once from `noise_seed`.
pub fn tcorex_objective_and_gradient(
    weights: &[CorexWeights],
    dataset: &TemporalDataset,
    config: &FitConfig,
    eps: f64,
    noise_seed: u64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0, 1], got {eps}")));
    }
    let problem = Problem::new(dataset.periods(), config.beta, config.weight_cutoff);
    let data = problem.annealed(eps, noise_seed, 0);
    let stack: Vec<_> = weights.iter().map(|w| w.as_array().clone()).collect();
    let objective = StepObjective {
        problem: &problem,
        data: data.view(),
        lambda: config.lambda,
        phi: config.phi,
        noise: config.noise,
        seed: noise_seed,
        key: 0,
        execution: config.execution,
    };
    let v = objective.evaluate(&stack, true)?;
    Ok((v.total, v.gradients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn penalty_hand_values() {
        let w1 = CorexWeights::new(array![[1.0, 1.0]]).unwrap();
        let w2 = CorexWeights::new(array![[4.0, 5.0]]).unwrap();
        let pair = [w1.clone(), w2];
        assert!((temporal_penalty(&pair, Penalty::L2).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(temporal_penalty(&pair, Penalty::L1).unwrap(), 7.0);
        assert_eq!(temporal_penalty(&[w1.clone(), w1.clone()], Penalty::L1).unwrap(), 0.0);
        assert_eq!(temporal_penalty(&[w1], Penalty::L2).unwrap(), 0.0);
    }

    #[test]
    fn penalty_shape_mismatch() {
        let a = CorexWeights::zeros(1, 2);
        let b = CorexWeights::zeros(2, 2);
        assert!(temporal_penalty(&[a, b], Penalty::L1).is_err());
    }

    #[test]
    fn l2_gradient_is_unit_direction() {
        let stack = vec![array![[0.0, 0.0]], array![[3.0, 4.0]]];
        let (_, g) = penalty_value_and_gradient(&stack, Penalty::L2);
        assert!((g[1][[0, 0]] - 0.6).abs() < 1e-12);
        assert!((g[1][[0, 1]] - 0.8).abs() < 1e-12);
        assert!((g[0][[0, 0]] + 0.6).abs() < 1e-12);
        assert!((g[0][[0, 1]] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn l1_subgradient_zero_at_equal() {
        let stack = vec![array![[1.0, 2.0]], array![[1.0, 3.0]]];
        let (_, g) = penalty_value_and_gradient(&stack, Penalty::L1);
        assert_eq!(g[1], array![[0.0, 1.0]]);
    }

    #[test]
    fn windows_cover_weighted_periods() {
        let periods = vec![Array2::zeros((2, 3)), Array2::zeros((3, 3)), Array2::zeros((4, 3))];
        let problem = Problem::new(&periods, 0.5, 0.3);
        // Period 0 reaches period 1 (0.5) but not period 2 (0.25 < 0.3).
        assert_eq!(problem.rows(0), 5);
        assert_eq!(problem.rows(1), 9);
        assert_eq!(problem.rows(2), 7);
        assert_eq!(problem.windows[0].row_weights.to_vec(), vec![1.0, 1.0, 0.5, 0.5, 0.5]);
    }
}
