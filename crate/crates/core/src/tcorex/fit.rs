use std::time::Instant;

use crate::config::FitConfig;
use crate::corex::CorexWeights;
use crate::error::{Error, Result};
use crate::train::{final_covariances, fit_static, run, FitLog, TrainSettings};

use super::dataset::TemporalDataset;
use super::model::TCorexModel;
use super::objective::Problem;

/// Fits the temporal model to raw (unstandardized) periods.
pub fn fit(raw: &TemporalDataset, config: &FitConfig) -> Result<TCorexModel> {
    Ok(fit_with_log(raw, config)?.0)
}

/// Like [`fit`], also returning the per-step objective trace.
///
/// Steps: weighted per-period standardization; initialization of every `W_t`
/// from a linear CorEx fit on all samples pooled (globally standardized, half
/// the per-round budget); annealed Adam on the temporal objective; final
/// estimates from noise-free moments. With a single period the pooled fit is
/// the whole problem, so it runs once with the full budget.
pub fn fit_with_log(raw: &TemporalDataset, config: &FitConfig) -> Result<(TCorexModel, FitLog)> {
    config.validate()?;
    let started = Instant::now();
    let standardized = raw.standardize(config.beta, config.weight_cutoff)?;
    let stats = standardized
        .standardization()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("standardization missing".into()))?;
    let mut log = FitLog::default();

    if raw.n_periods() == 1 {
        let (w, cov, rounds) = fit_static(
            standardized.period(0).view(),
            config.m,
            config,
            config.steps_per_round,
            0,
        )?;
        log.rounds = rounds;
        log.total_seconds = started.elapsed().as_secs_f64();
        let model = TCorexModel {
            weights: vec![w],
            covariances: vec![cov],
            period_means: stats.means,
            period_stds: stats.stds,
            config: config.clone(),
        };
        return Ok((model, log));
    }

    let pooled = raw.standardize_pooled()?;
    let (init, _, init_rounds) = fit_static(pooled.view(), config.m, config, config.init_steps(), 0)?;
    log.init_rounds = init_rounds;

    let problem = Problem::new(standardized.periods(), config.beta, config.weight_cutoff);
    let mut stack = vec![init.into_inner(); raw.n_periods()];
    let settings = TrainSettings {
        config,
        lambda: config.lambda,
        phi: config.phi,
        steps_per_round: config.steps_per_round,
        phase: 1,
    };
    log.rounds = run(&problem, &mut stack, &settings)?;
    let covariances = final_covariances(&problem, &stack, config)?;
    let weights = stack
        .into_iter()
        .map(CorexWeights::new)
        .collect::<Result<Vec<_>>>()?;
    log.total_seconds = started.elapsed().as_secs_f64();
    Ok((
        TCorexModel {
            weights,
            covariances,
            period_means: stats.means,
            period_stds: stats.stds,
            config: config.clone(),
        },
        log,
    ))
}
