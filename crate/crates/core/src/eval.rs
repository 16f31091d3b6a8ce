//! Evaluation: Gaussian negative log-likelihood, clustering by strongest
//! latent factor with the adjusted Rand index, and change-point scores from
//! differences of consecutive precision matrices.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dlr::DiagLowRank;
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::tcorex::{TCorexModel, TemporalDataset};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub per_period_nll: Vec<f64>,
    pub nll: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_period_ari: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changepoint_scores: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn from_nll(per_period_nll: Vec<f64>) -> Self {
        let nll = mean(&per_period_nll);
        Self {
            version: REPORT_VERSION,
            per_period_nll,
            nll,
            per_period_ari: None,
            ari: None,
            changepoint_scores: None,
        }
    }

    pub fn with_ari(mut self, per_period: Vec<f64>) -> Self {
        self.ari = Some(mean(&per_period));
        self.per_period_ari = Some(per_period);
        self
    }

    pub fn with_changepoints(mut self, scores: Vec<f64>) -> Self {
        self.changepoint_scores = Some(scores);
        self
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over rows of `x` of `−log N(x; mean, cov)`.
pub fn gaussian_nll(cov: &DiagLowRank, mean: ArrayView1<f64>, x: ArrayView2<f64>) -> Result<f64> {
    if mean.len() != cov.p() || x.ncols() != cov.p() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {p}x{p}, mean has {} entries, samples have {} columns",
            mean.len(),
            x.ncols(),
            p = cov.p()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("no test samples".into()));
    }
    let log_det = cov.log_det()?;
    let precision = cov.invert()?;
    let centered = &x - &mean.insert_axis(Axis(0));
    let quad = precision.quadratic_forms(centered.view())?;
    let constant = cov.p() as f64 * (2.0 * PI).ln() + log_det;
    Ok(quad.iter().map(|q| 0.5 * (constant + q)).sum::<f64>() / x.nrows() as f64)
}

/// Per-period NLL of raw-space covariances `covs[t]` with means `means[t]`.
pub fn nll_per_period(
    covs: &[DiagLowRank],
    means: ArrayView2<f64>,
    test: &TemporalDataset,
    exec: Execution,
) -> Result<Vec<f64>> {
    if covs.len() != test.n_periods() || means.nrows() != covs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates, {} mean rows, {} test periods",
            covs.len(),
            means.nrows(),
            test.n_periods()
        )));
    }
    map_indexed(exec, covs.len(), |t| {
        gaussian_nll(&covs[t], means.row(t), test.period(t).view()).map_err(|e| match e {
            Error::NotPositiveDefinite(msg) => {
                Error::NotPositiveDefinite(format!("estimate of period {t}: {msg}"))
            }
            other => other,
        })
    })
    .into_iter()
    .collect()
}

/// Time-averaged NLL of a fitted model on raw test data.
pub fn nll(model: &TCorexModel, test: &TemporalDataset) -> Result<EvalReport> {
    if test.p() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} variables, test data has {}",
            model.p(),
            test.p()
        )));
    }
    let covs = (0..model.n_periods())
        .map(|t| model.raw_covariance(t))
        .collect::<Result<Vec<_>>>()?;
    let per = nll_per_period(&covs, model.period_means.view(), test, model.config.execution)?;
    Ok(EvalReport::from_nll(per))
}

/// Zero-based label of the strongest factor for each variable: the row of
/// `loadings` (`m×p`) with the largest absolute entry in that column, ties to
/// the smallest row.
pub fn cluster_from_loadings(loadings: ArrayView2<f64>) -> Vec<usize> {
    loadings
        .axis_iter(Axis(1))
        .map(|col| {
            let mut best = 0;
            let mut best_abs = f64::NEG_INFINITY;
            for (j, v) in col.iter().enumerate() {
                if v.abs() > best_abs {
                    best = j;
                    best_abs = v.abs();
                }
            }
            best
        })
        .collect()
}

/// Groups variables of period `t` by the latent factor with the highest
/// mutual information, `−½ log(1 − R²)`. That is monotone in `|R_{j,i}|`, and
/// the stored factor `U_{j,i} = B_{j,i}/(1 + r_i)` is monotone in `R_{j,i}`
/// within each column, so the argmax is read off the covariance factors.
/// Labels are zero-based.
pub fn cluster(model: &TCorexModel, t: usize) -> Vec<usize> {
    cluster_from_loadings(model.covariances[t].factors().view())
}

/// Adjusted Rand index of two labelings. Two single-cluster partitions score 1.
pub fn ari(labels: &[usize], truth: &[usize]) -> Result<f64> {
    if labels.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} truth labels",
            labels.len(),
            truth.len()
        )));
    }
    let pairs = |c: u64| (c * c.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in labels.iter().zip(truth) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(labels.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// `‖Θ_{t+1} − Θ_t‖_F` for consecutive precision matrices of `covs`.
pub fn changepoint_scores_of(covs: &[DiagLowRank]) -> Result<Vec<f64>> {
    if covs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two periods".into()));
    }
    let precisions = covs
        .iter()
        .enumerate()
        .map(|(t, c)| {
            c.invert().map_err(|e| match e {
                Error::NotPositiveDefinite(msg) => {
                    Error::NotPositiveDefinite(format!("estimate of period {t}: {msg}"))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    precisions
        .windows(2)
        .map(|w| Ok(w[1].frobenius_diff_sq(&w[0])?.max(0.0).sqrt()))
        .collect()
}

/// Change-point scores of a fitted model in standardized space.
pub fn changepoint_scores(model: &TCorexModel) -> Result<Vec<f64>> {
    changepoint_scores_of(&model.covariances)
}

/// Indices of the `k` variables whose precision rows change most between
/// periods `t` and `t + 1`, largest first, ties to the smaller index.
pub fn top_changed_variables(model: &TCorexModel, t: usize, k: usize) -> Result<Vec<usize>> {
    if t + 1 >= model.n_periods() {
        return Err(Error::InvalidArgument(format!(
            "period {t} has no successor among {} periods",
            model.n_periods()
        )));
    }
    top_changed_between(&model.covariances[t + 1], &model.covariances[t], k)
}

/// Like [`top_changed_variables`] for two arbitrary covariance estimates.
pub fn top_changed_between(next: &DiagLowRank, prev: &DiagLowRank, k: usize) -> Result<Vec<usize>> {
    if k > next.p() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds p = {}", next.p())));
    }
    let change = next.invert()?.per_variable_change(&prev.invert()?)?;
    let mut idx: Vec<usize> = (0..change.len()).collect();
    idx.sort_by(|&a, &b| change[b].total_cmp(&change[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Dense helper for exports: `Θ` entries with magnitude below `threshold` set to 0.
pub fn thresholded_precision(cov: &DiagLowRank, threshold: f64) -> Result<Array2<f64>> {
    let mut dense = cov.invert()?.to_dense();
    dense.mapv_inplace(|v| if v.abs() < threshold { 0.0 } else { v });
    Ok(dense)
}
