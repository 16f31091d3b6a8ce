//! Hyperparameter grid search with validation-based model selection.

use serde::{Deserialize, Serialize};

use crate::config::{FitConfig, Penalty};
use crate::error::{Error, Result};
use crate::eval;
use crate::parallel::{map_indexed, Execution};
use crate::tcorex::{fit, TCorexModel, TemporalDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub m: Vec<usize>,
    pub phi: Vec<Penalty>,
}

impl GridSpec {
    /// Grid of the sudden-change benchmark (L1 penalty).
    pub fn sudden(m: usize) -> Self {
        Self {
            lambda: vec![0.0, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            beta: vec![1e-9, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7],
            m: vec![m],
            phi: vec![Penalty::L1],
        }
    }

    /// Grid of the smooth-change benchmark (L2 penalty).
    pub fn smooth(m: usize) -> Self {
        Self {
            lambda: vec![0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0],
            beta: vec![1e-9, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7],
            m: vec![m],
            phi: vec![Penalty::L2],
        }
    }

    /// Grid used for stock returns.
    pub fn stock() -> Self {
        let mut beta = vec![1e-9];
        beta.extend((1..=9).map(|k| k as f64 / 10.0));
        Self {
            lambda: vec![0.0, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            beta,
            m: vec![16, 32, 64, 128],
            phi: vec![Penalty::L1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_empty() || self.beta.is_empty() || self.m.is_empty() || self.phi.is_empty() {
            return Err(Error::InvalidArgument("every grid axis needs at least one value".into()));
        }
        Ok(())
    }

    /// Every combination, λ varying slowest.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &lambda in &self.lambda {
            for &beta in &self.beta {
                for &m in &self.m {
                    for &phi in &self.phi {
                        out.push(GridCell { lambda, beta, m, phi });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub beta: f64,
    pub m: usize,
    pub phi: Penalty,
}

impl GridCell {
    pub fn apply(&self, base: &FitConfig) -> FitConfig {
        FitConfig {
            lambda: self.lambda,
            beta: self.beta,
            m: self.m,
            phi: self.phi,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: GridCell,
    /// Time-averaged validation NLL; infinite if the fit or evaluation failed.
    pub val_nll: f64,
    pub error: Option<String>,
    pub model: Option<TCorexModel>,
}

/// Fits every cell on `train` and scores it on `val`. A cell whose fit or
/// evaluation fails is kept with an infinite score so the rest of the grid
/// still runs.
pub fn grid_search(
    train: &TemporalDataset,
    val: &TemporalDataset,
    spec: &GridSpec,
    base: &FitConfig,
    cell_execution: Execution,
) -> Result<Vec<CellResult>> {
    spec.validate()?;
    if train.n_periods() != val.n_periods() || train.p() != val.p() {
        return Err(Error::DimensionMismatch(format!(
            "train has {} periods of {} variables, validation has {} of {}",
            train.n_periods(),
            train.p(),
            val.n_periods(),
            val.p()
        )));
    }
    let cells = spec.cells();
    Ok(map_indexed(cell_execution, cells.len(), |k| {
        let cell = cells[k];
        let scored = fit(train, &cell.apply(base))
            .and_then(|model| Ok((eval::nll(&model, val)?.nll, model)));
        match scored {
            Ok((val_nll, model)) => CellResult {
                cell,
                val_nll: if val_nll.is_finite() { val_nll } else { f64::INFINITY },
                error: None,
                model: Some(model),
            },
            Err(e) => CellResult {
                cell,
                val_nll: f64::INFINITY,
                error: Some(e.to_string()),
                model: None,
            },
        }
    }))
}

/// Index of the lowest validation NLL among results accepted by `keep`;
/// ties go to the earliest cell.
pub fn select_best(results: &[CellResult], keep: impl Fn(&GridCell) -> bool) -> Option<usize> {
    results
        .iter()
        .enumerate()
        .filter(|(_, r)| keep(&r.cell) && r.model.is_some() && r.val_nll.is_finite())
        .min_by(|a, b| a.1.val_nll.total_cmp(&b.1.val_nll))
        .map(|(i, _)| i)
}
