use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Per-period location and scale used to standardize each block.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    /// `T×p` weighted means.
    pub means: Array2<f64>,
    /// `T×p` weighted standard deviations (population convention).
    pub stds: Array2<f64>,
}

/// `T` ordered periods of `s_t×p` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalDataset {
    periods: Vec<Array2<f64>>,
    stats: Option<Standardization>,
}

impl TemporalDataset {
    pub fn new(periods: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = periods.first() else {
            return Err(Error::InvalidArgument("dataset has no periods".into()));
        };
        let p = first.ncols();
        if p == 0 {
            return Err(Error::InvalidArgument("dataset has no variables".into()));
        }
        for (t, block) in periods.iter().enumerate() {
            if block.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "period {t} has {} variables, expected {p}",
                    block.ncols()
                )));
            }
            if block.nrows() == 0 {
                return Err(Error::InvalidArgument(format!("period {t} is empty")));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("samples of period {t}")));
            }
        }
        Ok(Self {
            periods,
            stats: None,
        })
    }

    /// Splits `series` (`n×p`, rows in time order) into `⌊n/w⌋` consecutive
    /// periods of `w` rows; trailing rows that do not fill a period are dropped.
    pub fn window(series: ArrayView2<f64>, w: usize) -> Result<Self> {
        let n = series.nrows();
        if w == 0 || w > n {
            return Err(Error::InvalidArgument(format!(
                "window {w} is not in 1..={n}"
            )));
        }
        let periods = (0..n / w)
            .map(|t| series.slice(ndarray::s![t * w..(t + 1) * w, ..]).to_owned())
            .collect();
        Self::new(periods)
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn p(&self) -> usize {
        self.periods[0].ncols()
    }

    pub fn periods(&self) -> &[Array2<f64>] {
        &self.periods
    }

    pub fn period(&self, t: usize) -> &Array2<f64> {
        &self.periods[t]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.periods.iter().map(|b| b.nrows()).collect()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.stats.as_ref()
    }

    /// All periods stacked in time order.
    pub fn concatenated(&self) -> Array2<f64> {
        let views: Vec<_> = self.periods.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("periods share p")
    }

    /// Standardizes each period with means and variances computed over all
    /// periods using sample weights `α_t(τ)`.
    pub fn standardize(&self, beta: f64, cutoff: f64) -> Result<TemporalDataset> {
        let big_t = self.n_periods();
        let p = self.p();
        let mut means = Array2::zeros((big_t, p));
        let mut stds = Array2::zeros((big_t, p));
        let mut periods = Vec::with_capacity(big_t);
        for t in 0..big_t {
            let weights = sample_weights(t, big_t, beta, cutoff);
            let (mean, std) = weighted_moments(&self.periods, &weights, t)?;
            let block = (&self.periods[t] - &mean.view().insert_axis(Axis(0)))
                / &std.view().insert_axis(Axis(0));
            means.row_mut(t).assign(&mean);
            stds.row_mut(t).assign(&std);
            periods.push(block);
        }
        Ok(TemporalDataset {
            periods,
            stats: Some(Standardization { means, stds }),
        })
    }

    /// Ordinary per-column standardization of all samples pooled together.
    pub fn standardize_pooled(&self) -> Result<Array2<f64>> {
        let all = TemporalDataset::new(vec![self.concatenated()])?;
        Ok(all.standardize(0.5, 1.0)?.periods.pop().expect("one period"))
    }
}

fn weighted_moments(
    periods: &[Array2<f64>],
    weights: &[(usize, f64)],
    t: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let p = periods[0].ncols();
    let mut total = 0.0;
    let mut sum = Array1::<f64>::zeros(p);
    for &(tau, a) in weights {
        total += a * periods[tau].nrows() as f64;
        sum.scaled_add(a, &periods[tau].sum_axis(Axis(0)));
    }
    let mean = sum / total;
    let mut sq = Array1::<f64>::zeros(p);
    for &(tau, a) in weights {
        let centered = &periods[tau] - &mean.view().insert_axis(Axis(0));
        sq.scaled_add(a, &centered.mapv(|v| v * v).sum_axis(Axis(0)));
    }
    let var = sq / total;
    for (i, (&v, &mu)) in var.iter().zip(mean.iter()).enumerate() {
        if !(v > 1e-20 * (1.0 + mu * mu)) {
            return Err(Error::ZeroVariance {
                period: t,
                variable: i,
            });
        }
    }
    Ok((mean, var.mapv(f64::sqrt)))
}

/// Periods `τ` that contribute to period `t` with their weights
/// `β^|t−τ|`; weights below `cutoff` are dropped. Indices are zero-based.
pub fn sample_weights(t: usize, n_periods: usize, beta: f64, cutoff: f64) -> Vec<(usize, f64)> {
    (0..n_periods)
        .filter_map(|tau| {
            let a = beta.powi(t.abs_diff(tau) as i32);
            (a >= cutoff).then_some((tau, a))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn window_drops_remainder() {
        let series = Array2::from_shape_fn((11, 2), |(i, j)| (i * 2 + j) as f64);
        let ds = TemporalDataset::window(series.view(), 5).unwrap();
        assert_eq!(ds.sizes(), vec![5, 5]);
        assert_eq!(ds.period(1)[[0, 0]], 10.0);
        let ds = TemporalDataset::window(series.slice(ndarray::s![..10, ..]), 5).unwrap();
        assert_eq!(ds.n_periods(), 2);
        let ds = TemporalDataset::window(series.slice(ndarray::s![..5, ..]), 5).unwrap();
        assert_eq!(ds.n_periods(), 1);
        assert!(TemporalDataset::window(series.view(), 12).is_err());
    }

    #[test]
    fn rejects_ragged_and_empty() {
        assert!(TemporalDataset::new(vec![Array2::zeros((2, 3)), Array2::zeros((2, 4))]).is_err());
        assert!(TemporalDataset::new(vec![Array2::zeros((0, 3))]).is_err());
        assert!(TemporalDataset::new(vec![]).is_err());
    }

    #[test]
    fn weights_match_formula() {
        let w = sample_weights(2, 5, 0.5, 1e-9);
        assert_eq!(
            w,
            vec![(0, 0.25), (1, 0.5), (2, 1.0), (3, 0.5), (4, 0.25)]
        );
    }

    #[test]
    fn weights_truncate_at_cutoff() {
        let w = sample_weights(0, 200, 0.9, 1e-9);
        assert_eq!(w.len(), 197);
        assert_eq!(w.last().unwrap().0, 196);
        let tiny = sample_weights(4, 10, 0.9e-9, 1e-9);
        assert_eq!(tiny, vec![(4, 1.0)]);
    }

    #[test]
    fn single_period_standardization() {
        let x = array![[1.0, 10.0], [2.0, 20.0], [3.0, 60.0]];
        let ds = TemporalDataset::new(vec![x]).unwrap().standardize(0.5, 1e-9).unwrap();
        let b = ds.period(0);
        for col in b.axis_iter(Axis(1)) {
            assert!(col.mean().unwrap().abs() < 1e-15);
            assert!((col.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_column_is_named() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let err = TemporalDataset::new(vec![x])
            .unwrap()
            .standardize(0.5, 1e-9)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroVariance {
                period: 0,
                variable: 1
            }
        ));
    }
}
