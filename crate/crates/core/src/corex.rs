//! Linear CorEx: weighted moments, the objective minimized per period, and
//! the diagonal-plus-low-rank covariance it implies.
//!
//! The model is `Z = W X + ε` with unit-variance Gaussian `ε`. Inputs are
//! assumed standardized, so `E[X_i²]` is taken as 1 throughout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, CowArray, Ix2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::dlr::{DiagLowRank, Sign};
use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Largest admissible `|R_{j,i}|`.
pub const CORRELATION_CLAMP: f64 = 1.0 - 1e-6;
/// Floor for the diagonal of the covariance estimate.
pub const DIAGONAL_FLOOR: f64 = 1e-6;
/// Floor for the residual variance inside the log.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// The `m×p` weight matrix of `p(z | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorexWeights(Array2<f64>);

impl CorexWeights {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight matrix".into()));
        }
        Ok(Self(w))
    }

    pub fn zeros(m: usize, p: usize) -> Self {
        Self(Array2::zeros((m, p)))
    }

    /// Entries drawn from `N(0, 1/p)`.
    pub fn random(m: usize, p: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (p.max(1) as f64).sqrt();
        Self(standard_normal(rng, m, p) * scale)
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl Serialize for CorexWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = self.0.outer_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CorexWeights {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        let m = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(D::Error::custom("ragged weight matrix"));
        }
        let flat = rows.into_iter().flatten().collect();
        let w = Array2::from_shape_vec((m, p), flat).map_err(D::Error::custom)?;
        Ok(Self(w))
    }
}

/// Samples with non-negative per-row weights normalized to sum to one.
#[derive(Debug, Clone)]
pub struct WeightedSamples<'a> {
    x: CowArray<'a, f64, Ix2>,
    weights: Array1<f64>,
}

impl<'a> WeightedSamples<'a> {
    /// Rows of `x` with the given (unnormalized) weights.
    pub fn new(x: ArrayView2<'a, f64>, row_weights: ArrayView1<f64>) -> Result<Self> {
        if x.nrows() != row_weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} weights",
                x.nrows(),
                row_weights.len()
            )));
        }
        let total: f64 = row_weights.sum();
        if !(total > 0.0) || row_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "sample weights must be non-negative with a positive sum".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input samples".into()));
        }
        Ok(Self {
            x: CowArray::from(x),
            weights: row_weights.mapv(|w| w / total),
        })
    }

    /// Unweighted rows.
    pub fn uniform(x: ArrayView2<'a, f64>) -> Result<Self> {
        let w = Array1::ones(x.nrows());
        Self::new(x, w.view())
    }

    /// Stacks blocks, each with one weight for all of its rows. Blocks with
    /// zero weight are left out entirely.
    pub fn from_blocks(blocks: &[(ArrayView2<f64>, f64)]) -> Result<WeightedSamples<'static>> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("no sample blocks".into()));
        }
        let kept: Vec<_> = blocks.iter().filter(|(_, a)| *a != 0.0).collect();
        let p = blocks[0].0.ncols();
        if blocks.iter().any(|(b, _)| b.ncols() != p) {
            return Err(Error::DimensionMismatch("blocks differ in column count".into()));
        }
        let views: Vec<_> = kept.iter().map(|(b, _)| b.view()).collect();
        let x = if views.is_empty() {
            Array2::zeros((0, p))
        } else {
            ndarray::concatenate(Axis(0), &views)
                .map_err(|e| Error::DimensionMismatch(e.to_string()))?
        };
        let w: Array1<f64> = kept
            .iter()
            .flat_map(|(b, a)| std::iter::repeat_n(*a, b.nrows()))
            .collect();
        let owned = WeightedSamples::new(x.view(), w.view())?;
        Ok(WeightedSamples {
            x: CowArray::from(owned.x.into_owned()),
            weights: owned.weights,
        })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// How the unit Gaussian noise on `Z` enters the moments.
#[derive(Debug, Clone)]
pub enum LatentNoise {
    /// Exact expectation over the noise: `E[Z_j²]` gains `+1`, cross moments are
    /// unchanged and the residual variance gains `Σ_j (a_i K_{j,i})²`.
    Analytic,
    /// A concrete `n×m` draw added to `X Wᵀ`.
    Sampled(Array2<f64>),
}

impl LatentNoise {
    pub fn sample(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Self {
        LatentNoise::Sampled(standard_normal(rng, n, m))
    }
}

/// Moments of `(X, Z)` under the current weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStats {
    /// `E[X_i Z_j]`, `m×p`.
    pub exz: Array2<f64>,
    /// `E[Z_j²]`, length `m`.
    pub ez2: Array1<f64>,
    /// Clamped correlations `R_{j,i}`, `m×p`.
    pub r_corr: Array2<f64>,
    /// `B_{j,i} = R/(1 − R²)`, `m×p`.
    pub b: Array2<f64>,
    /// `r_i = Σ_j R_{j,i} B_{j,i}`, length `p`.
    pub r_vec: Array1<f64>,
}

/// Objective value, moments and optionally the gradient with respect to `W`.
#[derive(Debug, Clone)]
pub struct CorexEvaluation {
    pub value: f64,
    pub stats: MomentStats,
    pub gradient: Option<Array2<f64>>,
}

fn check_shapes(w: &CorexWeights, samples: &WeightedSamples, noise: &LatentNoise) -> Result<()> {
    if w.p() != samples.p() {
        return Err(Error::DimensionMismatch(format!(
            "weights have {} columns, data has {}",
            w.p(),
            samples.p()
        )));
    }
    if let LatentNoise::Sampled(e) = noise {
        if e.dim() != (samples.n(), w.m()) {
            return Err(Error::DimensionMismatch(format!(
                "noise is {:?}, expected ({}, {})",
                e.dim(),
                samples.n(),
                w.m()
            )));
        }
    }
    if samples.n() == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    Ok(())
}

/// Forward quantities kept for the reverse pass.
struct Forward {
    y: Array2<f64>,
    q: Array1<f64>,
    c: Array2<f64>,
    r: Array2<f64>,
    unclamped: Array2<bool>,
    b: Array2<f64>,
    rvec: Array1<f64>,
}

fn forward_moments(w: &CorexWeights, samples: &WeightedSamples, noise: &LatentNoise) -> Forward {
    let x = samples.x();
    let om = samples.weights();
    let mut y = x.dot(&w.0.t());
    if let LatentNoise::Sampled(e) = noise {
        y += e;
    }
    let yw = &y * &om.view().insert_axis(Axis(1));
    let mut q = (&yw * &y).sum_axis(Axis(0));
    if matches!(noise, LatentNoise::Analytic) {
        q += 1.0;
    }
    let c = yw.t().dot(&x);
    let inv_sqrt_q = q.mapv(|v| 1.0 / v.sqrt());
    let mut r = &c * &inv_sqrt_q.view().insert_axis(Axis(1));
    let unclamped = r.mapv(|v| v.abs() <= CORRELATION_CLAMP);
    r.mapv_inplace(|v| v.clamp(-CORRELATION_CLAMP, CORRELATION_CLAMP));
    let b = r.mapv(|v| v / (1.0 - v * v));
    let rvec = (&r * &b).sum_axis(Axis(0));
    Forward {
        y,
        q,
        c,
        r,
        unclamped,
        b,
        rvec,
    }
}

impl Forward {
    fn stats(&self) -> MomentStats {
        MomentStats {
            exz: self.c.clone(),
            ez2: self.q.clone(),
            r_corr: self.r.clone(),
            b: self.b.clone(),
            r_vec: self.rvec.clone(),
        }
    }
}

/// Weighted moments of `X` and `Z = X Wᵀ + noise`, with `R`, `B` and `r`.
pub fn compute_moments(
    w: &CorexWeights,
    samples: &WeightedSamples,
    noise: &LatentNoise,
) -> Result<MomentStats> {
    check_shapes(w, samples, noise)?;
    let fwd = forward_moments(w, samples, noise);
    if fwd.q.iter().any(|v| !v.is_finite()) || fwd.c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent moments".into()));
    }
    Ok(fwd.stats())
}

/// The per-period objective
/// `Σ_i ½ log E[(X_i − ν_i)²] + Σ_j ½ log E[Z_j²]` with
/// `ν_i = (1/(1 + r_i)) Σ_j B_{j,i} Z_j / √E[Z_j²]`.
pub fn corex_objective(
    w: &CorexWeights,
    samples: &WeightedSamples,
    noise: &LatentNoise,
) -> Result<f64> {
    Ok(evaluate(w, samples, noise, false)?.value)
}

/// Objective, moments, and (if `with_gradient`) the exact gradient with
/// respect to `W`, holding the noise fixed.
pub fn evaluate(
    w: &CorexWeights,
    samples: &WeightedSamples,
    noise: &LatentNoise,
    with_gradient: bool,
) -> Result<CorexEvaluation> {
    check_shapes(w, samples, noise)?;
    let analytic = matches!(noise, LatentNoise::Analytic);
    let x = samples.x();
    let om = samples.weights();
    let om_col = om.view().insert_axis(Axis(1));

    let fwd = forward_moments(w, samples, noise);
    let Forward {
        ref y,
        ref q,
        ref c,
        ref r,
        ref unclamped,
        ref b,
        ref rvec,
    } = fwd;

    let sqrt_q = q.mapv(f64::sqrt);
    let a = rvec.mapv(|v| 1.0 / (1.0 + v));
    let k = b / &sqrt_q.view().insert_axis(Axis(1));
    let mm = y.dot(&k);
    let residual = &x - &(&mm * &a.view().insert_axis(Axis(0)));
    let mut v = (&residual * &residual * &om_col).sum_axis(Axis(0));
    let k_sq = k.mapv(|e| e * e).sum_axis(Axis(0));
    if analytic {
        v += &(&a * &a * &k_sq);
    }
    let floored = v.mapv(|e| e <= RESIDUAL_FLOOR);
    let v = v.mapv(|e| e.max(RESIDUAL_FLOOR));

    let value = 0.5 * v.iter().map(|e| e.ln()).sum::<f64>() + 0.5 * q.iter().map(|e| e.ln()).sum::<f64>();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {value}")));
    }
    let stats = fwd.stats();
    if !with_gradient {
        return Ok(CorexEvaluation {
            value,
            stats,
            gradient: None,
        });
    }

    // Reverse pass.
    let gv = ndarray::Zip::from(&v)
        .and(&floored)
        .map_collect(|&vi, &fl| if fl { 0.0 } else { 0.5 / vi });
    // ∂/∂ν_{ℓi} = −2 ω_ℓ res_{ℓi} · gv_i
    let g_nu = &residual * &om_col * &gv.mapv(|e| -2.0 * e).view().insert_axis(Axis(0));
    let mut g_a = (&g_nu * &mm).sum_axis(Axis(0));
    let g_m = &g_nu * &a.view().insert_axis(Axis(0));
    let mut g_y = g_m.dot(&k.t());
    let mut g_k = y.t().dot(&g_m);
    if analytic {
        g_a += &(&gv * &a * &k_sq * 2.0);
        let coef = &gv * &a * &a * 2.0;
        g_k += &(&k * &coef.view().insert_axis(Axis(0)));
    }

    let inv_sqrt_q = sqrt_q.mapv(|e| 1.0 / e);
    let g_b = &g_k * &inv_sqrt_q.view().insert_axis(Axis(1));
    let q_pow = q.mapv(|e| -0.5 * e.powf(-1.5));
    let mut g_q = (&g_k * b).sum_axis(Axis(1)) * &q_pow;

    let g_rvec = &g_a * &a.mapv(|e| -e * e);
    let g_rvec_row = g_rvec.view().insert_axis(Axis(0));
    let mut g_r = ndarray::Zip::from(r)
        .and(&g_b)
        .and_broadcast(&g_rvec_row)
        .map_collect(|&rv, &gb, &gr| {
            let one_minus = 1.0 - rv * rv;
            (gb * (1.0 + rv * rv) + gr * 2.0 * rv) / (one_minus * one_minus)
        });
    ndarray::Zip::from(&mut g_r)
        .and(unclamped)
        .for_each(|g, &ok| {
            if !ok {
                *g = 0.0
            }
        });
    let g_c = &g_r * &inv_sqrt_q.view().insert_axis(Axis(1));
    g_q += &((&g_r * c).sum_axis(Axis(1)) * &q_pow);
    g_q += &q.mapv(|e| 0.5 / e);

    // E[X Z] and E[Z²] both feed back into Y.
    let mut direct = x.dot(&g_c.t());
    direct += &(y * &g_q.mapv(|e| 2.0 * e).view().insert_axis(Axis(0)));
    g_y += &(direct * &om_col);
    let grad = g_y.t().dot(&x);

    Ok(CorexEvaluation {
        value,
        stats,
        gradient: Some(grad),
    })
}

/// The covariance implied by the moments: unit diagonal and off-diagonals
/// `(BᵀB)_{ik} / ((1 + r_i)(1 + r_k))`, stored as `diag(d) + UᵀU` with
/// `U_{j,i} = B_{j,i}/(1 + r_i)` and `d_i = max(1 − Σ_j U_{j,i}², 1e-6)`.
pub fn covariance_estimate(stats: &MomentStats) -> Result<DiagLowRank> {
    if stats.b.iter().chain(stats.r_vec.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moment statistics".into()));
    }
    let scale = stats.r_vec.mapv(|r| 1.0 / (1.0 + r));
    let u = &stats.b * &scale.view().insert_axis(Axis(0));
    let col_sq = u.map(|v| v * v).sum_axis(Axis(0));
    let d = col_sq.mapv(|s| (1.0 - s).max(DIAGONAL_FLOOR));
    DiagLowRank::new(d, u, Sign::Plus)
}

/// Fits a single linear CorEx on standardized data using the same annealed
/// Adam loop as the temporal estimator. The returned covariance comes from
/// noise-free analytic moments of the final weights.
pub fn fit_linear_corex(
    data: ArrayView2<f64>,
    m: usize,
    config: &FitConfig,
) -> Result<(CorexWeights, DiagLowRank)> {
    let (weights, cov, _) = crate::train::fit_static(data, m, config, config.steps_per_round, 0)?;
    Ok((weights, cov))
}
