//! Ground-truth modular latent factor models and the sudden/smooth change
//! benchmark scenarios built from them.
//!
//! In a modular model every observed variable has exactly one latent parent:
//! `X_i = σ_i (ρ_i Z_{π_i} + √(1 − ρ_i²) ε_i)` with `Z ~ N(0, I_m)`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dlr::{DiagLowRank, Sign};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream, Purpose};
use crate::tcorex::TemporalDataset;

pub const SNR_MAX: f64 = 5.0;
pub const SIGMA_RANGE: (f64, f64) = (0.25, 4.0);
pub const DEFAULT_VAL_SIZE: usize = 16;
pub const DEFAULT_TEST_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularModel {
    /// Zero-based parent index of every variable.
    pub parents: Vec<usize>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub m: usize,
}

/// Correlation with the parent for a given signal-to-noise ratio and sign.
pub fn rho_from_snr(snr: f64, positive: bool) -> f64 {
    let r = (snr / (snr + 1.0)).sqrt();
    if positive {
        r
    } else {
        -r
    }
}

impl ModularModel {
    pub fn p(&self) -> usize {
        self.parents.len()
    }

    /// Parents uniform over factors, `σ ~ U[1/4, 4]`, `snr ~ U[0, 5]` and a
    /// random sign for `ρ`.
    pub fn sample(p: usize, m: usize, rng: &mut ChaCha8Rng) -> Self {
        let sigma_dist = Uniform::new_inclusive(SIGMA_RANGE.0, SIGMA_RANGE.1).expect("valid range");
        let snr_dist = Uniform::new_inclusive(0.0, SNR_MAX).expect("valid range");
        let mut parents = Vec::with_capacity(p);
        let mut rho = Vec::with_capacity(p);
        let mut sigma = Vec::with_capacity(p);
        for _ in 0..p {
            parents.push(rng.random_range(0..m));
            sigma.push(sigma_dist.sample(rng));
            let snr = snr_dist.sample(rng);
            let xi: f64 = StandardNormal.sample(rng);
            rho.push(rho_from_snr(snr, xi >= 0.0));
        }
        Self {
            parents,
            rho,
            sigma,
            m,
        }
    }

    /// Exact covariance: `U_{j,i} = σ_i ρ_i` when `π_i = j`, `d_i = σ_i²(1 − ρ_i²)`.
    pub fn covariance(&self) -> DiagLowRank {
        let p = self.p();
        let mut u = Array2::zeros((self.m, p));
        let mut d = Array1::zeros(p);
        for i in 0..p {
            u[[self.parents[i], i]] = self.sigma[i] * self.rho[i];
            d[i] = self.sigma[i] * self.sigma[i] * (1.0 - self.rho[i] * self.rho[i]);
        }
        DiagLowRank::new(d, u, Sign::Plus).expect("shapes agree")
    }

    /// `n` independent samples.
    pub fn sample_data(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let z = standard_normal(rng, n, self.m);
        let eps = standard_normal(rng, n, self.p());
        Array2::from_shape_fn((n, self.p()), |(l, i)| {
            let r = self.rho[i];
            self.sigma[i] * (r * z[[l, self.parents[i]]] + (1.0 - r * r).sqrt() * eps[[l, i]])
        })
    }
}

pub fn sample_modular_model(p: usize, m: usize, seed: u64) -> ModularModel {
    ModularModel::sample(p, m, &mut stream(seed, Purpose::Model, 0, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Sudden,
    Smooth,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sudden" => Ok(ScenarioKind::Sudden),
            "smooth" => Ok(ScenarioKind::Smooth),
            other => Err(Error::InvalidArgument(format!("unknown scenario kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub kind: ScenarioKind,
    pub p: usize,
    pub m: usize,
    /// Training samples per period.
    pub s: usize,
    #[serde(rename = "T")]
    pub n_periods: usize,
    pub seed: u64,
    pub val_size: usize,
    pub test_size: usize,
}

impl ScenarioParams {
    pub fn new(kind: ScenarioKind, p: usize, m: usize, s: usize, n_periods: usize, seed: u64) -> Self {
        Self {
            kind,
            p,
            m,
            s,
            n_periods,
            seed,
            val_size: DEFAULT_VAL_SIZE,
            test_size: DEFAULT_TEST_SIZE,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.m == 0 || self.s == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidArgument("p, m, s and split sizes must be positive".into()));
        }
        if self.n_periods < 2 {
            return Err(Error::InvalidArgument("scenarios need at least two periods".into()));
        }
        Ok(())
    }
}

/// Train/validation/test samples per period with the generating models.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub params: ScenarioParams,
    pub train: Vec<Array2<f64>>,
    pub val: Vec<Array2<f64>>,
    pub test: Vec<Array2<f64>>,
    /// Exact covariance of every period.
    pub truth: Vec<DiagLowRank>,
    /// Zero-based parent of every variable in every period.
    pub labels: Vec<Vec<usize>>,
}

impl ScenarioDataset {
    pub fn n_periods(&self) -> usize {
        self.train.len()
    }

    pub fn train_set(&self) -> Result<TemporalDataset> {
        TemporalDataset::new(self.train.clone())
    }

    pub fn val_set(&self) -> Result<TemporalDataset> {
        TemporalDataset::new(self.val.clone())
    }

    pub fn test_set(&self) -> Result<TemporalDataset> {
        TemporalDataset::new(self.test.clone())
    }

    /// Ground-truth means are zero.
    pub fn truth_means(&self) -> Array2<f64> {
        Array2::zeros((self.n_periods(), self.params.p))
    }
}

fn build(params: ScenarioParams, models: Vec<ModularModel>) -> ScenarioDataset {
    let seed = params.seed;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (t, model) in models.iter().enumerate() {
        let t = t as u64;
        train.push(model.sample_data(params.s, &mut stream(seed, Purpose::Sample, t, 0)));
        val.push(model.sample_data(params.val_size, &mut stream(seed, Purpose::Sample, t, 1)));
        test.push(model.sample_data(params.test_size, &mut stream(seed, Purpose::Sample, t, 2)));
    }
    ScenarioDataset {
        truth: models.iter().map(ModularModel::covariance).collect(),
        labels: models.iter().map(|m| m.parents.clone()).collect(),
        params,
        train,
        val,
        test,
    }
}

fn endpoint_models(params: &ScenarioParams) -> (ModularModel, ModularModel) {
    let first = ModularModel::sample(params.p, params.m, &mut stream(params.seed, Purpose::Model, 0, 0));
    let last = ModularModel::sample(params.p, params.m, &mut stream(params.seed, Purpose::Model, 1, 0));
    (first, last)
}

/// First `⌊T/2⌋` periods from one model, the rest from an independent one.
pub fn sudden_change_dataset(params: ScenarioParams) -> Result<ScenarioDataset> {
    params.validate()?;
    let (first, last) = endpoint_models(&params);
    let half = params.n_periods / 2;
    let models = (0..params.n_periods)
        .map(|t| if t < half { first.clone() } else { last.clone() })
        .collect();
    Ok(build(ScenarioParams { kind: ScenarioKind::Sudden, ..params }, models))
}

/// Per-period models for a smooth transition between two endpoint models:
/// `ρ` and `σ` interpolate linearly with `α_t = (T − t)/(T − 1)` (one-based
/// `t`), and variable `i` switches to its final parent from period `τ_i`,
/// `τ_i ~ U{2, …, T}`.
pub fn smooth_models(
    first: &ModularModel,
    last: &ModularModel,
    switch_at: &[usize],
    n_periods: usize,
) -> Vec<ModularModel> {
    let big_t = n_periods as f64;
    (1..=n_periods)
        .map(|t| {
            let alpha = (big_t - t as f64) / (big_t - 1.0);
            let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
            };
            let parents = (0..first.p())
                .map(|i| if t < switch_at[i] { first.parents[i] } else { last.parents[i] })
                .collect();
            ModularModel {
                parents,
                rho: mix(&first.rho, &last.rho),
                sigma: mix(&first.sigma, &last.sigma),
                m: first.m,
            }
        })
        .collect()
}

pub fn smooth_change_dataset(params: ScenarioParams) -> Result<ScenarioDataset> {
    params.validate()?;
    let (first, last) = endpoint_models(&params);
    let mut rng = stream(params.seed, Purpose::Switch, 0, 0);
    let switch_at: Vec<usize> = (0..params.p)
        .map(|_| rng.random_range(2..=params.n_periods))
        .collect();
    let models = smooth_models(&first, &last, &switch_at, params.n_periods);
    Ok(build(ScenarioParams { kind: ScenarioKind::Smooth, ..params }, models))
}

pub fn generate(params: ScenarioParams) -> Result<ScenarioDataset> {
    match params.kind {
        ScenarioKind::Sudden => sudden_change_dataset(params),
        ScenarioKind::Smooth => smooth_change_dataset(params),
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    version: u32,
    #[serde(flatten)]
    params: ScenarioParams,
}

fn write_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record((1..=x.ncols()).map(|i| format!("x{i}"))).map_err(csv_err)?;
    for row in x.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// Reads a headed CSV of numbers; rows are samples.
pub fn read_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let p = r.headers().map_err(csv_err)?.len();
    let mut flat = Vec::new();
    let mut n = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != p {
            return Err(Error::InvalidArgument(format!(
                "{}: row {} has {} fields, header has {p}",
                path.display(),
                line + 1,
                rec.len()
            )));
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!(
                    "{}: row {}, column {} is not a number: {field:?}",
                    path.display(),
                    line + 1,
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{}: row {}, column {} is missing or non-finite",
                    path.display(),
                    line + 1,
                    col + 1
                )));
            }
            flat.push(v);
        }
        n += 1;
    }
    Array2::from_shape_vec((n, p), flat).map_err(|e| Error::InvalidArgument(e.to_string()))
}

impl ScenarioDataset {
    /// Writes `scenario.json`, `period_{t}/{train,val,test}.csv`,
    /// `truth/period_{t}.dlr.json` and `truth/labels.csv`. Periods and parent
    /// labels are one-based on disk.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("truth"))?;
        let meta = ScenarioFile {
            version: 1,
            params: self.params.clone(),
        };
        fs::write(dir.join("scenario.json"), serde_json::to_vec_pretty(&meta)?)?;
        for t in 0..self.n_periods() {
            let pdir = dir.join(format!("period_{}", t + 1));
            fs::create_dir_all(&pdir)?;
            write_csv(&pdir.join("train.csv"), &self.train[t])?;
            write_csv(&pdir.join("val.csv"), &self.val[t])?;
            write_csv(&pdir.join("test.csv"), &self.test[t])?;
            fs::write(
                dir.join("truth").join(format!("period_{}.dlr.json", t + 1)),
                serde_json::to_vec(&self.truth[t])?,
            )?;
        }
        let mut w = csv::Writer::from_path(dir.join("truth").join("labels.csv")).map_err(csv_err)?;
        w.write_record((1..=self.params.p).map(|i| format!("x{i}"))).map_err(csv_err)?;
        for row in &self.labels {
            w.write_record(row.iter().map(|l| (l + 1).to_string())).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ScenarioFile = serde_json::from_slice(&fs::read(dir.join("scenario.json"))?)?;
        let params = meta.params;
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        let mut truth = Vec::new();
        for t in 1..=params.n_periods {
            let pdir = dir.join(format!("period_{t}"));
            train.push(read_csv(&pdir.join("train.csv"))?);
            val.push(read_csv(&pdir.join("val.csv"))?);
            test.push(read_csv(&pdir.join("test.csv"))?);
            truth.push(serde_json::from_slice(&fs::read(
                dir.join("truth").join(format!("period_{t}.dlr.json")),
            )?)?);
        }
        let labels_raw = read_csv(&dir.join("truth").join("labels.csv"))?;
        let labels = labels_raw
            .outer_iter()
            .map(|row| {
                row.iter()
                    .map(|&v| {
                        if v >= 1.0 && v.fract() == 0.0 {
                            Ok(v as usize - 1)
                        } else {
                            Err(Error::InvalidArgument(format!("bad parent label {v}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            train,
            val,
            test,
            truth,
            labels,
        })
    }
}
