//! Fitted models and their on-disk format.
//!
//! A model file is a JSON envelope:
//!
//! ```text
//! {"format": "tcorex-model", "version": 1, "config": {..}, "T": .., "p": .., "m": ..,
//!  "period_means": [[..]], "period_stds": [[..]],
//!  "weights": [T × m×p], "covariances": [T × {p, m, sign, d, u}]}
//! ```
//!
//! With a sidecar the four array fields are omitted and a `"sidecar"` object
//! names a binary file plus the byte offset and length of each section.
//! Covariance sections use the `DLR1` layout of [`DiagLowRank::write_binary`];
//! every other section is a row-major little-endian `f64` array.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::corex::CorexWeights;
use crate::dlr::DiagLowRank;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "tcorex-model";
pub const MODEL_VERSION: u64 = 1;

/// Weights and covariance estimates for every period, in standardized space,
/// with the statistics needed to map back to raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct TCorexModel {
    pub weights: Vec<CorexWeights>,
    pub covariances: Vec<DiagLowRank>,
    pub period_means: Array2<f64>,
    pub period_stds: Array2<f64>,
    pub config: FitConfig,
}

impl TCorexModel {
    pub fn n_periods(&self) -> usize {
        self.covariances.len()
    }

    pub fn p(&self) -> usize {
        self.period_means.ncols()
    }

    pub fn m(&self) -> usize {
        self.weights.first().map_or(0, CorexWeights::m)
    }

    pub fn mean(&self, t: usize) -> ArrayView1<'_, f64> {
        self.period_means.row(t)
    }

    /// `diag(σ_t) Σ̂_t diag(σ_t)`.
    pub fn raw_covariance(&self, t: usize) -> Result<DiagLowRank> {
        self.covariances[t].scale_symmetric(&self.period_stds.row(t).to_owned())
    }

    /// Inverse of the standardized-space estimate.
    pub fn precision(&self, t: usize) -> Result<DiagLowRank> {
        self.covariances[t].invert()
    }

    fn check(&self) -> Result<()> {
        let big_t = self.covariances.len();
        let p = self.p();
        let corrupt = |m: &str| Err(Error::CorruptModel(m.to_string()));
        if self.weights.len() != big_t
            || self.period_means.nrows() != big_t
            || self.period_stds.dim() != self.period_means.dim()
        {
            return corrupt("period counts disagree");
        }
        if self.covariances.iter().any(|c| c.p() != p) || self.weights.iter().any(|w| w.p() != p) {
            return corrupt("variable counts disagree");
        }
        let m = self.m();
        if self.weights.iter().any(|w| w.m() != m) {
            return corrupt("latent factor counts disagree");
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Section {
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    file: String,
    period_means: Section,
    period_stds: Section,
    weights: Vec<Section>,
    covariances: Vec<Section>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u64,
    config: FitConfig,
    #[serde(rename = "T")]
    n_periods: usize,
    p: usize,
    m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period_means: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period_stds: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<CorexWeights>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariances: Option<Vec<DiagLowRank>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<Sidecar>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::CorruptModel(format!("{what} is ragged")));
    }
    Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect())
        .map_err(|e| Error::CorruptModel(e.to_string()))
}

fn envelope_header(model: &TCorexModel) -> Envelope {
    Envelope {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: model.config.clone(),
        n_periods: model.n_periods(),
        p: model.p(),
        m: model.m(),
        period_means: None,
        period_stds: None,
        weights: None,
        covariances: None,
        sidecar: None,
    }
}

/// Writes the model as a single JSON file.
pub fn save_model(model: &TCorexModel, path: &Path) -> Result<()> {
    model.check()?;
    let env = Envelope {
        period_means: Some(rows(&model.period_means)),
        period_stds: Some(rows(&model.period_stds)),
        weights: Some(model.weights.clone()),
        covariances: Some(model.covariances.clone()),
        ..envelope_header(model)
    };
    fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".bin");
    path.with_file_name(name)
}

/// Writes the JSON envelope at `path` and the arrays to `<path>.bin`.
pub fn save_model_with_sidecar(model: &TCorexModel, path: &Path) -> Result<()> {
    model.check()?;
    let bin_path = sidecar_path(path);
    let mut buf: Vec<u8> = Vec::new();
    let push_f64s = |buf: &mut Vec<u8>, values: &mut dyn Iterator<Item = f64>| -> Section {
        let offset = buf.len() as u64;
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Section {
            offset,
            length: buf.len() as u64 - offset,
        }
    };
    let period_means = push_f64s(&mut buf, &mut model.period_means.iter().copied());
    let period_stds = push_f64s(&mut buf, &mut model.period_stds.iter().copied());
    let weights = model
        .weights
        .iter()
        .map(|w| push_f64s(&mut buf, &mut w.as_array().iter().copied()))
        .collect();
    let covariances = model
        .covariances
        .iter()
        .map(|c| {
            let offset = buf.len() as u64;
            c.write_binary(&mut buf).expect("writing to a Vec cannot fail");
            Section {
                offset,
                length: buf.len() as u64 - offset,
            }
        })
        .collect();
    let env = Envelope {
        sidecar: Some(Sidecar {
            file: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            period_means,
            period_stds,
            weights,
            covariances,
        }),
        ..envelope_header(model)
    };
    fs::File::create(&bin_path)?.write_all(&buf)?;
    fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

fn section<'a>(bytes: &'a [u8], s: &Section) -> Result<&'a [u8]> {
    let start = s.offset as usize;
    let end = start
        .checked_add(s.length as usize)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptModel("sidecar section out of bounds".into()))?;
    Ok(&bytes[start..end])
}

fn f64s(raw: &[u8]) -> Result<Vec<f64>> {
    if raw.len() % 8 != 0 {
        return Err(Error::CorruptModel("sidecar section is not a whole number of f64s".into()));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn load_model(path: &Path) -> Result<TCorexModel> {
    let bytes = fs::read(path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
        return Err(Error::CorruptModel("missing or wrong format tag".into()));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptModel("missing version".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let env: Envelope =
        serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
    let (big_t, p, m) = (env.n_periods, env.p, env.m);

    let model = if let Some(sc) = env.sidecar {
        let bin = fs::read(path.with_file_name(&sc.file))
            .map_err(|e| Error::CorruptModel(format!("sidecar {}: {e}", sc.file)))?;
        let matrix = |s: &Section, shape: (usize, usize)| -> Result<Array2<f64>> {
            Array2::from_shape_vec(shape, f64s(section(&bin, s)?)?)
                .map_err(|e| Error::CorruptModel(e.to_string()))
        };
        let weights = sc
            .weights
            .iter()
            .map(|s| CorexWeights::new(matrix(s, (m, p))?).map_err(|e| Error::CorruptModel(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let covariances = sc
            .covariances
            .iter()
            .map(|s| {
                DiagLowRank::read_binary(section(&bin, s)?)
                    .map_err(|e| Error::CorruptModel(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        TCorexModel {
            weights,
            covariances,
            period_means: matrix(&sc.period_means, (big_t, p))?,
            period_stds: matrix(&sc.period_stds, (big_t, p))?,
            config: env.config,
        }
    } else {
        let missing = |f: &str| Error::CorruptModel(format!("missing field {f}"));
        TCorexModel {
            weights: env.weights.ok_or_else(|| missing("weights"))?,
            covariances: env.covariances.ok_or_else(|| missing("covariances"))?,
            period_means: from_rows(env.period_means.ok_or_else(|| missing("period_means"))?, "period_means")?,
            period_stds: from_rows(env.period_stds.ok_or_else(|| missing("period_stds"))?, "period_stds")?,
            config: env.config,
        }
    };
    model.check()?;
    if model.n_periods() != big_t || model.p() != p || model.m() != m {
        return Err(Error::CorruptModel("declared T/p/m do not match arrays".into()));
    }
    Ok(model)
}
