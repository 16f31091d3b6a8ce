//! Time-varying covariance estimation with temporally regularized linear
//! CorEx.
//!
//! Each period gets its own linear CorEx model. Neighbouring periods share
//! samples through exponentially decaying weights and are tied together by
//! an L1 or L2 penalty on consecutive weight differences. Every estimate is
//! diagonal plus low-rank, so log-determinants, inverses and precision
//! differences cost `O(m²p)` instead of `O(p³)`.

pub mod config;
pub mod corex;
pub mod dlr;
pub mod error;
pub mod eval;
pub mod grid;
mod linalg;
pub mod optimizer;
pub mod parallel;
pub mod rng;
pub mod synthetic;
pub mod tcorex;
mod train;

pub use config::{AdamConfig, FitConfig, NoiseMode, Penalty};
pub use corex::{fit_linear_corex, CorexWeights};
pub use dlr::{DiagLowRank, Sign};
pub use error::{Error, Result};
pub use parallel::Execution;
pub use tcorex::{fit, fit_with_log, load_model, save_model, TCorexModel, TemporalDataset};
pub use train::{FitLog, RoundLog};
