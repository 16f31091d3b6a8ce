//! The temporal estimator: one linear CorEx per period, coupled through
//! cross-period sample weights and a penalty on consecutive weight changes.

mod dataset;
mod fit;
mod model;
pub(crate) mod objective;

pub use dataset::{sample_weights, Standardization, TemporalDataset};
pub use fit::{fit, fit_with_log};
pub use model::{load_model, save_model, save_model_with_sidecar, TCorexModel, MODEL_FORMAT, MODEL_VERSION};
pub use objective::{penalty_value_and_gradient, tcorex_objective, tcorex_objective_and_gradient, temporal_penalty};
