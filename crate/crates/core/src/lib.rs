//! Neural-network equalization of nonlinear ISI channels with MSE,
//! entropy-regularized MSE and bitwise cross-entropy training, Gaussian soft
//! demapping and information-rate metrics.

pub mod channel;
pub mod config;
pub mod constellation;
pub mod demapper;
pub mod error;
pub mod framing;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod trainer;

pub use channel::{ChannelConfig, SymbolFrame};
pub use constellation::Constellation;
pub use demapper::DemapperParams;
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use nn::Mlp;
pub use trainer::{ExperimentConfig, RunResult, TrainingParams, Variant};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment line written at the top of every output file.
pub fn file_header(seed: u64) -> String {
    format!("# nleq {VERSION} seed={seed}")
}
