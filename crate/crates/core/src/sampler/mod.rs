//! MCMC for the spatial regression models: Gibbs updates for the conjugate
//! blocks and robust adaptive Metropolis for the field hyperparameters and ρ.

mod chain;
mod config;
mod ram;
mod summary;

pub use chain::{run_chain, ChainOutput, ChainState, Observations, Sampler, SpatialDesign};
pub use config::{McmcSettings, ModelConfig, ModelKind, PcSettings, Priors};
pub use ram::Ram;
pub use summary::{effective_sample_size, median, quantile_sorted, summarize, write_trace_csv, ParamSummary, PosteriorSummary};
