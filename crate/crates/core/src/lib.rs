//! Gaussian-process regression with deep kernels built from layers of
//! heavy-tailed scale mixtures.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod io;
pub mod kernel;
pub mod mcmc;
pub mod stable;

pub use config::{Activation, FirstLayerUpdate, ModelConfig, PointEstimate, ScalePrior};
pub use data::{ingest_csv, Dataset, Standardizer};
pub use error::{Error, Result};
pub use kernel::{build_stack, KernelStack, ScaleState};
pub use mcmc::{init_chain, offline_predict, run_chain, ChainState, ChainTrace, Sampler, TraceRow};
pub use stable::{PositiveStable, StableSpec};

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scales.md")]
    mod scales {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
