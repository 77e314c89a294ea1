//! Localized Lasso covariate selection and post-Lasso local linear estimation
//! for sharp and fuzzy regression discontinuity designs.

pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod local_linear;
pub mod selection;
pub mod simulation;
pub mod stats;
pub mod tuning;

pub use data::Dataset;
pub use error::{RdError, Result};
pub use kernels::{Kernel, KernelFamily};
pub use inference::{estimate_fuzzy, estimate_sharp, LambdaMethod, PipelineConfig, RDEstimate};
