//! Maximum-likelihood estimation of space x time x epoch covariance
//! matrices of the form `Delta (x) Psi (x) Gamma`, with Toeplitz or
//! persymmetric temporal and diagonal epoch structure, plus the simulation,
//! evaluation, validation and regression pipelines built on the estimator.

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod format;
pub mod glm;
pub mod rng;
pub mod simulator;
pub mod structured;
pub mod tensor;

pub use error::{Error, Result};
pub use estimator::{fit, AssumptionSet, DeltaStructure, FitConfig, FitResult, PsiStructure};
pub use structured::{CirculantExtension, EpochFactor, FactorSet, SpatialFactor, TemporalFactor, ToeplitzFactor};
pub use tensor::{Dims, TrialTensor};
