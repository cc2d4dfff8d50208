//! On-disk formats: the `KCT1` binary tensor, the `KCF1` text factor, and
//! fit directories.

pub mod fitdir;
pub mod kcf;
pub mod kct;

pub use fitdir::{read_fit_dir, write_fit_dir, FitSummary};
pub use kcf::{FactorKind, FactorFile};
