//! Fit directories: `gamma.kcf`, `psi.kcf`, `delta.kcf` and `fit.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kcf::{self, FactorFile};
use crate::error::{Error, Result};
use crate::estimator::{AssumptionSet, FitConfig, FitResult};
use crate::structured::FactorSet;
use crate::tensor::Dims;

pub const GAMMA_FILE: &str = "gamma.kcf";
pub const PSI_FILE: &str = "psi.kcf";
pub const DELTA_FILE: &str = "delta.kcf";
pub const SUMMARY_FILE: &str = "fit.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub gamma: f64,
    pub delta: Option<f64>,
    pub psi: Option<f64>,
    pub g_max_abs: Option<f64>,
    pub n_tilde: usize,
}

/// Contents of `fit.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub assumptions: AssumptionSet,
    pub dims: Dims,
    pub loglik_trace: Vec<f64>,
    pub final_loglik: f64,
    pub outer_iterations: usize,
    pub em_iterations: Vec<usize>,
    pub converged: bool,
    pub residuals: Residuals,
    pub config: FitConfig,
    #[serde(default)]
    pub preprocessing: Vec<String>,
    /// Epochs of the original recording left out before fitting; the
    /// epoch factor covers the remaining ones in order.
    #[serde(default)]
    pub removed_epochs: Vec<usize>,
}

impl FitSummary {
    pub fn new(res: &FitResult, dims: Dims, config: &FitConfig, preprocessing: Vec<String>) -> Self {
        FitSummary {
            assumptions: res.assumptions,
            dims,
            loglik_trace: res.loglik_trace.clone(),
            final_loglik: res.final_loglik(),
            outer_iterations: res.outer_iterations,
            em_iterations: res.em_iterations.clone(),
            converged: res.converged,
            residuals: Residuals {
                gamma: res.gamma_residual,
                delta: res.delta_residual,
                psi: res.psi_residual,
                g_max_abs: res.g_residual,
                n_tilde: res.n_tilde,
            },
            config: config.clone(),
            preprocessing,
            removed_epochs: Vec::new(),
        }
    }
}

pub fn write_fit_dir(dir: &Path, factors: &FactorSet, summary: &FitSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    kcf::write(&dir.join(GAMMA_FILE), &FactorFile::from_spatial(&factors.gamma))?;
    kcf::write(&dir.join(PSI_FILE), &FactorFile::from_temporal(&factors.psi))?;
    kcf::write(&dir.join(DELTA_FILE), &FactorFile::from_epoch(&factors.delta))?;
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    std::fs::write(dir.join(SUMMARY_FILE), json)?;
    Ok(())
}

/// Reads the three factors; `fit.json` is optional.
pub fn read_fit_dir(dir: &Path) -> Result<(FactorSet, Option<FitSummary>)> {
    let factors = read_factor_triple(&dir.join(GAMMA_FILE), &dir.join(PSI_FILE), &dir.join(DELTA_FILE))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let summary = if summary_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(summary_path)?)?)
    } else {
        None
    };
    Ok((factors, summary))
}

pub fn read_factor_triple(gamma: &Path, psi: &Path, delta: &Path) -> Result<FactorSet> {
    let load = |p: &Path| {
        kcf::read(p).map_err(|e| match e {
            Error::Io(io) => Error::InvalidArgument(format!("cannot read {}: {io}", p.display())),
            other => other,
        })
    };
    Ok(FactorSet {
        gamma: load(gamma)?.into_spatial()?,
        psi: load(psi)?.into_temporal()?,
        delta: load(delta)?.into_epoch()?,
    })
}
