//! Accuracy metrics, the split-sample validation protocol, and rank
//! correlation.
//!
//! All Kronecker-product norms are computed from factor inner products,
//! `<A1 (x) B1 (x) C1, A2 (x) B2 (x) C2> = <A1,A2> <B1,B2> <C1,C2>`, so no
//! `pqr x pqr` matrix is ever formed.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, AssumptionSet, FitConfig};
use crate::rng::stream_rng;
use crate::structured::{EpochFactor, FactorSet};
use crate::tensor::{kron_frobenius_inner, TrialTensor};

fn triple(f: &FactorSet) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (g, s, d) = f.dense();
    (d, s, g)
}

/// `||K1 - K2||_F^2 / ||K2||_F^2` for Kronecker products of factor triples.
fn relative_kron_error(
    est: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    truth: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
) -> Result<f64> {
    let ee = kron_frobenius_inner(est.0, est.1, est.2, est.0, est.1, est.2)?;
    let et = kron_frobenius_inner(est.0, est.1, est.2, truth.0, truth.1, truth.2)?;
    let tt = kron_frobenius_inner(truth.0, truth.1, truth.2, truth.0, truth.1, truth.2)?;
    if !(tt > 0.0) {
        return Err(Error::InvalidArgument("reference Kronecker product is zero".into()));
    }
    // Clamp the rounding residue of the expanded square at exact agreement.
    Ok(((ee - 2.0 * et + tt) / tt).max(0.0))
}

/// Relative squared Frobenius error of the full covariance
/// `Delta^ (x) Psi^ (x) Gamma^` against the truth.
pub fn mse_total(est: &FactorSet, truth: &FactorSet) -> Result<f64> {
    if est.dims() != truth.dims() {
        return Err(Error::Dimension(format!(
            "estimate dims {:?} differ from truth dims {:?}",
            est.dims(),
            truth.dims()
        )));
    }
    let (a, b, c) = triple(est);
    let (x, y, z) = triple(truth);
    relative_kron_error((&a, &b, &c), (&x, &y, &z))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentErrors {
    pub gamma: f64,
    pub psi: f64,
    pub delta: f64,
}

fn rel_sq(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (est - truth).norm_squared() / truth.norm_squared()
}

/// Per-factor relative squared errors. Both sets must satisfy
/// `Gamma(1,1) = Delta(1,1) = 1`.
pub fn mse_components(est: &FactorSet, truth: &FactorSet) -> Result<ComponentErrors> {
    if est.dims() != truth.dims() {
        return Err(Error::Dimension(format!(
            "estimate dims {:?} differ from truth dims {:?}",
            est.dims(),
            truth.dims()
        )));
    }
    for (name, f) in [("estimate", est), ("truth", truth)] {
        if !f.is_normalized(1e-9) {
            return Err(Error::InvalidArgument(format!(
                "{name} is not normalized to Gamma(1,1) = Delta(1,1) = 1"
            )));
        }
    }
    let (eg, es, ed) = est.dense();
    let (tg, ts, td) = truth.dense();
    Ok(ComponentErrors {
        gamma: rel_sq(&eg, &tg),
        psi: rel_sq(&es, &ts),
        delta: rel_sq(&ed, &td),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Consecutive,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "consecutive" => Ok(SplitMode::Consecutive),
            other => Err(Error::InvalidArgument(format!("unknown split mode `{other}`"))),
        }
    }
}

fn chunk_sizes(r: usize, folds: usize) -> impl Iterator<Item = usize> {
    let (base, extra) = (r / folds, r % folds);
    (0..folds).map(move |f| base + usize::from(f < extra))
}

/// Partitions `0..r` into `folds` subsets whose sizes differ by at most one.
///
/// Random mode draws one permutation per repeat from stream `repeat` of
/// `seed`; consecutive mode returns contiguous blocks once, ignoring
/// `repeats`. Each subset is sorted.
pub fn split_epochs(r: usize, mode: SplitMode, folds: usize, repeats: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || r < folds {
        return Err(Error::InvalidArgument(format!("cannot split r={r} epochs into {folds} folds")));
    }
    let mut out = Vec::new();
    match mode {
        SplitMode::Consecutive => {
            let mut start = 0;
            for size in chunk_sizes(r, folds) {
                out.push((start..start + size).collect());
                start += size;
            }
        }
        SplitMode::Random => {
            if repeats == 0 {
                return Err(Error::InvalidArgument("repeats must be at least 1".into()));
            }
            for rep in 0..repeats {
                let mut rng = stream_rng(seed, rep as u64);
                let mut perm: Vec<usize> = (0..r).collect();
                perm.shuffle(&mut rng);
                let mut start = 0;
                for size in chunk_sizes(r, folds) {
                    let mut subset = perm[start..start + size].to_vec();
                    subset.sort_unstable();
                    out.push(subset);
                    start += size;
                }
            }
        }
    }
    Ok(out)
}

/// Discrepancy between a fit on a subset of epochs and the full fit
/// restricted to that subset:
/// `||D_i (x) P_i (x) G_i - D|ind (x) P (x) G||^2 / ||D|ind (x) P (x) G||^2`.
pub fn validation_measure(sub_fit: &FactorSet, full_fit: &FactorSet, subset: &[usize]) -> Result<f64> {
    if sub_fit.delta.dim() != subset.len() {
        return Err(Error::Dimension(format!(
            "sub-fit has {} epochs but subset has {}",
            sub_fit.delta.dim(),
            subset.len()
        )));
    }
    let restricted: EpochFactor = full_fit.delta.restrict(subset)?;
    let (a, b, c) = triple(sub_fit);
    let d = restricted.to_matrix();
    let s = full_fit.psi.to_matrix();
    let g = full_fit.gamma.0.clone();
    relative_kron_error((&a, &b, &c), (&d, &s, &g))
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of mid-ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs two series of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in spearman input".into()));
    }
    let (ra, rb) = (mid_ranks(a), mid_ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidArgument("spearman undefined for a constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetValue {
    pub repeat: usize,
    pub fold: usize,
    pub size: usize,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Contents of `validate_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub mode: SplitMode,
    pub repeats: usize,
    pub folds: usize,
    pub assumptions: AssumptionSet,
    pub values: Vec<SubsetValue>,
    pub mean: f64,
    /// Sample standard deviation (denominator `m - 1`).
    pub std: f64,
    pub normalization: String,
}

/// Refits the model on each epoch subset and compares with the full fit.
pub fn validate(
    t: &TrialTensor,
    full_fit: &FactorSet,
    assumptions: AssumptionSet,
    cfg: &FitConfig,
    mode: SplitMode,
    folds: usize,
    repeats: usize,
    seed: u64,
) -> Result<ValidateReport> {
    let (p, q, r) = full_fit.dims();
    let d = t.dims();
    if (d.p, d.q, d.r) != (p, q, r) {
        return Err(Error::Dimension(format!(
            "fit dims ({p}, {q}, {r}) do not match data dims ({}, {}, {})",
            d.p, d.q, d.r
        )));
    }
    let subsets = split_epochs(r, mode, folds, repeats, seed)?;
    let values: Vec<SubsetValue> = subsets
        .par_iter()
        .enumerate()
        .map(|(idx, subset)| {
            let outcome = t
                .select_epochs(subset)
                .and_then(|sub| fit(&sub, assumptions, cfg))
                .and_then(|res| validation_measure(&res.factors, full_fit, subset));
            let (value, error) = match outcome {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SubsetValue {
                repeat: idx / folds,
                fold: idx % folds,
                size: subset.len(),
                value,
                error,
            }
        })
        .collect();
    let ok: Vec<f64> = values.iter().filter_map(|v| v.value).collect();
    let (mean, std) = mean_std(&ok);
    Ok(ValidateReport {
        mode,
        repeats: if mode == SplitMode::Consecutive { 1 } else { repeats },
        folds,
        assumptions,
        values,
        mean,
        std,
        normalization: "sub-fits and the full fit both satisfy Gamma(1,1) = Delta(1,1) = 1; \
                        the measure depends only on the Kronecker products"
            .into(),
    })
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
