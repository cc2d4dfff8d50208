//! Flip-flop maximum-likelihood estimation of `Delta (x) Psi (x) Gamma`.
//!
//! Each outer iteration updates `Psi` given `(Gamma, Delta)`, then `Delta`
//! given `(Gamma, Psi)`, then `Gamma` given `(Psi, Delta)`, and finally moves
//! the scale into `Psi` so that `Gamma(1,1) = Delta(1,1) = 1`. Every update is
//! a conditional maximizer of the likelihood, so the trace is nondecreasing.
//! A Toeplitz `Psi` has no closed form; it is fitted by EM on a circulant
//! extension, warm-started from the extension of the previous iteration.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structured::{
    cholesky_lower, embed_toeplitz, persym_project, subdiag_sums, CirculantExtension, EpochFactor,
    FactorSet, SpatialFactor, TemporalFactor, ToeplitzFactor,
};
use crate::tensor::{mode_gram, whiten_modes, Dims, TrialTensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiStructure {
    Toeplitz,
    Persymmetric,
    Unrestricted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaStructure {
    Diagonal,
    Unrestricted,
    Identity,
}

impl FromStr for PsiStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "toeplitz" => Ok(PsiStructure::Toeplitz),
            "p" | "persymmetric" => Ok(PsiStructure::Persymmetric),
            "u" | "unrestricted" => Ok(PsiStructure::Unrestricted),
            other => Err(Error::InvalidArgument(format!("unknown psi structure `{other}`"))),
        }
    }
}

impl FromStr for DeltaStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" | "diagonal" => Ok(DeltaStructure::Diagonal),
            "u" | "unrestricted" => Ok(DeltaStructure::Unrestricted),
            "i" | "identity" => Ok(DeltaStructure::Identity),
            other => Err(Error::InvalidArgument(format!("unknown delta structure `{other}`"))),
        }
    }
}

/// Structural assumptions used in estimation. `Gamma` is always unrestricted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AssumptionSet {
    pub psi: PsiStructure,
    pub delta: DeltaStructure,
}

impl AssumptionSet {
    pub const fn new(psi: PsiStructure, delta: DeltaStructure) -> Self {
        AssumptionSet { psi, delta }
    }

    /// The model's own assumptions, `(U, T, D)`.
    pub const MODEL: AssumptionSet = AssumptionSet::new(PsiStructure::Toeplitz, DeltaStructure::Diagonal);

    /// The seven settings compared in the simulation study, in table order.
    pub fn comparison_sets() -> [AssumptionSet; 7] {
        use DeltaStructure as D;
        use PsiStructure as P;
        [
            AssumptionSet::new(P::Toeplitz, D::Diagonal),
            AssumptionSet::new(P::Persymmetric, D::Diagonal),
            AssumptionSet::new(P::Unrestricted, D::Diagonal),
            AssumptionSet::new(P::Toeplitz, D::Identity),
            AssumptionSet::new(P::Unrestricted, D::Identity),
            AssumptionSet::new(P::Toeplitz, D::Unrestricted),
            AssumptionSet::new(P::Unrestricted, D::Unrestricted),
        ]
    }

    /// Three-letter code such as `UTD`.
    pub fn code(&self) -> String {
        let psi = match self.psi {
            PsiStructure::Toeplitz => 'T',
            PsiStructure::Persymmetric => 'P',
            PsiStructure::Unrestricted => 'U',
        };
        let delta = match self.delta {
            DeltaStructure::Diagonal => 'D',
            DeltaStructure::Unrestricted => 'U',
            DeltaStructure::Identity => 'I',
        };
        format!("U{psi}{delta}")
    }

    /// Sample-size requirement for this setting.
    ///
    /// Always `n qr >= p`; structured `Psi` needs `n pr >= ceil(q/2)`,
    /// unrestricted `Psi` needs `n pr >= q`, and unrestricted `Delta` adds
    /// `n pq >= r`.
    pub fn check_sample_size(&self, dims: Dims) -> Result<()> {
        let Dims { p, q, r, n } = dims;
        let (p, q, r, n) = (p as u128, q as u128, r as u128, n as u128);
        let psi_need = match self.psi {
            PsiStructure::Toeplitz | PsiStructure::Persymmetric => q.div_ceil(2),
            PsiStructure::Unrestricted => q,
        };
        let mut failures = Vec::new();
        if n * q * r < p {
            failures.push(format!("n*q*r = {} < p = {p}", n * q * r));
        }
        if n * p * r < psi_need {
            failures.push(format!("n*p*r = {} < {psi_need} required for psi", n * p * r));
        }
        if self.delta == DeltaStructure::Unrestricted && n * p * q < r {
            failures.push(format!("n*p*q = {} < r = {r}", n * p * q));
        }
        if failures.is_empty() {
            return Ok(());
        }
        Err(Error::InadmissibleSampleSize {
            p: dims.p,
            q: dims.q,
            r: dims.r,
            n: dims.n,
            extra: if self.delta == DeltaStructure::Unrestricted { ", r/(pq)" } else { "" },
            detail: failures.join("; "),
        })
    }
}

impl fmt::Display for AssumptionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for AssumptionSet {
    type Err = Error;
    /// Parses codes like `UTD` or `TD`.
    fn from_str(s: &str) -> Result<Self> {
        let code = s.trim().to_ascii_uppercase();
        let code = match code.len() {
            3 if code.starts_with('U') => &code[1..],
            2 => &code[..],
            _ => return Err(Error::InvalidArgument(format!("bad assumption code `{s}`"))),
        };
        let set = AssumptionSet::new(code[0..1].parse()?, code[1..2].parse()?);
        Ok(set)
    }
}

impl Serialize for AssumptionSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for AssumptionSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_outer_iters: usize,
    /// Stop when `|L_m - L_{m-1}| <= outer_tol * max(|L_m|, 1)`.
    pub outer_tol: f64,
    pub em_max_iters: usize,
    /// Stop EM when the relative change of the Toeplitz first row is below this.
    pub em_tol: f64,
    /// Circulant embedding size; `2q - 1` when absent.
    pub embedding_l: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iters: 200,
            outer_tol: 1e-7,
            em_max_iters: 100,
            em_tol: 1e-6,
            embedding_l: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) || !(self.em_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.max_outer_iters == 0 || self.em_max_iters == 0 {
            return Err(Error::InvalidArgument("iteration limits must be positive".into()));
        }
        Ok(())
    }

    fn embedding_for(&self, q: usize) -> Result<usize> {
        let min = 2 * q - 1;
        match self.embedding_l {
            None => Ok(min),
            Some(l) if l >= min => Ok(l),
            Some(l) => Err(Error::InvalidArgument(format!(
                "embedding dimension {l} is below 2q-1 = {min}"
            ))),
        }
    }
}

/// Outcome of the EM iterations for one Toeplitz update.
#[derive(Clone, Debug)]
pub struct EmOutcome {
    pub extension: CirculantExtension,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the whitened columns after each iteration.
    pub loglik_trace: Vec<f64>,
    /// True when the run had to restart from the circulant identity.
    pub restarted: bool,
}

/// Result of one `Psi` update.
#[derive(Clone, Debug)]
pub struct PsiUpdate {
    pub psi: TemporalFactor,
    pub extension: Option<CirculantExtension>,
    pub em: Option<EmOutcome>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub factors: FactorSet,
    pub assumptions: AssumptionSet,
    pub loglik_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub em_iterations: Vec<usize>,
    pub converged: bool,
    /// Relative Frobenius residual of the `Gamma` likelihood equation.
    pub gamma_residual: f64,
    /// Relative Frobenius residual of the `Delta` likelihood equation.
    pub delta_residual: Option<f64>,
    /// Relative residual of the closed-form `Psi` update (persymmetric and
    /// unrestricted settings).
    pub psi_residual: Option<f64>,
    /// `max_j |G_j|` of the Toeplitz likelihood equation (Toeplitz setting).
    pub g_residual: Option<f64>,
    /// Number of whitened columns, `n p r`.
    pub n_tilde: usize,
    pub extension: Option<CirculantExtension>,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("fit records at least one iteration")
    }
}

fn check_dims(t: &TrialTensor, p: Option<usize>, q: Option<usize>, r: Option<usize>) -> Result<()> {
    let d = t.dims();
    for (name, want, have) in [("p", p, d.p), ("q", q, d.q), ("r", r, d.r)] {
        if let Some(w) = want {
            if w != have {
                return Err(Error::Dimension(format!(
                    "factor dimension {name}={w} does not match data {name}={have}"
                )));
            }
        }
    }
    Ok(())
}

/// `Gamma = (1/nqr) sum_k X_k (Delta^{-1} (x) Psi^{-1}) X_k^T`.
pub fn update_gamma(t: &TrialTensor, psi: &TemporalFactor, delta: &EpochFactor) -> Result<SpatialFactor> {
    check_dims(t, None, Some(psi.dim()), Some(delta.dim()))?;
    let Dims { q, r, n, .. } = t.dims();
    let w = whiten_modes(t, None, Some(&psi.root_inverse("psi")?), Some(&delta.root_inverse("delta")?));
    let g = mode_gram(&w, 0) / (n * q * r) as f64;
    Ok(SpatialFactor(g))
}

/// `D = (1/npq) sum_k Z_k (Psi^{-1} (x) Gamma^{-1}) Z_k^T`, reduced to its
/// diagonal in diagonal mode.
pub fn update_delta(
    t: &TrialTensor,
    gamma: &SpatialFactor,
    psi: &TemporalFactor,
    mode: DeltaStructure,
) -> Result<EpochFactor> {
    check_dims(t, Some(gamma.dim()), Some(psi.dim()), None)?;
    let Dims { p, q, r, n } = t.dims();
    let w = whiten_modes(t, Some(&gamma.root_inverse("gamma")?), Some(&psi.root_inverse("psi")?), None);
    let scale = (n * p * q) as f64;
    match mode {
        DeltaStructure::Identity => Ok(EpochFactor::Identity(r)),
        DeltaStructure::Diagonal => {
            let block = p * q;
            let mut diag = vec![0.0; r];
            for k in 0..n {
                for (d, chunk) in w.sample(k).chunks_exact(block).enumerate() {
                    diag[d] += chunk.iter().map(|v| v * v).sum::<f64>();
                }
            }
            Ok(EpochFactor::Diagonal(diag.into_iter().map(|v| v / scale).collect()))
        }
        DeltaStructure::Unrestricted => Ok(EpochFactor::Unrestricted(mode_gram(&w, 2) / scale)),
    }
}

/// Sample covariance of the whitened `Y` columns, `(1/npr) sum_k Y~_k Y~_k^T`.
pub fn whitened_temporal_covariance(
    t: &TrialTensor,
    gamma: &SpatialFactor,
    delta: &EpochFactor,
) -> Result<DMatrix<f64>> {
    check_dims(t, Some(gamma.dim()), None, Some(delta.dim()))?;
    let Dims { p, r, n, .. } = t.dims();
    let w = whiten_modes(t, Some(&gamma.root_inverse("gamma")?), None, Some(&delta.root_inverse("delta")?));
    Ok(mode_gram(&w, 1) / (n * p * r) as f64)
}

/// Gaussian log-likelihood of `n_tilde` columns with sample covariance `s`
/// under covariance `psi`.
fn column_loglik(psi: &DMatrix<f64>, s: &DMatrix<f64>, n_tilde: f64) -> Result<f64> {
    let l = cholesky_lower(psi, "psi")?;
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut inv_s = s.clone();
    l.solve_lower_triangular_mut(&mut inv_s);
    l.transpose().solve_upper_triangular_mut(&mut inv_s);
    let q = psi.nrows() as f64;
    Ok(-0.5 * n_tilde * (q * LN_2PI + log_det + inv_s.trace()))
}

/// Cyclic-diagonal averages of an `l x l` matrix (the circulant M-step).
fn circulant_average(s: &DMatrix<f64>) -> Vec<f64> {
    let l = s.nrows();
    let mut col = vec![0.0; l];
    for j in 0..l {
        for i in 0..l {
            col[(i + l - j) % l] += s[(i, j)];
        }
    }
    for v in &mut col {
        *v /= l as f64;
    }
    for m in 1..l.div_ceil(2) {
        let avg = 0.5 * (col[m] + col[l - m]);
        col[m] = avg;
        col[l - m] = avg;
    }
    col
}

/// One EM iteration: E-step with conditional mean and covariance of the
/// `l - q` missing coordinates, M-step by cyclic averaging.
fn em_step(c: &CirculantExtension, s: &DMatrix<f64>) -> Result<CirculantExtension> {
    let q = s.nrows();
    let l = c.l();
    let full = c.to_matrix();
    let c11 = full.view((0, 0), (q, q)).into_owned();
    let c12 = full.view((0, q), (q, l - q)).into_owned();
    let c22 = full.view((q, q), (l - q, l - q)).into_owned();
    let chol = nalgebra::Cholesky::new(c11)
        .ok_or_else(|| Error::Numerical("upper block of circulant extension is not positive definite".into()))?;
    // B = C21 C11^{-1}, the regression of missing on observed coordinates.
    let b = chol.solve(&c12).transpose();
    // U = C22 - C21 C11^{-1} C12, the conditional covariance of the missing block.
    let u = &c22 - &b * &c12;
    let bs = &b * s;
    let mut s_full = DMatrix::zeros(l, l);
    s_full.view_mut((0, 0), (q, q)).copy_from(s);
    s_full.view_mut((q, 0), (l - q, q)).copy_from(&bs);
    s_full.view_mut((0, q), (q, l - q)).copy_from(&bs.transpose());
    let lower = &bs * b.transpose() + u;
    s_full.view_mut((q, q), (l - q, l - q)).copy_from(&lower);
    Ok(CirculantExtension::new(circulant_average(&s_full)).expect("cyclic averages are symmetric"))
}

fn row_change(old: &[f64], new: &[f64]) -> f64 {
    let num: f64 = old.iter().zip(new).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = old.iter().map(|a| a * a).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

fn upper_block_is_pd(c: &CirculantExtension, q: usize) -> bool {
    nalgebra::Cholesky::new(c.upper_block(q).to_matrix()).is_some()
}

/// EM estimate of a Toeplitz covariance from the sample covariance `s` of
/// `n_tilde` columns, through a circulant extension of size `start.l()`.
///
/// A start whose upper block is not positive definite is replaced by the
/// circulant identity. If an iteration loses positive definiteness the run
/// restarts once from the identity; a second loss is an error.
pub fn toeplitz_em(
    s: &DMatrix<f64>,
    n_tilde: usize,
    start: &CirculantExtension,
    max_iters: usize,
    tol: f64,
) -> Result<EmOutcome> {
    let q = s.nrows();
    let l = start.l();
    if l < 2 * q - 1 {
        return Err(Error::InvalidArgument(format!("embedding dimension {l} is below 2q-1")));
    }
    let mut current = if upper_block_is_pd(start, q) {
        start.clone()
    } else {
        CirculantExtension::identity(l)
    };
    let mut restarted = false;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let next = em_step(&current, s).and_then(|c| {
            if upper_block_is_pd(&c, q) {
                Ok(c)
            } else {
                Err(Error::Numerical("EM produced a circulant with indefinite upper block".into()))
            }
        });
        let next = match next {
            Ok(c) => c,
            Err(_) if !restarted => {
                restarted = true;
                current = CirculantExtension::identity(l);
                trace.clear();
                continue;
            }
            Err(e) => {
                return Err(Error::Numerical(format!(
                    "Toeplitz EM failed after restart at iteration {iterations}: {e}"
                )))
            }
        };
        let change = row_change(&current.first_col()[..q], &next.first_col()[..q]);
        trace.push(column_loglik(&next.upper_block(q).to_matrix(), s, n_tilde as f64)?);
        current = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(EmOutcome {
        extension: current,
        iterations,
        converged,
        loglik_trace: trace,
        restarted,
    })
}

/// Conditional maximum-likelihood update of `Psi` given `(Gamma, Delta)`.
pub fn update_psi(
    t: &TrialTensor,
    gamma: &SpatialFactor,
    delta: &EpochFactor,
    mode: PsiStructure,
    cfg: &FitConfig,
    warm_start: Option<&CirculantExtension>,
) -> Result<PsiUpdate> {
    let s = whitened_temporal_covariance(t, gamma, delta)?;
    let Dims { p, q, r, n } = t.dims();
    match mode {
        PsiStructure::Unrestricted => Ok(PsiUpdate {
            psi: TemporalFactor::Unrestricted(s),
            extension: None,
            em: None,
        }),
        PsiStructure::Persymmetric => Ok(PsiUpdate {
            psi: TemporalFactor::Persymmetric(persym_project(&s)?),
            extension: None,
            em: None,
        }),
        PsiStructure::Toeplitz => {
            let l = cfg.embedding_for(q)?;
            let start = match warm_start {
                Some(c) if c.l() == l => c.clone(),
                Some(c) => {
                    return Err(Error::InvalidArgument(format!(
                        "warm start has size {}, expected {l}",
                        c.l()
                    )))
                }
                None => CirculantExtension::identity(l),
            };
            let em = toeplitz_em(&s, n * p * r, &start, cfg.em_max_iters, cfg.em_tol)?;
            let psi = em.extension.upper_block(q);
            Ok(PsiUpdate {
                psi: TemporalFactor::Toeplitz(psi),
                extension: Some(em.extension.clone()),
                em: Some(em),
            })
        }
    }
}

/// Embeds a current Toeplitz estimate as an EM starting point, falling back
/// to the circulant identity when the embedding is indefinite.
pub fn initial_extension(psi: &ToeplitzFactor, l: usize) -> Result<CirculantExtension> {
    let c = embed_toeplitz(psi, l)?;
    if c.is_pd() {
        Ok(c)
    } else {
        Ok(CirculantExtension::identity(l))
    }
}

/// Log-likelihood of the data under `N(0, Delta (x) Psi (x) Gamma)`.
pub fn log_likelihood(t: &TrialTensor, factors: &FactorSet) -> Result<f64> {
    let (p, q, r) = factors.dims();
    check_dims(t, Some(p), Some(q), Some(r))?;
    let n = t.dims().n;
    let w = whiten_modes(
        t,
        Some(&factors.gamma.root_inverse("gamma")?),
        Some(&factors.psi.root_inverse("psi")?),
        Some(&factors.delta.root_inverse("delta")?),
    );
    let quad: f64 = w.values().iter().map(|v| v * v).sum();
    let (pf, qf, rf, nf) = (p as f64, q as f64, r as f64, n as f64);
    let log_det = pf * qf * factors.delta.log_det()?
        + pf * rf * factors.psi.log_det()?
        + qf * rf * factors.gamma.log_det()?;
    Ok(-0.5 * (nf * pf * qf * rf * LN_2PI + nf * log_det + quad))
}

/// `G(Psi^{-1} A Psi^{-1} - n_tilde Psi^{-1})` with `A` the scatter matrix of
/// the whitened columns: the Toeplitz likelihood-equation residual.
pub fn toeplitz_g_residual(t: &TrialTensor, factors: &FactorSet) -> Result<Vec<f64>> {
    let s = whitened_temporal_covariance(t, &factors.gamma, &factors.delta)?;
    let Dims { p, r, n, .. } = t.dims();
    let n_tilde = (n * p * r) as f64;
    let psi = factors.psi.to_matrix();
    let chol = nalgebra::Cholesky::new(psi).ok_or_else(|| Error::not_pd("psi", 0, 0.0))?;
    let psi_inv = chol.inverse();
    let m = (&psi_inv * &s * &psi_inv - &psi_inv) * n_tilde;
    subdiag_sums(&((&m + m.transpose()) * 0.5))
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(f64::MIN_POSITIVE)
}

fn tag_iteration(e: Error, iteration: usize, component: &str) -> Error {
    match e {
        Error::NotPositiveDefinite { index, pivot, .. } => Error::NotPositiveDefinite {
            what: format!("{component} update at outer iteration {iteration}"),
            index,
            pivot,
        },
        Error::Numerical(msg) => Error::Numerical(format!("{component} update at outer iteration {iteration}: {msg}")),
        other => other,
    }
}

/// Runs the flip-flop iteration from `Gamma = I`, `Delta = I`.
pub fn fit(t: &TrialTensor, assumptions: AssumptionSet, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let dims = t.dims();
    assumptions.check_sample_size(dims)?;
    let Dims { p, r, n, .. } = dims;

    let mut gamma = SpatialFactor::identity(p);
    let mut delta = match assumptions.delta {
        DeltaStructure::Identity => EpochFactor::Identity(r),
        DeltaStructure::Diagonal => EpochFactor::Diagonal(vec![1.0; r]),
        DeltaStructure::Unrestricted => EpochFactor::Unrestricted(DMatrix::identity(r, r)),
    };
    let mut extension: Option<CirculantExtension> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut em_iterations = Vec::new();
    let mut converged = false;
    let mut factors = None;

    for m in 1..=cfg.max_outer_iters {
        let up = update_psi(t, &gamma, &delta, assumptions.psi, cfg, extension.as_ref())
            .map_err(|e| tag_iteration(e, m, "psi"))?;
        if let Some(em) = &up.em {
            em_iterations.push(em.iterations);
        }
        let psi = up.psi;
        if assumptions.delta != DeltaStructure::Identity {
            delta = update_delta(t, &gamma, &psi, assumptions.delta).map_err(|e| tag_iteration(e, m, "delta"))?;
        }
        gamma = update_gamma(t, &psi, &delta).map_err(|e| tag_iteration(e, m, "gamma"))?;

        let raw = FactorSet { gamma, psi, delta };
        let scale = raw.gamma.0[(0, 0)] * raw.delta.leading();
        let normalized = raw.normalize().map_err(|e| tag_iteration(e, m, "normalize"))?;
        extension = up.extension.map(|c| c.scaled(scale));
        let ll = log_likelihood(t, &normalized).map_err(|e| tag_iteration(e, m, "likelihood"))?;
        gamma = normalized.gamma.clone();
        delta = normalized.delta.clone();
        let done = trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() <= cfg.outer_tol * ll.abs().max(1.0));
        trace.push(ll);
        factors = Some(normalized);
        if done {
            converged = true;
            break;
        }
    }
    let factors = factors.expect("at least one outer iteration");

    let gamma_fp = update_gamma(t, &factors.psi, &factors.delta)?;
    let gamma_residual = rel_diff(&factors.gamma.0, &gamma_fp.0);
    let delta_residual = match assumptions.delta {
        DeltaStructure::Identity => None,
        mode => {
            let d = update_delta(t, &factors.gamma, &factors.psi, mode)?;
            Some(rel_diff(&factors.delta.to_matrix(), &d.to_matrix()))
        }
    };
    let (psi_residual, g_residual) = match assumptions.psi {
        PsiStructure::Toeplitz => {
            let g = toeplitz_g_residual(t, &factors)?;
            (None, Some(g.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        }
        mode => {
            let up = update_psi(t, &factors.gamma, &factors.delta, mode, cfg, None)?;
            (Some(rel_diff(&factors.psi.to_matrix(), &up.psi.to_matrix())), None)
        }
    };

    Ok(FitResult {
        factors,
        assumptions,
        outer_iterations: trace.len(),
        loglik_trace: trace,
        em_iterations,
        converged,
        gamma_residual,
        delta_residual,
        psi_residual,
        g_residual,
        n_tilde: n * p * r,
        extension,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn data(dims: Dims, seed: u64) -> TrialTensor {
        let len = dims.total_len().unwrap();
        let mut x = seed as f64 + 0.5;
        let vals = (0..len)
            .map(|_| {
                x = (x * 7.31 + 0.137).fract() * 13.0;
                (x - 6.5) / 3.0
            })
            .collect();
        TrialTensor::new(dims, vals).unwrap()
    }

    #[test]
    fn assumption_codes_round_trip() {
        for set in AssumptionSet::comparison_sets() {
            assert_eq!(set.code().parse::<AssumptionSet>().unwrap(), set);
        }
        assert_eq!("td".parse::<AssumptionSet>().unwrap(), AssumptionSet::MODEL);
        assert!("UXD".parse::<AssumptionSet>().is_err());
        assert!("UPI".parse::<AssumptionSet>().is_ok());
    }

    #[test]
    fn comparison_sets_exclude_persymmetric_identity_and_unrestricted() {
        let sets = AssumptionSet::comparison_sets();
        let codes: Vec<_> = sets.iter().map(|s| s.code()).collect();
        assert_eq!(codes, ["UTD", "UPD", "UUD", "UTI", "UUI", "UTU", "UUU"]);
    }

    #[test]
    fn gamma_with_identity_weights_is_scatter() {
        let t = data(Dims::new(2, 3, 4, 1), 1);
        let g = update_gamma(&t, &TemporalFactor::Toeplitz(ToeplitzFactor::identity(3)), &EpochFactor::Identity(4))
            .unwrap();
        let x = crate::tensor::unfold(&t, 0, crate::tensor::UnfoldKind::X).unwrap().matrix;
        let expected = &x * x.transpose() / 12.0;
        assert!((g.0 - expected).norm() < 1e-12);
    }

    #[test]
    fn delta_with_identity_weights_is_epoch_energy() {
        let t = data(Dims::new(2, 3, 4, 2), 3);
        let d = update_delta(
            &t,
            &SpatialFactor::identity(2),
            &TemporalFactor::Unrestricted(DMatrix::identity(3, 3)),
            DeltaStructure::Diagonal,
        )
        .unwrap();
        let diag = d.diagonal();
        for e in 0..4 {
            let mut s = 0.0;
            for k in 0..2 {
                for j in 0..3 {
                    for i in 0..2 {
                        s += t.get(i, j, e, k).powi(2);
                    }
                }
            }
            assert!((diag[e] - s / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn epoch_scaling_shows_in_delta_ratio() {
        let mut t = data(Dims::new(2, 3, 2, 1), 5);
        for j in 0..3 {
            for i in 0..2 {
                let v = t.get(i, j, 0, 0);
                t.set(i, j, 1, 0, 2.0 * v);
            }
        }
        let d = update_delta(
            &t,
            &SpatialFactor::identity(2),
            &TemporalFactor::Toeplitz(ToeplitzFactor::identity(3)),
            DeltaStructure::Diagonal,
        )
        .unwrap()
        .diagonal();
        assert!((d[1] / d[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_psi_em_is_mean_square() {
        let t = data(Dims::new(2, 1, 3, 1), 7);
        let up = update_psi(
            &t,
            &SpatialFactor::identity(2),
            &EpochFactor::Identity(3),
            PsiStructure::Toeplitz,
            &FitConfig::default(),
            None,
        )
        .unwrap();
        let ms = t.values().iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert!((up.psi.to_matrix()[(0, 0)] - ms).abs() < 1e-12);
        assert!(up.em.unwrap().iterations <= 2);
    }

    #[test]
    fn scalar_loglik_at_zero() {
        let t = TrialTensor::new(Dims::new(1, 1, 1, 1), vec![0.0]).unwrap();
        let f = FactorSet {
            gamma: SpatialFactor::identity(1),
            psi: TemporalFactor::Toeplitz(ToeplitzFactor::identity(1)),
            delta: EpochFactor::Diagonal(vec![1.0]),
        };
        assert!((log_likelihood(&t, &f).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn white_noise_loglik() {
        let t = data(Dims::new(2, 3, 2, 2), 11);
        let f = FactorSet {
            gamma: SpatialFactor::identity(2),
            psi: TemporalFactor::Toeplitz(ToeplitzFactor::identity(3)),
            delta: EpochFactor::Identity(2),
        };
        let ss: f64 = t.values().iter().map(|v| v * v).sum();
        let expected = -0.5 * (24.0 * LN_2PI + ss);
        assert!((log_likelihood(&t, &f).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_inadmissible() {
        let t = data(Dims::new(100, 4, 2, 1), 1);
        let err = fit(&t, AssumptionSet::MODEL, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InadmissibleSampleSize { .. }));
        assert!(err.to_string().contains("sample size"));
    }

    #[test]
    fn sample_size_per_setting() {
        let dims = Dims::new(2, 9, 2, 1);
        // n p r = 4 < ceil(9/2) = 5
        assert!(AssumptionSet::MODEL.check_sample_size(dims).is_err());
        let dims = Dims::new(2, 9, 3, 1);
        assert!(AssumptionSet::MODEL.check_sample_size(dims).is_ok());
        let uud = AssumptionSet::new(PsiStructure::Unrestricted, DeltaStructure::Diagonal);
        assert!(uud.check_sample_size(dims).is_err());
        let utu = AssumptionSet::new(PsiStructure::Toeplitz, DeltaStructure::Unrestricted);
        assert!(utu.check_sample_size(Dims::new(2, 2, 5, 1)).is_err());
    }

    #[test]
    fn fit_traces_are_nondecreasing() {
        let t = data(Dims::new(3, 4, 6, 1), 13);
        for set in AssumptionSet::comparison_sets() {
            let res = fit(&t, set, &FitConfig::default()).unwrap();
            for w in res.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{set}: {} -> {}", w[0], w[1]);
            }
            assert!(res.factors.is_normalized(1e-12));
        }
    }
}
