//! Epoch-level regressors and the shifted-design GLM.
//!
//! The Δ-regressor is the estimated per-epoch variance, with epochs that
//! were dropped before fitting filled in from their neighbors. The alpha
//! regressor is a plain band-power summary: for each epoch, the one-sided
//! periodogram power in `[f_lo, f_hi]` averaged over a channel subset.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::structured::{embed_toeplitz, EpochFactor, ToeplitzFactor};
use crate::tensor::{Dims, TrialTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Delta,
    AlphaPower,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorSeries {
    pub values: Vec<f64>,
    pub interpolated_mask: Vec<bool>,
    pub kind: RegressorKind,
}

impl RegressorSeries {
    pub fn new(values: Vec<f64>, interpolated_mask: Vec<bool>, kind: RegressorKind) -> Result<Self> {
        if values.len() != interpolated_mask.len() {
            return Err(Error::Dimension(format!(
                "{} values but {} mask entries",
                values.len(),
                interpolated_mask.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty regressor".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("regressor values must be finite".into()));
        }
        Ok(RegressorSeries { values, interpolated_mask, kind })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Expands the diagonal of an epoch factor fitted on the retained epochs to
/// the full epoch range `0..kept + removed.len()`.
///
/// A removed epoch takes the mean of the nearest retained epoch on either
/// side, or a copy of the only one at the ends of the series.
pub fn delta_regressor(delta_hat: &EpochFactor, removed: &[usize]) -> Result<RegressorSeries> {
    let kept = match delta_hat {
        EpochFactor::Diagonal(d) => d.clone(),
        EpochFactor::Identity(r) => vec![1.0; *r],
        EpochFactor::Unrestricted(_) => {
            return Err(Error::InvalidArgument("delta regressor needs a diagonal epoch factor".into()))
        }
    };
    let r = kept.len() + removed.len();
    let mut is_removed = vec![false; r];
    for &e in removed {
        if e >= r {
            return Err(Error::InvalidArgument(format!("removed epoch {e} out of range 0..{r}")));
        }
        if is_removed[e] {
            return Err(Error::InvalidArgument(format!("epoch {e} removed twice")));
        }
        is_removed[e] = true;
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument("all epochs removed".into()));
    }
    let mut values = vec![f64::NAN; r];
    let mut it = kept.iter();
    for (v, &gone) in values.iter_mut().zip(&is_removed) {
        if !gone {
            *v = *it.next().expect("kept count matches");
        }
    }
    let filled = values.clone();
    for e in 0..r {
        if !is_removed[e] {
            continue;
        }
        let left = (0..e).rev().find(|&i| !is_removed[i]).map(|i| filled[i]);
        let right = (e + 1..r).find(|&i| !is_removed[i]).map(|i| filled[i]);
        values[e] = match (left, right) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("at least one epoch is retained"),
        };
    }
    RegressorSeries::new(values, is_removed, RegressorKind::Delta)
}

/// Per-epoch band power.
///
/// For channel `i` and epoch `d` the one-sided periodogram is normalized so
/// that its bins sum to the mean square of the `q` samples; the regressor is
/// the sum over bins with frequency in `[f_lo, f_hi]`, averaged over the
/// channels and over the `n` samples.
pub fn alpha_regressor(t: &TrialTensor, channels: &[usize], band: (f64, f64), fs: f64) -> Result<RegressorSeries> {
    let Dims { p, q, r, n } = t.dims();
    let (f_lo, f_hi) = band;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidArgument("sampling rate must be positive".into()));
    }
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "band must satisfy 0 < f_lo < f_hi < fs/2, got ({f_lo}, {f_hi}) at fs {fs}"
        )));
    }
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no channels selected".into()));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= p) {
        return Err(Error::InvalidArgument(format!("channel {c} out of range 0..{p}")));
    }
    let bins: Vec<usize> = (0..=q / 2)
        .filter(|&k| {
            let f = k as f64 * fs / q as f64;
            f >= f_lo && f <= f_hi
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "band ({f_lo}, {f_hi}) Hz contains no frequency bin at resolution {} Hz",
            fs / q as f64
        )));
    }
    let weight = |k: usize| if k == 0 || 2 * k == q { 1.0 } else { 2.0 };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(q);
    let scale = 1.0 / (q * q) as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); q];
    let mut values = vec![0.0; r];
    for (d, v) in values.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..n {
            for &c in channels {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(t.get(c, j, d, k), 0.0);
                }
                fft.process(&mut buf);
                acc += bins.iter().map(|&b| weight(b) * buf[b].norm_sqr() * scale).sum::<f64>();
            }
        }
        *v = acc / (channels.len() * n) as f64;
    }
    RegressorSeries::new(values, vec![false; r], RegressorKind::AlphaPower)
}

/// Power spectrum implied by a Toeplitz temporal factor: the eigenvalues of
/// its minimal circulant embedding at bins `0..q`, clipped at zero, on the
/// grid `k * fs / (2q - 1)` Hz.
pub fn spectrum_from_psi(psi: &ToeplitzFactor, fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidArgument("sampling rate must be positive".into()));
    }
    let q = psi.dim();
    let l = 2 * q - 1;
    let eig = embed_toeplitz(psi, l)?.eigenvalues();
    let freqs = (0..q).map(|k| k as f64 * fs / l as f64).collect();
    let power = eig[..q].iter().map(|v| v.max(0.0)).collect();
    Ok((freqs, power))
}

/// What a design column represents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role")]
pub enum ColumnRole {
    Intercept,
    Confounder { name: String },
    Interest { lag: i64 },
}

impl ColumnRole {
    pub fn label(&self) -> String {
        match self {
            ColumnRole::Intercept => "intercept".into(),
            ColumnRole::Confounder { name } => name.clone(),
            ColumnRole::Interest { lag } => format!("interest[lag={lag}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Confounders {
    pub names: Vec<String>,
    /// `r x m`, one row per epoch.
    pub matrix: DMatrix<f64>,
}

impl Confounders {
    pub fn none(r: usize) -> Self {
        Confounders { names: Vec::new(), matrix: DMatrix::zeros(r, 0) }
    }
}

#[derive(Clone, Debug)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub roles: Vec<ColumnRole>,
}

impl Design {
    pub fn interest_columns(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, ColumnRole::Interest { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Relative threshold on `|R_jj|` below which a column counts as dependent
/// on the columns before it.
const RANK_TOL: f64 = 1e-10;

/// Thin QR via modified Gram-Schmidt with one reorthogonalization pass.
/// Returns `Q` (`r x k`) and the indices of columns that lie in the span of
/// earlier ones.
fn orthonormal_basis(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let (rows, cols) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(cols);
    let mut dependent = Vec::new();
    for j in 0..cols {
        let col = x.column(j).clone_owned();
        let norm0 = col.norm();
        let mut v = col;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= RANK_TOL * norm0.max(f64::MIN_POSITIVE) || norm0 == 0.0 {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    let mut q = DMatrix::zeros(rows, basis.len());
    for (j, b) in basis.iter().enumerate() {
        q.set_column(j, b);
    }
    (q, dependent)
}

/// `[intercept | confounders | interest shifted by each lag]`, with
/// `value(d) = interest(d - lag)` and zeros outside the recorded range.
pub fn build_design(interest: &RegressorSeries, shifts: &[i64], confounders: &Confounders) -> Result<Design> {
    let r = interest.len();
    if confounders.matrix.nrows() != r {
        return Err(Error::Dimension(format!(
            "confounders have {} rows but the regressor has {r} epochs",
            confounders.matrix.nrows()
        )));
    }
    if confounders.names.len() != confounders.matrix.ncols() {
        return Err(Error::Dimension("confounder names and columns disagree".into()));
    }
    if shifts.is_empty() {
        return Err(Error::InvalidArgument("at least one shift is required".into()));
    }
    let m = confounders.matrix.ncols();
    let cols = 1 + m + shifts.len();
    if r <= cols {
        return Err(Error::InvalidArgument(format!(
            "{r} epochs cannot identify {cols} design columns"
        )));
    }
    let mut matrix = DMatrix::zeros(r, cols);
    let mut roles = Vec::with_capacity(cols);
    matrix.column_mut(0).fill(1.0);
    roles.push(ColumnRole::Intercept);
    for c in 0..m {
        matrix.set_column(1 + c, &confounders.matrix.column(c));
        roles.push(ColumnRole::Confounder { name: confounders.names[c].clone() });
    }
    for (s, &lag) in shifts.iter().enumerate() {
        let col = 1 + m + s;
        for d in 0..r {
            let src = d as i64 - lag;
            if (0..r as i64).contains(&src) {
                matrix[(d, col)] = interest.values[src as usize];
            }
        }
        roles.push(ColumnRole::Interest { lag });
    }
    let (_, dependent) = orthonormal_basis(&matrix);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent.iter().map(|&j| roles[j].label()).collect() });
    }
    Ok(Design { matrix, roles })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelTestResult {
    pub f_stat: f64,
    pub p_value: f64,
    pub df: (usize, usize),
    pub significant: bool,
    pub perfect_fit: bool,
}

/// Upper tail `P(F > f)` of the `F(d1, d2)` distribution.
pub fn f_upper_tail(f: f64, d1: usize, d2: usize) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let (a, b) = (d1 as f64, d2 as f64);
    beta_reg(b / 2.0, a / 2.0, b / (b + a * f)).clamp(0.0, 1.0)
}

/// Precomputed projections for testing many responses against one design.
#[derive(Clone, Debug)]
pub struct PartialFTest {
    full: DMatrix<f64>,
    reduced: DMatrix<f64>,
    d1: usize,
    d2: usize,
}

impl PartialFTest {
    pub fn new(design: &DMatrix<f64>, interest_cols: &[usize]) -> Result<Self> {
        let (r, cols) = design.shape();
        if interest_cols.is_empty() {
            return Err(Error::InvalidArgument("no interest columns".into()));
        }
        let mut seen = vec![false; cols];
        for &c in interest_cols {
            if c >= cols || seen[c] {
                return Err(Error::InvalidArgument(format!("bad interest column {c}")));
            }
            seen[c] = true;
        }
        if r <= cols {
            return Err(Error::InvalidArgument(format!(
                "denominator degrees of freedom {r} - {cols} must be positive"
            )));
        }
        let (full, dependent) = orthonormal_basis(design);
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { columns: dependent.iter().map(|j| format!("column {j}")).collect() });
        }
        let keep: Vec<usize> = (0..cols).filter(|c| !seen[*c]).collect();
        let reduced = orthonormal_basis(&design.select_columns(&keep)).0;
        Ok(PartialFTest { full, reduced, d1: interest_cols.len(), d2: r - cols })
    }

    pub fn df(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn test(&self, y: &[f64]) -> Result<VoxelTestResult> {
        if y.len() != self.full.nrows() {
            return Err(Error::Dimension(format!("response has {} epochs, design {}", y.len(), self.full.nrows())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("response must be finite".into()));
        }
        let y = DVector::from_column_slice(y);
        let rss = |q: &DMatrix<f64>| {
            let fitted = q * (q.transpose() * &y);
            (&y - fitted).norm_squared()
        };
        let rss1 = rss(&self.full);
        let rss0 = rss(&self.reduced).max(rss1);
        let tss = y.norm_squared();
        let df = (self.d1, self.d2);
        if rss1 <= 1e-24 * tss || tss == 0.0 {
            return Ok(VoxelTestResult { f_stat: f64::INFINITY, p_value: 0.0, df, significant: false, perfect_fit: true });
        }
        let f = ((rss0 - rss1) / self.d1 as f64) / (rss1 / self.d2 as f64);
        Ok(VoxelTestResult {
            f_stat: f,
            p_value: f_upper_tail(f, self.d1, self.d2),
            df,
            significant: false,
            perfect_fit: false,
        })
    }
}

/// Partial F-test of `interest_cols` in `design` for one response.
pub fn partial_f_test(y: &[f64], design: &DMatrix<f64>, interest_cols: &[usize]) -> Result<VoxelTestResult> {
    PartialFTest::new(design, interest_cols)?.test(y)
}

/// Benjamini-Hochberg step-up rule at level `alpha`.
pub fn bh_fdr(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level {alpha} must be in (0, 1]")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let k = order
        .iter()
        .enumerate()
        .rev()
        .find(|(rank, &i)| p_values[i] <= (rank + 1) as f64 * alpha / m as f64)
        .map_or(0, |(rank, _)| rank + 1);
    let mut mask = vec![false; m];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmSummary {
    pub voxels: usize,
    pub epochs: usize,
    pub shifts: Vec<i64>,
    pub columns: Vec<String>,
    pub df: (usize, usize),
    pub fdr: f64,
    pub significant: usize,
    pub perfect_fits: usize,
}

#[derive(Clone, Debug)]
pub struct GlmReport {
    pub results: Vec<VoxelTestResult>,
    pub summary: GlmSummary,
}

/// Tests every voxel of a BOLD tensor (`p` voxels, `q = 1`, `r` epochs,
/// `n = 1`) and applies BH at level `fdr`.
pub fn run_glm(bold: &TrialTensor, design: &Design, shifts: &[i64], fdr: f64) -> Result<GlmReport> {
    let Dims { p, q, r, n } = bold.dims();
    if q != 1 || n != 1 {
        return Err(Error::Dimension(format!("BOLD data must have q = n = 1, got q = {q}, n = {n}")));
    }
    if r != design.matrix.nrows() {
        return Err(Error::Dimension(format!("BOLD has {r} epochs, design {}", design.matrix.nrows())));
    }
    let test = PartialFTest::new(&design.matrix, &design.interest_columns())?;
    let mut results: Vec<VoxelTestResult> = (0..p)
        .into_par_iter()
        .map(|v| {
            let y: Vec<f64> = (0..r).map(|d| bold.get(v, 0, d, 0)).collect();
            test.test(&y)
        })
        .collect::<Result<_>>()?;
    let mask = bh_fdr(&results.iter().map(|t| t.p_value).collect::<Vec<_>>(), fdr)?;
    for (t, s) in results.iter_mut().zip(mask) {
        t.significant = s;
    }
    let summary = GlmSummary {
        voxels: p,
        epochs: r,
        shifts: shifts.to_vec(),
        columns: design.roles.iter().map(|r| r.label()).collect(),
        df: test.df(),
        fdr,
        significant: results.iter().filter(|t| t.significant).count(),
        perfect_fits: results.iter().filter(|t| t.perfect_fit).count(),
    };
    Ok(GlmReport { results, summary })
}

fn parse_f64(format: &'static str, field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(format, field, format!("bad number `{s}`")))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

/// Confounder CSV: one row per epoch, one column per confounder. A first
/// row that does not parse as numbers is taken as the column names.
pub fn parse_confounders(text: &str) -> Result<Confounders> {
    const FMT: &str = "confounder CSV";
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in csv_reader(text).records() {
        rows.push(rec.map_err(|e| Error::parse(FMT, "record", e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(Error::parse(FMT, "record", "no rows"));
    }
    let header_like = rows[0].iter().any(|f| f.parse::<f64>().is_err());
    let names: Vec<String> = if header_like {
        rows.remove(0).iter().map(str::to_string).collect()
    } else {
        (0..rows[0].len()).map(|i| format!("c{}", i + 1)).collect()
    };
    if names.is_empty() || names.iter().any(|n| n.is_empty()) {
        return Err(Error::parse(FMT, "header", "empty column name"));
    }
    if rows.is_empty() {
        return Err(Error::parse(FMT, "record", "header without data rows"));
    }
    let m = names.len();
    let mut data = Vec::with_capacity(rows.len() * m);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(Error::parse(FMT, "record", format!("row {} has {} fields, expected {m}", i + 1, row.len())));
        }
        for (c, f) in row.iter().enumerate() {
            data.push(parse_f64(FMT, &names[c], f)?);
        }
    }
    Ok(Confounders { names, matrix: DMatrix::from_row_slice(rows.len(), m, &data) })
}

pub fn format_regressor(s: &RegressorSeries) -> String {
    let mut out = String::from("epoch,value,interpolated\n");
    for (d, (v, m)) in s.values.iter().zip(&s.interpolated_mask).enumerate() {
        let _ = writeln!(out, "{d},{v:e},{m}");
    }
    out
}

/// Regressor CSV with header `epoch,value,interpolated`; epochs must run
/// `0, 1, 2, ...` in order.
pub fn parse_regressor(text: &str, kind: RegressorKind) -> Result<RegressorSeries> {
    const FMT: &str = "regressor CSV";
    let mut rdr = csv_reader(text);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse(FMT, "header", "empty input"))?
        .map_err(|e| Error::parse(FMT, "header", e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["epoch", "value", "interpolated"] {
        return Err(Error::parse(FMT, "header", "expected `epoch,value,interpolated`"));
    }
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (d, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::parse(FMT, "record", e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::parse(FMT, "record", format!("row {} has {} fields", d + 1, rec.len())));
        }
        match rec[0].parse::<usize>() {
            Ok(e) if e == d => {}
            _ => return Err(Error::parse(FMT, "epoch", format!("expected epoch {d}, found `{}`", &rec[0]))),
        }
        values.push(parse_f64(FMT, "value", &rec[1])?);
        mask.push(match &rec[2] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::parse(FMT, "interpolated", format!("expected true/false, found `{other}`"))),
        });
    }
    if values.is_empty() {
        return Err(Error::parse(FMT, "record", "no epochs"));
    }
    RegressorSeries::new(values, mask, kind)
}

pub fn format_voxel_csv(results: &[VoxelTestResult]) -> String {
    let mut out = String::from("voxel,f,df1,df2,p,significant\n");
    for (v, t) in results.iter().enumerate() {
        let _ = writeln!(out, "{v},{:e},{},{},{:e},{}", t.f_stat, t.df.0, t.df.1, t.p_value, t.significant);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interior_gap_is_midpoint() {
        let s = delta_regressor(&EpochFactor::Diagonal(vec![1.0, 4.0]), &[1]).unwrap();
        assert_eq!(s.values, vec![1.0, 2.5, 4.0]);
        assert_eq!(s.interpolated_mask, vec![false, true, false]);
    }

    #[test]
    fn boundary_gap_copies() {
        let s = delta_regressor(&EpochFactor::Diagonal(vec![3.0, 5.0]), &[0]).unwrap();
        assert_eq!(s.values, vec![3.0, 3.0, 5.0]);
        let s = delta_regressor(&EpochFactor::Diagonal(vec![3.0, 5.0]), &[2, 3]).unwrap();
        assert_eq!(s.values, vec![3.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn no_removal_is_identity_and_all_removed_fails() {
        let d = vec![0.5, 2.0, 1.5];
        let s = delta_regressor(&EpochFactor::Diagonal(d.clone()), &[]).unwrap();
        assert_eq!(s.values, d);
        assert!(s.interpolated_mask.iter().all(|m| !m));
        assert!(delta_regressor(&EpochFactor::Diagonal(vec![]), &[0, 1]).is_err());
        assert!(delta_regressor(&EpochFactor::Diagonal(vec![1.0]), &[5]).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_fdr(&[0.001, 0.02, 0.04, 0.9], 0.05).unwrap(), vec![true, true, false, false]);
        assert_eq!(bh_fdr(&[1.0, 1.0], 0.05).unwrap(), vec![false, false]);
        assert_eq!(bh_fdr(&[0.05], 0.05).unwrap(), vec![true]);
        assert!(bh_fdr(&[], 0.05).unwrap().is_empty());
        assert!(bh_fdr(&[1.5], 0.05).is_err());
    }

    #[test]
    fn f_tail_matches_known_values() {
        // F(1, d2) with F = t^2 has the two-sided t tail; t_{0.975, 10} = 2.228139.
        assert_relative_eq!(f_upper_tail(2.228_138_851_986_274f64.powi(2), 1, 10), 0.05, epsilon = 1e-8);
        // F(2, d2) has the closed form (1 + 2f/d2)^(-d2/2).
        assert_relative_eq!(f_upper_tail(5.0, 2, 10), (1.0f64 + 1.0).powf(-5.0), epsilon = 1e-12);
    }

    #[test]
    fn shifted_columns_zero_pad() {
        let s = RegressorSeries::new(vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0], vec![false; 6], RegressorKind::Other).unwrap();
        let d = build_design(&s, &[0, 1], &Confounders::none(6)).unwrap();
        assert_eq!(d.matrix.column(2).as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0, 0.5]);
        assert_eq!(d.interest_columns(), vec![1, 2]);
    }

    #[test]
    fn duplicate_confounder_is_rank_deficient() {
        let s = RegressorSeries::new(vec![1.0, 2.0, 0.0, 4.0, 1.0], vec![false; 5], RegressorKind::Other).unwrap();
        let conf = Confounders {
            names: vec!["copy".into()],
            matrix: DMatrix::from_column_slice(5, 1, &s.values),
        };
        match build_design(&s, &[0], &conf) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["interest[lag=0]".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn f_statistic_from_rss() {
        // y orthogonal to the intercept: RSS0 = |y|^2, and the interest
        // column picks up exactly half of it.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 0.0, 1.0, 0.0]);
        let y = [1.0, -1.0, 1.0, -1.0];
        let res = partial_f_test(&y, &x, &[1]).unwrap();
        let rss0: f64 = 4.0;
        let rss1 = rss0 - 2.0;
        assert_relative_eq!(res.f_stat, (rss0 - rss1) / (rss1 / 2.0), epsilon = 1e-12);
        assert_eq!(res.df, (1, 2));
    }

    #[test]
    fn perfect_fit_flagged() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let res = partial_f_test(&[1.0, 3.0, 5.0], &x, &[1]).unwrap();
        assert!(res.perfect_fit);
        assert_eq!(res.p_value, 0.0);
    }

    #[test]
    fn flat_spectrum_for_identity() {
        let (f, p) = spectrum_from_psi(&ToeplitzFactor::identity(5), 90.0).unwrap();
        assert_eq!(f.len(), 5);
        assert_relative_eq!(f[1], 10.0, epsilon = 1e-12);
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn csv_round_trips() {
        let s = delta_regressor(&EpochFactor::Diagonal(vec![1.0, 0.1 + 0.2]), &[1]).unwrap();
        let back = parse_regressor(&format_regressor(&s), RegressorKind::Delta).unwrap();
        assert_eq!(back, s);
        assert!(parse_regressor("epoch,value\n0,1\n", RegressorKind::Other).is_err());
        assert!(parse_regressor("epoch,value,interpolated\n1,1,false\n", RegressorKind::Other).is_err());

        let c = parse_confounders("motion,heart\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(c.names, vec!["motion", "heart"]);
        assert_eq!(c.matrix[(2, 1)], 6.0);
        let c = parse_confounders("1,2\n3,4\n").unwrap();
        assert_eq!(c.names, vec!["c1", "c2"]);
        assert!(parse_confounders("a,b\n1\n").is_err());
        assert!(parse_confounders("").is_err());
    }
}
