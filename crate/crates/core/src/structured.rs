//! Structured covariance factors (Toeplitz, circulant, persymmetric,
//! diagonal) and their closed-form estimators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::RootInverse;

const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric Toeplitz matrix given by its first row `(psi_0, ..., psi_{q-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzFactor {
    first_row: Vec<f64>,
}

impl ToeplitzFactor {
    /// Builds a Toeplitz factor and checks that it is positive definite.
    pub fn new(first_row: Vec<f64>) -> Result<Self> {
        let t = Self::new_unchecked(first_row)?;
        match pd_check(&t.to_matrix())? {
            PdStatus::Pd => Ok(t),
            PdStatus::NotPd { index, pivot } => Err(Error::not_pd("Toeplitz factor", index, pivot)),
        }
    }

    pub(crate) fn new_unchecked(first_row: Vec<f64>) -> Result<Self> {
        if first_row.is_empty() {
            return Err(Error::InvalidArgument("Toeplitz first row is empty".into()));
        }
        if first_row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Toeplitz entry".into()));
        }
        Ok(ToeplitzFactor { first_row })
    }

    pub fn identity(q: usize) -> Self {
        let mut row = vec![0.0; q];
        row[0] = 1.0;
        ToeplitzFactor { first_row: row }
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    pub fn dim(&self) -> usize {
        self.first_row.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let q = self.dim();
        DMatrix::from_fn(q, q, |a, b| self.first_row[a.abs_diff(b)])
    }

    pub fn scaled(&self, s: f64) -> Self {
        ToeplitzFactor {
            first_row: self.first_row.iter().map(|v| v * s).collect(),
        }
    }
}

/// Symmetric circulant matrix given by its first column `(c_0, ..., c_{l-1})`
/// with `c_m = c_{l-m}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CirculantExtension {
    first_col: Vec<f64>,
}

impl CirculantExtension {
    pub fn new(first_col: Vec<f64>) -> Result<Self> {
        let l = first_col.len();
        if l == 0 {
            return Err(Error::InvalidArgument("empty circulant".into()));
        }
        let scale = first_col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for m in 1..l {
            if (first_col[m] - first_col[l - m]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "circulant first column is not symmetric at lag {m}"
                )));
            }
        }
        Ok(CirculantExtension { first_col })
    }

    pub fn identity(l: usize) -> Self {
        let mut col = vec![0.0; l];
        col[0] = 1.0;
        CirculantExtension { first_col: col }
    }

    pub fn l(&self) -> usize {
        self.first_col.len()
    }

    pub fn first_col(&self) -> &[f64] {
        &self.first_col
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let l = self.l();
        DMatrix::from_fn(l, l, |i, j| self.first_col[(i + l - j) % l])
    }

    /// Eigenvalues: the real DFT of the first column, index `k = 0..l`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let l = self.l();
        (0..l)
            .map(|k| {
                self.first_col
                    .iter()
                    .enumerate()
                    .map(|(m, c)| {
                        let phase = 2.0 * std::f64::consts::PI * ((k * m) % l) as f64 / l as f64;
                        c * phase.cos()
                    })
                    .sum()
            })
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn is_pd(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// Upper-left `q x q` block as a Toeplitz factor (not checked for PD).
    pub fn upper_block(&self, q: usize) -> ToeplitzFactor {
        ToeplitzFactor {
            first_row: self.first_col[..q].to_vec(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        CirculantExtension {
            first_col: self.first_col.iter().map(|v| v * s).collect(),
        }
    }
}

/// Places a Toeplitz matrix as the upper-left block of an `l x l` circulant.
///
/// The result need not be positive definite.
pub fn embed_toeplitz(t: &ToeplitzFactor, l: usize) -> Result<CirculantExtension> {
    let q = t.dim();
    if l < 2 * q - 1 {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {l} is below 2q-1 = {}",
            2 * q - 1
        )));
    }
    let mut col = vec![0.0; l];
    for m in 0..l {
        let lag = m.min(l - m);
        if lag < q {
            col[m] = t.first_row[lag];
        }
    }
    Ok(CirculantExtension { first_col: col })
}

/// Maximum-likelihood circulant covariance: `c_u` is the average of the
/// entries of `s_hat` on the cyclic diagonal `(i - j) = u mod l`.
pub fn circulant_mle(s_hat: &DMatrix<f64>) -> Result<CirculantExtension> {
    check_square(s_hat)?;
    check_symmetric(s_hat)?;
    let l = s_hat.nrows();
    let mut col = vec![0.0; l];
    for j in 0..l {
        for i in 0..l {
            col[(i + l - j) % l] += s_hat[(i, j)];
        }
    }
    for v in &mut col {
        *v /= l as f64;
    }
    // Symmetric input gives c_u = c_{l-u} up to rounding; make it exact.
    for m in 1..l.div_ceil(2) {
        let avg = 0.5 * (col[m] + col[l - m]);
        col[m] = avg;
        col[l - m] = avg;
    }
    Ok(CirculantExtension { first_col: col })
}

/// Frobenius-orthogonal projection onto persymmetric matrices,
/// `(S + J S J) / 2`.
pub fn persym_project(s_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(s_hat)?;
    check_symmetric(s_hat)?;
    let q = s_hat.nrows();
    let mut out = DMatrix::zeros(q, q);
    for j in 0..q {
        for i in 0..q {
            out[(i, j)] = 0.5 * (s_hat[(i, j)] + s_hat[(q - 1 - i, q - 1 - j)]);
        }
    }
    Ok(out)
}

/// Sum of each superdiagonal: `G_j(A) = sum_{i=0}^{q-1-j} A(i, i+j)`.
pub fn subdiag_sums(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(a)?;
    let q = a.nrows();
    Ok((0..q)
        .map(|j| (0..q - j).map(|i| a[(i, i + j)]).sum())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PdStatus {
    Pd,
    /// Cholesky broke down at `index` with the given (non-positive) pivot.
    NotPd { index: usize, pivot: f64 },
}

impl PdStatus {
    pub fn is_pd(&self) -> bool {
        matches!(self, PdStatus::Pd)
    }
}

/// Positive-definiteness test by Cholesky; reports the first failing pivot.
pub fn pd_check(m: &DMatrix<f64>) -> Result<PdStatus> {
    check_square(m)?;
    check_symmetric(m)?;
    let q = m.nrows();
    let mut l = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Ok(PdStatus::NotPd { index: j, pivot });
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        for i in j + 1..q {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(PdStatus::Pd)
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", m.shape())));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

pub(crate) fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match nalgebra::Cholesky::new(m.clone()) {
        Some(c) => Ok(c.l()),
        None => {
            let (index, pivot) = match pd_check(m)? {
                PdStatus::NotPd { index, pivot } => (index, pivot),
                // nalgebra and the reference recursion disagree only at the edge.
                PdStatus::Pd => (0, 0.0),
            };
            Err(Error::not_pd(what, index, pivot))
        }
    }
}

fn log_det_lower(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Spatial factor `Gamma`, a `p x p` symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFactor(pub DMatrix<f64>);

impl SpatialFactor {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        check_symmetric(&m)?;
        Ok(SpatialFactor(m))
    }

    pub fn identity(p: usize) -> Self {
        SpatialFactor(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub(crate) fn root_inverse(&self, what: &str) -> Result<RootInverse> {
        Ok(RootInverse::Lower(cholesky_lower(&self.0, what)?))
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(log_det_lower(&cholesky_lower(&self.0, "gamma")?))
    }
}

/// Temporal factor `Psi` under one of the three structural assumptions.
#[derive(Clone, Debug, PartialEq)]
pub enum TemporalFactor {
    Toeplitz(ToeplitzFactor),
    Persymmetric(DMatrix<f64>),
    Unrestricted(DMatrix<f64>),
}

impl TemporalFactor {
    pub fn dim(&self) -> usize {
        match self {
            TemporalFactor::Toeplitz(t) => t.dim(),
            TemporalFactor::Persymmetric(m) | TemporalFactor::Unrestricted(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            TemporalFactor::Toeplitz(t) => t.to_matrix(),
            TemporalFactor::Persymmetric(m) | TemporalFactor::Unrestricted(m) => m.clone(),
        }
    }

    pub fn leading(&self) -> f64 {
        match self {
            TemporalFactor::Toeplitz(t) => t.first_row[0],
            TemporalFactor::Persymmetric(m) | TemporalFactor::Unrestricted(m) => m[(0, 0)],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            TemporalFactor::Toeplitz(t) => TemporalFactor::Toeplitz(t.scaled(s)),
            TemporalFactor::Persymmetric(m) => TemporalFactor::Persymmetric(m * s),
            TemporalFactor::Unrestricted(m) => TemporalFactor::Unrestricted(m * s),
        }
    }

    pub(crate) fn root_inverse(&self, what: &str) -> Result<RootInverse> {
        Ok(RootInverse::Lower(cholesky_lower(&self.to_matrix(), what)?))
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(log_det_lower(&cholesky_lower(&self.to_matrix(), "psi")?))
    }
}

/// Epoch factor `Delta`.
#[derive(Clone, Debug, PartialEq)]
pub enum EpochFactor {
    Identity(usize),
    Diagonal(Vec<f64>),
    Unrestricted(DMatrix<f64>),
}

impl EpochFactor {
    pub fn dim(&self) -> usize {
        match self {
            EpochFactor::Identity(r) => *r,
            EpochFactor::Diagonal(d) => d.len(),
            EpochFactor::Unrestricted(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            EpochFactor::Identity(r) => DMatrix::identity(*r, *r),
            EpochFactor::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            EpochFactor::Unrestricted(m) => m.clone(),
        }
    }

    /// Diagonal entries for every representation.
    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            EpochFactor::Identity(r) => vec![1.0; *r],
            EpochFactor::Diagonal(d) => d.clone(),
            EpochFactor::Unrestricted(m) => m.diagonal().iter().copied().collect(),
        }
    }

    pub fn leading(&self) -> f64 {
        match self {
            EpochFactor::Identity(_) => 1.0,
            EpochFactor::Diagonal(d) => d[0],
            EpochFactor::Unrestricted(m) => m[(0, 0)],
        }
    }

    /// Scales the factor; identity stays identity only for `s == 1`.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            EpochFactor::Identity(r) if s == 1.0 => EpochFactor::Identity(*r),
            EpochFactor::Identity(r) => EpochFactor::Diagonal(vec![s; *r]),
            EpochFactor::Diagonal(d) => EpochFactor::Diagonal(d.iter().map(|v| v * s).collect()),
            EpochFactor::Unrestricted(m) => EpochFactor::Unrestricted(m * s),
        }
    }

    /// Restriction to the rows and columns in `subset`.
    pub fn restrict(&self, subset: &[usize]) -> Result<EpochFactor> {
        let r = self.dim();
        if let Some(&bad) = subset.iter().find(|&&d| d >= r) {
            return Err(Error::InvalidArgument(format!("epoch {bad} out of range for r={r}")));
        }
        Ok(match self {
            EpochFactor::Identity(_) => EpochFactor::Identity(subset.len()),
            EpochFactor::Diagonal(d) => EpochFactor::Diagonal(subset.iter().map(|&i| d[i]).collect()),
            EpochFactor::Unrestricted(m) => {
                EpochFactor::Unrestricted(DMatrix::from_fn(subset.len(), subset.len(), |a, b| {
                    m[(subset[a], subset[b])]
                }))
            }
        })
    }

    pub(crate) fn root_inverse(&self, what: &str) -> Result<RootInverse> {
        match self {
            EpochFactor::Identity(_) => Ok(RootInverse::Identity),
            EpochFactor::Diagonal(d) => {
                if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(Error::not_pd(what, i, v));
                }
                Ok(RootInverse::Diagonal(d.iter().map(|v| 1.0 / v.sqrt()).collect()))
            }
            EpochFactor::Unrestricted(m) => Ok(RootInverse::Lower(cholesky_lower(m, what)?)),
        }
    }

    pub fn log_det(&self) -> Result<f64> {
        match self {
            EpochFactor::Identity(_) => Ok(0.0),
            EpochFactor::Diagonal(d) => {
                if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(Error::not_pd("delta", i, v));
                }
                Ok(d.iter().map(|v| v.ln()).sum())
            }
            EpochFactor::Unrestricted(m) => Ok(log_det_lower(&cholesky_lower(m, "delta")?)),
        }
    }
}

/// The three Kronecker factors of `Delta (x) Psi (x) Gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet {
    pub gamma: SpatialFactor,
    pub psi: TemporalFactor,
    pub delta: EpochFactor,
}

impl FactorSet {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.gamma.dim(), self.psi.dim(), self.delta.dim())
    }

    /// Dense `(Gamma, Psi, Delta)`.
    pub fn dense(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.gamma.0.clone(), self.psi.to_matrix(), self.delta.to_matrix())
    }

    /// Checks each factor for positive definiteness.
    pub fn check_pd(&self) -> Result<()> {
        let (g, s, d) = self.dense();
        for (name, m) in [("gamma", g), ("psi", s), ("delta", d)] {
            if let PdStatus::NotPd { index, pivot } = pd_check(&m)? {
                return Err(Error::not_pd(name, index, pivot));
            }
        }
        Ok(())
    }

    /// Rescales so that `Gamma(1,1) = Delta(1,1) = 1`, moving the scale into
    /// `Psi`. The Kronecker product is unchanged.
    pub fn normalize(&self) -> Result<FactorSet> {
        let g11 = self.gamma.0[(0, 0)];
        let d11 = self.delta.leading();
        if !(g11 > 0.0) || !(d11 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize with Gamma(1,1)={g11}, Delta(1,1)={d11}"
            )));
        }
        Ok(FactorSet {
            gamma: SpatialFactor(&self.gamma.0 / g11),
            psi: self.psi.scaled(g11 * d11),
            delta: self.delta.scaled(1.0 / d11),
        })
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.gamma.0[(0, 0)] - 1.0).abs() <= tol && (self.delta.leading() - 1.0).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_mirror_rule() {
        let t = ToeplitzFactor::new_unchecked(vec![2.0, 0.5]).unwrap();
        assert_eq!(embed_toeplitz(&t, 3).unwrap().first_col(), &[2.0, 0.5, 0.5]);
        let t = ToeplitzFactor::new_unchecked(vec![3.0, 2.0, 1.0]).unwrap();
        assert_eq!(embed_toeplitz(&t, 5).unwrap().first_col(), &[3.0, 2.0, 1.0, 1.0, 2.0]);
        assert_eq!(
            embed_toeplitz(&ToeplitzFactor::identity(3), 8).unwrap(),
            CirculantExtension::identity(8)
        );
        assert!(embed_toeplitz(&t, 4).is_err());
    }

    #[test]
    fn embed_upper_block_reproduces() {
        let t = ToeplitzFactor::new(vec![4.0, 1.0, -0.5, 0.25]).unwrap();
        for l in [7, 8, 11] {
            let c = embed_toeplitz(&t, l).unwrap();
            assert_eq!(c.upper_block(4), t);
            let m = c.to_matrix();
            assert_eq!(m.view((0, 0), (4, 4)).into_owned(), t.to_matrix());
        }
    }

    #[test]
    fn circulant_mle_examples() {
        let c = circulant_mle(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(c.first_col(), &[1.0, 0.0, 0.0]);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(circulant_mle(&s).unwrap().first_col(), &[2.0, 1.0]);
    }

    #[test]
    fn persym_examples() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(
            persym_project(&s).unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.5, 2.0, 2.0, 2.5])
        );
        let t = ToeplitzFactor::new(vec![3.0, 1.0, 0.5]).unwrap().to_matrix();
        assert_eq!(persym_project(&t).unwrap(), t);
    }

    #[test]
    fn subdiag_examples() {
        assert_eq!(subdiag_sums(&DMatrix::identity(3, 3)).unwrap(), vec![3.0, 0.0, 0.0]);
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        assert_eq!(subdiag_sums(&a).unwrap(), vec![11.0, 7.0, 3.0]);
        assert_eq!(subdiag_sums(&DMatrix::zeros(4, 4)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn pd_examples() {
        assert!(pd_check(&DMatrix::identity(5, 5)).unwrap().is_pd());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match pd_check(&bad).unwrap() {
            PdStatus::NotPd { index, pivot } => {
                assert_eq!(index, 1);
                assert!(pivot < 0.0);
            }
            PdStatus::Pd => panic!("expected not pd"),
        }
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(pd_check(&good).unwrap().is_pd());
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(pd_check(&asym), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn normalize_transfers_scale() {
        let f = FactorSet {
            gamma: SpatialFactor(DMatrix::identity(2, 2) * 2.0),
            psi: TemporalFactor::Toeplitz(ToeplitzFactor::identity(3)),
            delta: EpochFactor::Diagonal(vec![3.0; 2]),
        };
        let n = f.normalize().unwrap();
        assert_eq!(n.gamma.0, DMatrix::identity(2, 2));
        assert_eq!(n.psi.to_matrix(), DMatrix::identity(3, 3) * 6.0);
        assert_eq!(n.delta, EpochFactor::Diagonal(vec![1.0; 2]));
        assert_eq!(n.normalize().unwrap(), n);
    }

    #[test]
    fn restrict_picks_rows_and_cols() {
        let m = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let e = EpochFactor::Unrestricted(m);
        let r = e.restrict(&[0, 2]).unwrap();
        assert_eq!(r.to_matrix(), DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 6.0, 8.0]));
        assert!(e.restrict(&[3]).is_err());
    }
}
