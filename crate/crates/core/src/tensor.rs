//! Trial tensors, their three matrix unfoldings, and mode-wise whitening.
//!
//! One sample `X_k` is a `p x q x r` array (channels x time x epochs) stored
//! channel-fastest: element `(i, j, d)` of sample `k` lives at
//! `i + p*j + p*q*d + p*q*r*k`. This is the column-stacking order of
//! `vec(X_k)` whose covariance is `Delta (x) Psi (x) Gamma`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::structured::{EpochFactor, SpatialFactor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub n: usize,
}

impl Dims {
    pub fn new(p: usize, q: usize, r: usize, n: usize) -> Self {
        Dims { p, q, r, n }
    }

    pub fn sample_len(&self) -> usize {
        self.p * self.q * self.r
    }

    pub fn total_len(&self) -> Option<usize> {
        self.p
            .checked_mul(self.q)?
            .checked_mul(self.r)?
            .checked_mul(self.n)
    }
}

/// `n` independent samples, each a `p x q x r` array.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialTensor {
    dims: Dims,
    values: Vec<f64>,
}

impl TrialTensor {
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if dims.p == 0 || dims.q == 0 || dims.r == 0 || dims.n == 0 {
            return Err(Error::Dimension(format!(
                "all dimensions must be positive, got {dims:?}"
            )));
        }
        let expected = dims
            .total_len()
            .ok_or_else(|| Error::Dimension("tensor size overflows".into()))?;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} values for {dims:?}, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at element {pos}"
            )));
        }
        Ok(TrialTensor { dims, values })
    }

    pub fn zeros(dims: Dims) -> Self {
        let len = dims.total_len().expect("tensor size overflows");
        TrialTensor {
            dims,
            values: vec![0.0; len],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, d: usize, k: usize) -> usize {
        let Dims { p, q, r, .. } = self.dims;
        i + p * (j + q * (d + r * k))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, d: usize, k: usize) -> f64 {
        self.values[self.index(i, j, d, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, d: usize, k: usize, v: f64) {
        let idx = self.index(i, j, d, k);
        self.values[idx] = v;
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let len = self.dims.sample_len();
        &self.values[k * len..(k + 1) * len]
    }

    pub fn sample_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.dims.sample_len();
        &mut self.values[k * len..(k + 1) * len]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Keeps only the listed epochs, in the given order.
    pub fn select_epochs(&self, epochs: &[usize]) -> Result<TrialTensor> {
        let Dims { p, q, r, n } = self.dims;
        if epochs.is_empty() {
            return Err(Error::InvalidArgument("empty epoch selection".into()));
        }
        if let Some(&bad) = epochs.iter().find(|&&d| d >= r) {
            return Err(Error::InvalidArgument(format!(
                "epoch index {bad} out of range for r={r}"
            )));
        }
        let block = p * q;
        let mut values = Vec::with_capacity(block * epochs.len() * n);
        for k in 0..n {
            let s = self.sample(k);
            for &d in epochs {
                values.extend_from_slice(&s[d * block..(d + 1) * block]);
            }
        }
        TrialTensor::new(Dims::new(p, q, epochs.len(), n), values)
    }

    pub fn scaled(&self, s: f64) -> TrialTensor {
        TrialTensor {
            dims: self.dims,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnfoldKind {
    /// `p x qr`: channels by (time, epoch).
    X,
    /// `q x pr`: time by (channel, epoch).
    Y,
    /// `r x pq`: epochs by (channel, time).
    Z,
}

impl UnfoldKind {
    fn mode(self) -> usize {
        match self {
            UnfoldKind::X => 0,
            UnfoldKind::Y => 1,
            UnfoldKind::Z => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unfolding {
    pub kind: UnfoldKind,
    pub matrix: DMatrix<f64>,
}

/// Matrix unfolding of sample `k` (zero-based).
///
/// `Y(j, p*d + i) = Z(d, p*j + i) = X^(d)(i, j)`.
pub fn unfold(t: &TrialTensor, k: usize, kind: UnfoldKind) -> Result<Unfolding> {
    if k >= t.dims.n {
        return Err(Error::InvalidArgument(format!(
            "sample index {k} out of range for n={}",
            t.dims.n
        )));
    }
    let Dims { p, q, r, .. } = t.dims;
    Ok(Unfolding {
        kind,
        matrix: unfold_slice(t.sample(k), p, q, r, kind.mode()),
    })
}

/// Inverse of [`unfold`]: rebuilds a tensor from one unfolding per sample.
pub fn refold(parts: &[Unfolding], p: usize, q: usize, r: usize) -> Result<TrialTensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("no unfoldings to refold".into()));
    }
    let dims = Dims::new(p, q, r, parts.len());
    let mut t = TrialTensor::zeros(dims);
    for (k, u) in parts.iter().enumerate() {
        let shape = match u.kind {
            UnfoldKind::X => (p, q * r),
            UnfoldKind::Y => (q, p * r),
            UnfoldKind::Z => (r, p * q),
        };
        if u.matrix.shape() != shape {
            return Err(Error::Dimension(format!(
                "unfolding {k} has shape {:?}, expected {shape:?}",
                u.matrix.shape()
            )));
        }
        fold_slice(&u.matrix, t.sample_mut(k), p, q, r, u.kind.mode());
    }
    Ok(t)
}

/// Length and stride of the fibres along `mode` for a `p x q x r` sample.
#[inline]
fn mode_geometry(p: usize, q: usize, r: usize, mode: usize) -> (usize, usize) {
    match mode {
        0 => (p, 1),
        1 => (q, p),
        2 => (r, p * q),
        _ => unreachable!("mode must be 0, 1 or 2"),
    }
}

/// Unfolding of one sample along `mode`; columns run over the remaining
/// indices with the lower index fastest.
pub(crate) fn unfold_slice(x: &[f64], p: usize, q: usize, r: usize, mode: usize) -> DMatrix<f64> {
    match mode {
        0 => DMatrix::from_column_slice(p, q * r, x),
        1 => DMatrix::from_fn(q, p * r, |j, c| {
            let (i, d) = (c % p, c / p);
            x[i + p * j + p * q * d]
        }),
        2 => DMatrix::from_fn(r, p * q, |d, c| x[c + p * q * d]),
        _ => unreachable!(),
    }
}

pub(crate) fn fold_slice(m: &DMatrix<f64>, x: &mut [f64], p: usize, q: usize, r: usize, mode: usize) {
    match mode {
        0 => x.copy_from_slice(m.as_slice()),
        1 => {
            for d in 0..r {
                for j in 0..q {
                    for i in 0..p {
                        x[i + p * j + p * q * d] = m[(j, p * d + i)];
                    }
                }
            }
        }
        2 => {
            for d in 0..r {
                for c in 0..p * q {
                    x[c + p * q * d] = m[(d, c)];
                }
            }
        }
        _ => unreachable!(),
    }
}

/// Inverse square-root factor used to whiten one mode: applies `L^{-1}` to
/// every fibre, where `L L^T` is the factor.
#[derive(Clone, Debug)]
pub(crate) enum RootInverse {
    Identity,
    /// Reciprocal square roots of a diagonal factor.
    Diagonal(Vec<f64>),
    /// Lower Cholesky factor.
    Lower(DMatrix<f64>),
}

impl RootInverse {
    /// Applies the whitening in place to each fibre stored in-place in `x`.
    pub(crate) fn apply_mode(&self, x: &mut [f64], p: usize, q: usize, r: usize, mode: usize) {
        match self {
            RootInverse::Identity => {}
            RootInverse::Diagonal(w) => {
                let (len, stride) = mode_geometry(p, q, r, mode);
                debug_assert_eq!(w.len(), len);
                for (idx, v) in x.iter_mut().enumerate() {
                    *v *= w[(idx / stride) % len];
                }
            }
            RootInverse::Lower(l) => {
                let mut m = unfold_slice(x, p, q, r, mode);
                // Cholesky factors have a strictly positive diagonal.
                l.solve_lower_triangular_mut(&mut m);
                fold_slice(&m, x, p, q, r, mode);
            }
        }
    }
}

/// Multiplies every fibre along `mode` by `m` (`x <- m x`).
pub(crate) fn apply_matrix_mode(x: &mut [f64], p: usize, q: usize, r: usize, mode: usize, m: &DMatrix<f64>) {
    let u = unfold_slice(x, p, q, r, mode);
    fold_slice(&(m * u), x, p, q, r, mode);
}

/// Whitens every sample along the modes whose root is given, in the order
/// channels, time, epochs. The modes commute.
pub(crate) fn whiten_modes(
    t: &TrialTensor,
    spatial: Option<&RootInverse>,
    temporal: Option<&RootInverse>,
    epoch: Option<&RootInverse>,
) -> TrialTensor {
    let Dims { p, q, r, n } = t.dims;
    let mut out = t.clone();
    for k in 0..n {
        let x = out.sample_mut(k);
        for (mode, root) in [spatial, temporal, epoch].into_iter().enumerate() {
            if let Some(root) = root {
                root.apply_mode(x, p, q, r, mode);
            }
        }
    }
    out
}

/// Sum over samples of `U_k U_k^T` for the unfolding along `mode`.
pub(crate) fn mode_gram(t: &TrialTensor, mode: usize) -> DMatrix<f64> {
    let Dims { p, q, r, n } = t.dims;
    let (len, _) = mode_geometry(p, q, r, mode);
    let mut acc = DMatrix::zeros(len, len);
    for k in 0..n {
        let u = unfold_slice(t.sample(k), p, q, r, mode);
        acc.gemm(1.0, &u, &u.transpose(), 1.0);
    }
    acc.fill_upper_triangle_with_lower_triangle();
    acc
}

/// Whitens a `Y` unfolding (`q x pr`) so that, under the model, its `pr`
/// columns are independent `N(0, Psi)`.
///
/// Computes `Y W` with `W W^T = (Delta (x) Gamma)^{-1}`; for diagonal `Delta`
/// the factor is `Delta^{-1/2} (x) L_Gamma^{-T}` and acts epoch by epoch.
pub fn whiten_y(y: &Unfolding, gamma: &SpatialFactor, delta: &EpochFactor) -> Result<DMatrix<f64>> {
    if y.kind != UnfoldKind::Y {
        return Err(Error::InvalidArgument("whiten_y expects a Y unfolding".into()));
    }
    let p = gamma.dim();
    let r = delta.dim();
    let q = y.matrix.nrows();
    if y.matrix.ncols() != p * r {
        return Err(Error::Dimension(format!(
            "Y has {} columns, expected p*r = {}",
            y.matrix.ncols(),
            p * r
        )));
    }
    let g = gamma.root_inverse("gamma")?;
    let e = delta.root_inverse("delta")?;
    let mut x = vec![0.0; p * q * r];
    fold_slice(&y.matrix, &mut x, p, q, r, 1);
    g.apply_mode(&mut x, p, q, r, 0);
    e.apply_mode(&mut x, p, q, r, 2);
    Ok(unfold_slice(&x, p, q, r, 1))
}

/// Outcome of the sample-size admissibility test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleSize {
    Admissible,
    /// Smallest admissible `n` as a real number.
    Inadmissible { required: f64 },
}

impl SampleSize {
    pub fn is_admissible(&self) -> bool {
        matches!(self, SampleSize::Admissible)
    }
}

/// `n >= max(p/(qr), ceil(q/2)/(pr))`, evaluated in exact integer arithmetic.
pub fn check_sample_size(p: usize, q: usize, r: usize, n: usize) -> SampleSize {
    let half_q = q.div_ceil(2);
    let ok = n as u128 * q as u128 * r as u128 >= p as u128
        && n as u128 * p as u128 * r as u128 >= half_q as u128;
    if ok {
        SampleSize::Admissible
    } else {
        let required = (p as f64 / (q * r) as f64).max(half_q as f64 / (p * r) as f64);
        SampleSize::Inadmissible { required }
    }
}

fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "cannot take inner product of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

/// `<A1 (x) B1 (x) C1, A2 (x) B2 (x) C2>_F` as the product of the three
/// factor inner products.
pub fn kron_frobenius_inner(
    a1: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    c1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    c2: &DMatrix<f64>,
) -> Result<f64> {
    Ok(frobenius_inner(a1, a2)? * frobenius_inner(b1, b2)? * frobenius_inner(c1, c2)?)
}
