//! Dense materialized-Kronecker oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use kroncov::{Dims, EpochFactor, FactorSet, SpatialFactor, TemporalFactor, ToeplitzFactor, TrialTensor};

pub fn random_tensor(dims: Dims, rng: &mut ChaCha20Rng) -> TrialTensor {
    let len = dims.total_len().unwrap();
    TrialTensor::new(dims, (0..len).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn random_spd(n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut m = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
    m.fill_upper_triangle_with_lower_triangle();
    m
}

/// Diagonally dominant, hence positive definite, Toeplitz factor.
pub fn random_toeplitz(q: usize, rng: &mut ChaCha20Rng) -> ToeplitzFactor {
    let mut row: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    row[0] = 0.5 + row[1..].iter().map(|v| 2.0 * v.abs()).sum::<f64>();
    ToeplitzFactor::new(row).unwrap()
}

pub fn random_factors(p: usize, q: usize, r: usize, rng: &mut ChaCha20Rng) -> FactorSet {
    FactorSet {
        gamma: SpatialFactor::new(random_spd(p, rng)).unwrap(),
        psi: TemporalFactor::Toeplitz(random_toeplitz(q, rng)),
        delta: EpochFactor::Diagonal((0..r).map(|_| rng.random_range(0.5..3.0)).collect()),
    }
}

/// `Delta (x) Psi (x) Gamma`, matching the channel-fastest vectorization.
pub fn dense_kron(f: &FactorSet) -> DMatrix<f64> {
    let (g, s, d) = f.dense();
    d.kronecker(&s.kronecker(&g))
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// `X_k` as a `p x qr` matrix with column `j + q d`.
fn x_unfold(t: &TrialTensor, k: usize) -> DMatrix<f64> {
    let Dims { p, q, r, .. } = t.dims();
    DMatrix::from_column_slice(p, q * r, t.sample(k))
}

/// `Z_k` as an `r x pq` matrix with column `i + p j`.
fn z_unfold(t: &TrialTensor, k: usize) -> DMatrix<f64> {
    let Dims { p, q, r, .. } = t.dims();
    DMatrix::from_column_slice(p * q, r, t.sample(k)).transpose()
}

pub fn dense_gamma_update(t: &TrialTensor, psi: &DMatrix<f64>, delta: &DMatrix<f64>) -> DMatrix<f64> {
    let Dims { p, q, r, n } = t.dims();
    let w = delta.kronecker(psi).try_inverse().unwrap();
    let mut acc = DMatrix::zeros(p, p);
    for k in 0..n {
        let x = x_unfold(t, k);
        acc += &x * &w * x.transpose();
    }
    acc / (n * q * r) as f64
}

pub fn dense_delta_update(t: &TrialTensor, gamma: &DMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let Dims { p, q, r, n } = t.dims();
    let w = psi.kronecker(gamma).try_inverse().unwrap();
    let mut acc = DMatrix::zeros(r, r);
    for k in 0..n {
        let z = z_unfold(t, k);
        acc += &z * &w * z.transpose();
    }
    acc / (n * p * q) as f64
}

pub fn dense_loglik(t: &TrialTensor, f: &FactorSet) -> f64 {
    let k = dense_kron(f);
    let dim = k.nrows() as f64;
    let chol = k.clone().cholesky().unwrap();
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let n = t.dims().n;
    let quad: f64 = (0..n)
        .map(|s| {
            let x = DVector::from_column_slice(t.sample(s));
            (x.transpose() * &inv * &x)[(0, 0)]
        })
        .sum();
    -0.5 * (n as f64 * (dim * (2.0 * std::f64::consts::PI).ln() + log_det) + quad)
}

pub fn dense_mse(est: &FactorSet, truth: &FactorSet) -> f64 {
    let (a, b) = (dense_kron(est), dense_kron(truth));
    (&a - &b).norm_squared() / b.norm_squared()
}

pub fn dense_validation(sub: &FactorSet, full: &FactorSet, subset: &[usize]) -> f64 {
    let restricted = FactorSet {
        gamma: full.gamma.clone(),
        psi: full.psi.clone(),
        delta: full.delta.restrict(subset).unwrap(),
    };
    dense_mse(sub, &restricted)
}

/// `-(log det C + tr(C^-1 S))` for the symmetric circulant with first
/// column `col`; `None` when it is not positive definite.
pub fn circulant_loglik(col: &[f64], s: &DMatrix<f64>) -> Option<f64> {
    let l = col.len();
    let c = DMatrix::from_fn(l, l, |i, j| col[(l + i - j) % l]);
    let chol = c.cholesky()?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-(log_det + (chol.inverse() * s).trace()))
}
