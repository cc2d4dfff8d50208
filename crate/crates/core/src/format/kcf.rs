//! `KCF1` factor files.
//!
//! A header line `KCF1 <kind> <dim>` followed by whitespace-separated
//! values: the first row for `toeplitz`, the diagonal for `diagonal`, none
//! for `identity`, and `dim*dim` row-major entries for `persymmetric` and
//! `dense`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::structured::{
    pd_check, EpochFactor, PdStatus, SpatialFactor, TemporalFactor, ToeplitzFactor,
};

const FORMAT: &str = "KCF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Toeplitz,
    Diagonal,
    Identity,
    Persymmetric,
    Dense,
}

impl FactorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FactorKind::Toeplitz => "toeplitz",
            FactorKind::Diagonal => "diagonal",
            FactorKind::Identity => "identity",
            FactorKind::Persymmetric => "persymmetric",
            FactorKind::Dense => "dense",
        }
    }
}

impl FromStr for FactorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "toeplitz" => FactorKind::Toeplitz,
            "diagonal" => FactorKind::Diagonal,
            "identity" => FactorKind::Identity,
            "persymmetric" => FactorKind::Persymmetric,
            "dense" => FactorKind::Dense,
            other => return Err(Error::parse(FORMAT, "kind", format!("unknown kind `{other}`"))),
        })
    }
}

/// A parsed factor file.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorFile {
    Toeplitz(Vec<f64>),
    Diagonal(Vec<f64>),
    Identity(usize),
    Persymmetric(DMatrix<f64>),
    Dense(DMatrix<f64>),
}

impl FactorFile {
    pub fn kind(&self) -> FactorKind {
        match self {
            FactorFile::Toeplitz(_) => FactorKind::Toeplitz,
            FactorFile::Diagonal(_) => FactorKind::Diagonal,
            FactorFile::Identity(_) => FactorKind::Identity,
            FactorFile::Persymmetric(_) => FactorKind::Persymmetric,
            FactorFile::Dense(_) => FactorKind::Dense,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FactorFile::Toeplitz(v) | FactorFile::Diagonal(v) => v.len(),
            FactorFile::Identity(d) => *d,
            FactorFile::Persymmetric(m) | FactorFile::Dense(m) => m.nrows(),
        }
    }

    pub fn from_spatial(g: &SpatialFactor) -> Self {
        FactorFile::Dense(g.0.clone())
    }

    pub fn from_temporal(t: &TemporalFactor) -> Self {
        match t {
            TemporalFactor::Toeplitz(t) => FactorFile::Toeplitz(t.first_row().to_vec()),
            TemporalFactor::Persymmetric(m) => FactorFile::Persymmetric(m.clone()),
            TemporalFactor::Unrestricted(m) => FactorFile::Dense(m.clone()),
        }
    }

    pub fn from_epoch(e: &EpochFactor) -> Self {
        match e {
            EpochFactor::Identity(r) => FactorFile::Identity(*r),
            EpochFactor::Diagonal(d) => FactorFile::Diagonal(d.clone()),
            EpochFactor::Unrestricted(m) => FactorFile::Dense(m.clone()),
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        match self {
            FactorFile::Toeplitz(v) => DMatrix::from_fn(v.len(), v.len(), |a, b| v[a.abs_diff(b)]),
            FactorFile::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            FactorFile::Identity(d) => DMatrix::identity(*d, *d),
            FactorFile::Persymmetric(m) | FactorFile::Dense(m) => m.clone(),
        }
    }

    fn require_pd(&self, what: &str) -> Result<()> {
        match pd_check(&self.dense())? {
            PdStatus::Pd => Ok(()),
            PdStatus::NotPd { index, pivot } => Err(Error::not_pd(what, index, pivot)),
        }
    }

    /// Interprets the file as a spatial factor; must be positive definite.
    pub fn into_spatial(self) -> Result<SpatialFactor> {
        self.require_pd("gamma")?;
        SpatialFactor::new(self.dense())
    }

    /// Interprets the file as a temporal factor; must be positive definite.
    pub fn into_temporal(self) -> Result<TemporalFactor> {
        self.require_pd("psi")?;
        Ok(match self {
            FactorFile::Toeplitz(v) => TemporalFactor::Toeplitz(ToeplitzFactor::new(v)?),
            FactorFile::Persymmetric(m) => TemporalFactor::Persymmetric(m),
            other => TemporalFactor::Unrestricted(other.dense()),
        })
    }

    /// Interprets the file as an epoch factor; must be positive definite.
    pub fn into_epoch(self) -> Result<EpochFactor> {
        self.require_pd("delta")?;
        Ok(match self {
            FactorFile::Identity(r) => EpochFactor::Identity(r),
            FactorFile::Diagonal(d) => EpochFactor::Diagonal(d),
            other => EpochFactor::Unrestricted(other.dense()),
        })
    }
}

pub fn format(f: &FactorFile) -> String {
    let mut out = format!("{FORMAT} {} {}\n", f.kind().as_str(), f.dim());
    let line = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    match f {
        FactorFile::Toeplitz(v) | FactorFile::Diagonal(v) => {
            out.push_str(&line(&mut v.iter().copied()));
            out.push('\n');
        }
        FactorFile::Identity(_) => {}
        FactorFile::Persymmetric(m) | FactorFile::Dense(m) => {
            for row in m.row_iter() {
                let _ = writeln!(out, "{}", line(&mut row.iter().copied()));
            }
        }
    }
    out
}

pub fn parse(text: &str) -> Result<FactorFile> {
    let mut tokens = text.split_whitespace();
    match tokens.next() {
        Some(FORMAT) => {}
        _ => return Err(Error::parse(FORMAT, "magic", "file must start with `KCF1`")),
    }
    let kind: FactorKind = tokens
        .next()
        .ok_or_else(|| Error::parse(FORMAT, "kind", "missing"))?
        .parse()?;
    let dim: usize = tokens
        .next()
        .ok_or_else(|| Error::parse(FORMAT, "dim", "missing"))?
        .parse()
        .map_err(|_| Error::parse(FORMAT, "dim", "not a non-negative integer"))?;
    if dim == 0 {
        return Err(Error::parse(FORMAT, "dim", "must be positive"));
    }
    let values = tokens
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(FORMAT, "values", format!("bad number `{tok}` at position {i}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let expected = match kind {
        FactorKind::Toeplitz | FactorKind::Diagonal => Some(dim),
        FactorKind::Identity => Some(0),
        FactorKind::Persymmetric | FactorKind::Dense => dim.checked_mul(dim),
    };
    if expected != Some(values.len()) {
        return Err(Error::parse(
            FORMAT,
            "values",
            format!("{} values for kind {} with dim {dim}", values.len(), kind.as_str()),
        ));
    }
    let square = |values: Vec<f64>| -> Result<DMatrix<f64>> {
        let m = DMatrix::from_row_slice(dim, dim, &values);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (&m - m.transpose()).amax() > 1e-10 * scale {
            return Err(Error::parse(FORMAT, "values", "matrix is not symmetric"));
        }
        Ok(m)
    };
    Ok(match kind {
        FactorKind::Toeplitz => FactorFile::Toeplitz(values),
        FactorKind::Diagonal => FactorFile::Diagonal(values),
        FactorKind::Identity => FactorFile::Identity(dim),
        FactorKind::Dense => FactorFile::Dense(square(values)?),
        FactorKind::Persymmetric => {
            let m = square(values)?;
            let scale = m.amax().max(f64::MIN_POSITIVE);
            for i in 0..dim {
                for j in 0..dim {
                    if (m[(i, j)] - m[(dim - 1 - j, dim - 1 - i)]).abs() > 1e-10 * scale {
                        return Err(Error::parse(FORMAT, "values", "matrix is not persymmetric"));
                    }
                }
            }
            FactorFile::Persymmetric(m)
        }
    })
}

pub fn read(path: &Path) -> Result<FactorFile> {
    parse(&std::fs::read_to_string(path)?)
}

pub fn write(path: &Path, f: &FactorFile) -> Result<()> {
    std::fs::write(path, format(f))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toeplitz_round_trip() {
        let f = FactorFile::Toeplitz(vec![1.0, 0.1 + 0.2, -3.5e-8]);
        let text = format(&f);
        assert!(text.starts_with("KCF1 toeplitz 3\n"));
        assert_eq!(parse(&text).unwrap(), f);
    }

    #[test]
    fn dense_round_trip_and_symmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = FactorFile::Dense(m);
        assert_eq!(parse(&format(&f)).unwrap(), f);
        assert!(parse("KCF1 dense 2\n1 2 3 4\n").is_err());
    }

    #[test]
    fn identity_has_no_values() {
        assert_eq!(parse("KCF1 identity 4\n").unwrap(), FactorFile::Identity(4));
        assert!(parse("KCF1 identity 2\n1 1").is_err());
    }

    #[test]
    fn header_errors() {
        assert!(parse("").unwrap_err().to_string().contains("`magic`"));
        assert!(parse("KCF1 banded 2 1 1").unwrap_err().to_string().contains("`kind`"));
        assert!(parse("KCF1 diagonal x 1").unwrap_err().to_string().contains("`dim`"));
        assert!(parse("KCF1 diagonal 2 1").unwrap_err().to_string().contains("`values`"));
        assert!(parse("KCF1 diagonal 2 1 nan").is_err());
        assert!(parse("KCF1 dense 18446744073709551615 1").is_err());
    }

    #[test]
    fn conversions_check_pd() {
        assert!(FactorFile::Diagonal(vec![1.0, -1.0]).into_epoch().is_err());
        assert!(FactorFile::Toeplitz(vec![1.0, 2.0]).into_temporal().is_err());
        let g = FactorFile::Dense(DMatrix::identity(2, 2)).into_spatial().unwrap();
        assert_eq!(g.dim(), 2);
    }
}
