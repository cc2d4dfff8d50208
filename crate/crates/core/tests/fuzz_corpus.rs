//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so the seeds stay meaningful on a stable toolchain.

use std::fs;
use std::path::PathBuf;

use kroncov::format::fitdir::FitSummary;
use kroncov::format::{kcf, kct};
use kroncov::glm::{format_regressor, parse_confounders, parse_regressor, RegressorKind};
use kroncov::simulator::StudyConfigFile;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

/// Runs `check` on every seed and returns how many were accepted.
fn replay(target: &str, check: impl Fn(&[u8]) -> bool) -> usize {
    seeds(target).iter().filter(|(_, bytes)| check(bytes)).count()
}

fn text(bytes: &[u8]) -> Option<&str> {
    std::str::from_utf8(bytes).ok()
}

#[test]
fn kct_seeds() {
    let accepted = replay("kct_decode", |b| match kct::decode(b) {
        Ok(t) => {
            assert_eq!(kct::decode(&kct::encode(&t).unwrap()).unwrap(), t);
            true
        }
        Err(_) => false,
    });
    assert_eq!(accepted, 2);
}

#[test]
fn kcf_seeds() {
    let accepted = replay("kcf_parse", |b| match text(b).map(kcf::parse) {
        Some(Ok(f)) => {
            assert_eq!(kcf::parse(&kcf::format(&f)).unwrap(), f);
            true
        }
        _ => false,
    });
    assert_eq!(accepted, 4);
}

#[test]
fn study_config_seeds() {
    let accepted = replay("study_config_parse", |b| text(b).is_some_and(|t| StudyConfigFile::from_json_str(t).is_ok()));
    assert_eq!(accepted, 2);
}

#[test]
fn confounder_seeds() {
    let accepted = replay("confounder_csv_parse", |b| match text(b).map(parse_confounders) {
        Some(Ok(c)) => {
            assert_eq!(c.names.len(), c.matrix.ncols());
            true
        }
        _ => false,
    });
    assert_eq!(accepted, 2);
}

#[test]
fn regressor_seeds() {
    let accepted = replay("regressor_csv_parse", |b| match text(b).map(|t| parse_regressor(t, RegressorKind::Other)) {
        Some(Ok(s)) => {
            let again = parse_regressor(&format_regressor(&s), RegressorKind::Other).unwrap();
            assert_eq!(again.values, s.values);
            true
        }
        _ => false,
    });
    assert_eq!(accepted, 2);
}

#[test]
fn fit_summary_seeds() {
    let accepted = replay("fit_summary_parse", |b| serde_json::from_slice::<FitSummary>(b).is_ok());
    assert_eq!(accepted, 2);
}
