use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kroncov::format::{kcf, kct};
use kroncov::glm::bh_fdr;
use kroncov::rng::stream_rng;
use kroncov::simulator::surrogate_truth;
use kroncov::{Dims, FactorSet, TrialTensor};
use rand::Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

fn kroncov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kroncov")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = kroncov(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_truth(dir: &Path, f: &FactorSet) {
    kcf::write(&dir.join("gamma.kcf"), &kcf::FactorFile::from_spatial(&f.gamma)).unwrap();
    kcf::write(&dir.join("psi.kcf"), &kcf::FactorFile::from_temporal(&f.psi)).unwrap();
    kcf::write(&dir.join("delta.kcf"), &kcf::FactorFile::from_epoch(&f.delta)).unwrap();
}

/// A temp dir holding a 4 x 6 x 24 truth and one simulated dataset with n = 2.
fn setup() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let truth = surrogate_truth(4, 6, 24, 100.0, 10.0, 5).unwrap();
    write_truth(tmp.path(), &truth);
    let data = tmp.path().join("data.kct");
    simulate(tmp.path(), &data, 2, 1);
    (tmp, data)
}

fn simulate(dir: &Path, out: &Path, n: usize, seed: u64) {
    ok(&[
        "simulate",
        "--gamma",
        s(&dir.join("gamma.kcf")),
        "--psi",
        s(&dir.join("psi.kcf")),
        "--delta",
        s(&dir.join("delta.kcf")),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(out),
    ]);
}

fn random_tensor(dims: Dims, seed: u64) -> TrialTensor {
    let mut g = stream_rng(seed, 0);
    let len = dims.total_len().unwrap();
    TrialTensor::new(dims, (0..len).map(|_| g.sample(StandardNormal)).collect()).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_then_fit_writes_fit_dir() {
    let (tmp, data) = setup();
    let t = kct::read(&data).unwrap();
    assert_eq!(t.dims(), Dims::new(4, 6, 24, 2));

    let fit_dir = tmp.path().join("fit");
    let line = ok(&["fit", "--data", s(&data), "--out", s(&fit_dir)]);
    assert!(!line.trim().is_empty());
    for f in ["gamma.kcf", "psi.kcf", "delta.kcf", "fit.json"] {
        assert!(fit_dir.join(f).is_file(), "missing {f}");
    }
    let summary = json(&fit_dir.join("fit.json"));
    assert_eq!(summary["assumptions"], "UTD");

    let eval = ok(&["evaluate", "--fit", s(&fit_dir), "--truth", s(tmp.path())]);
    let eval: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(eval["mse_total"].as_f64().unwrap() > 0.0, "{eval}");
}

#[test]
fn fit_output_is_byte_identical_across_runs() {
    let (tmp, data) = setup();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["fit", "--data", s(&data), "--out", s(&a)]);
    ok(&["--threads", "1", "fit", "--data", s(&data), "--out", s(&b)]);
    for f in ["gamma.kcf", "psi.kcf", "delta.kcf", "fit.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn inadmissible_sample_size_exits_with_input_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("wide.kct");
    kct::write(&data, &random_tensor(Dims::new(100, 4, 2, 1), 3)).unwrap();
    let out = kroncov(&["fit", "--data", s(&data), "--out", s(&tmp.path().join("fit"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sample size") && err.contains("p=100"), "{err}");
}

#[test]
fn mismatched_dims_exit_with_input_error() {
    let (tmp, data) = setup();
    let fit_dir = tmp.path().join("fit");
    ok(&["fit", "--data", s(&data), "--out", s(&fit_dir)]);

    let other = TempDir::new().unwrap();
    write_truth(other.path(), &surrogate_truth(3, 6, 24, 100.0, 10.0, 5).unwrap());
    let out = kroncov(&["evaluate", "--fit", s(&fit_dir), "--truth", s(other.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let bold = tmp.path().join("bold.kct");
    kct::write(&bold, &random_tensor(Dims::new(5, 1, 20, 1), 4)).unwrap();
    let out = kroncov(&["regress", "--fit", s(&fit_dir), "--out", s(&tmp.path().join("reg")), "--bold", s(&bold)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_study(dir: &Path, sets: &[&str], replicates: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "truth": { "gamma": "gamma.kcf", "psi": "psi.kcf", "delta": "delta.kcf" },
        "dims": { "p": 4, "q": 6, "r": 24, "n": 1 },
        "replicates": replicates,
        "assumption_sets": sets,
        "rng_seed": 7,
    });
    let path = dir.join("study.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn study_writes_one_record_per_fit() {
    let (tmp, _) = setup();
    let cfg = write_study(tmp.path(), &["UTD", "UUI"], 2);
    let out = tmp.path().join("study");
    let table = ok(&["study", "--config", s(&cfg), "--out", s(&out)]);
    let report = json(&out.join("study_report.json"));
    assert_eq!(report["records"].as_array().unwrap().len(), 4);
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(out.join("study_table.csv")).unwrap(), table);
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn seed_changes_data_but_not_layout() {
    let (tmp, _) = setup();
    let (a, b) = (tmp.path().join("s1.kct"), tmp.path().join("s2.kct"));
    simulate(tmp.path(), &a, 2, 1);
    simulate(tmp.path(), &b, 2, 2);
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ba.len(), bb.len());
    assert_ne!(ba, bb);
    assert_eq!(kct::read(&a).unwrap().dims(), kct::read(&b).unwrap().dims());

    let cfg = write_study(tmp.path(), &["UTD"], 1);
    let t1 = ok(&["study", "--config", s(&cfg), "--out", s(&tmp.path().join("o1")), "--seed", "1"]);
    let t2 = ok(&["study", "--config", s(&cfg), "--out", s(&tmp.path().join("o2")), "--seed", "2"]);
    assert_eq!(t1.lines().next(), t2.lines().next());
    assert_ne!(t1, t2);
}

#[test]
fn validate_reports_one_value_per_subset() {
    let (tmp, data) = setup();
    let fit_dir = tmp.path().join("fit");
    ok(&["fit", "--data", s(&data), "--out", s(&fit_dir)]);

    let cons = tmp.path().join("cons.json");
    ok(&["validate", "--data", s(&data), "--fit", s(&fit_dir), "--mode", "consecutive", "--out", s(&cons)]);
    assert_eq!(json(&cons)["values"].as_array().unwrap().len(), 4);

    let rand = tmp.path().join("rand.json");
    ok(&[
        "validate", "--data", s(&data), "--fit", s(&fit_dir), "--mode", "random", "--repeats", "10", "--seed", "3",
        "--out", s(&rand),
    ]);
    assert_eq!(json(&rand)["values"].as_array().unwrap().len(), 40);

    let out = kroncov(&["validate", "--data", s(&data), "--fit", s(&fit_dir), "--mode", "random"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regress_significance_matches_bh_on_reported_p_values() {
    let (tmp, data) = setup();
    let fit_dir = tmp.path().join("fit");
    ok(&["fit", "--data", s(&data), "--out", s(&fit_dir)]);

    // 30 voxels; the first 10 follow the delta regressor.
    let delta = kcf::read(&fit_dir.join("delta.kcf")).unwrap().into_epoch().unwrap().to_matrix();
    let mut bold = random_tensor(Dims::new(30, 1, 24, 1), 9);
    for v in 0..10 {
        for d in 0..24 {
            let y = bold.get(v, 0, d, 0) + 3.0 * delta[(d, d)];
            bold.set(v, 0, d, 0, y);
        }
    }
    let bold_path = tmp.path().join("bold.kct");
    kct::write(&bold_path, &bold).unwrap();

    let out = tmp.path().join("reg");
    ok(&[
        "regress", "--fit", s(&fit_dir), "--out", s(&out), "--data", s(&data), "--fs", "100", "--band", "10,20", "--bold", s(&bold_path),
        "--shifts", "0,1", "--fdr", "0.05",
    ]);
    let csv = std::fs::read_to_string(out.join("voxels.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 30);
    let p: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    let flagged: Vec<bool> = rows.iter().map(|r| r[5] == "true").collect();
    assert_eq!(flagged, bh_fdr(&p, 0.05).unwrap());
    let summary = json(&out.join("glm_summary.json"));
    assert_eq!(summary["significant"].as_u64().unwrap() as usize, flagged.iter().filter(|&&f| f).count());
    assert!(out.join("alpha_regressor.csv").is_file());
    assert!(json(&out.join("regressors.json"))["spearman_delta_alpha"].is_number());
}

#[test]
fn spectrum_prints_frequency_table() {
    let (tmp, data) = setup();
    let fit_dir = tmp.path().join("fit");
    ok(&["fit", "--data", s(&data), "--out", s(&fit_dir)]);
    let csv = ok(&["spectrum", "--fit", s(&fit_dir), "--fs", "100"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("frequency_hz,power"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = kroncov(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_flags() {
    let help = ok(&["fit", "--help"]);
    for flag in ["--data", "--psi", "--delta", "--out", "--subtract-average", "--drop-epochs", "--embedding-l"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let top = ok(&["--help"]);
    for cmd in ["simulate", "study", "fit", "evaluate", "validate", "regress", "spectrum"] {
        assert!(top.contains(cmd), "missing {cmd}");
    }
}
