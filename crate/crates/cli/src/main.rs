use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kroncov::estimator::{DeltaStructure, PsiStructure};
use kroncov::evaluation::{mse_components, mse_total, spearman, validate, SplitMode};
use kroncov::format::fitdir::{read_factor_triple, read_fit_dir, write_fit_dir, FitSummary};
use kroncov::format::kct;
use kroncov::glm::{
    alpha_regressor, build_design, delta_regressor, format_regressor, format_voxel_csv, parse_confounders,
    run_glm, spectrum_from_psi, Confounders,
};
use kroncov::simulator::{run_study, sample_dataset, subtract_average_response, StudyConfigFile};
use kroncov::{fit, AssumptionSet, Dims, Error, FitConfig, Result, TemporalFactor, TrialTensor};

const SUBTRACT_AVERAGE: &str = "subtract_average_response";
const DROP_EPOCHS: &str = "drop_epochs";

#[derive(Parser)]
#[command(name = "kroncov", version, about = "Kronecker-structured space x time x epoch covariance estimation")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from given truth factors.
    Simulate(SimulateArgs),
    /// Run the assumption-set comparison study described by a study.json.
    Study(StudyArgs),
    /// Estimate the covariance factors of a dataset.
    Fit(FitArgs),
    /// Compare a fit with known truth factors.
    Evaluate(EvaluateArgs),
    /// Split-sample validation of a fit.
    Validate(ValidateArgs),
    /// Epoch regressors and the shifted-design GLM.
    Regress(RegressArgs),
    /// Power spectrum implied by a Toeplitz temporal factor.
    Spectrum(SpectrumArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    gamma: PathBuf,
    #[arg(long)]
    psi: PathBuf,
    #[arg(long)]
    delta: PathBuf,
    /// Number of independent samples.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for study_report.json and study_table.csv.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `rng_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitTuning {
    #[arg(long, default_value_t = FitConfig::default().max_outer_iters)]
    max_outer_iters: usize,
    #[arg(long, default_value_t = FitConfig::default().outer_tol)]
    outer_tol: f64,
    #[arg(long, default_value_t = FitConfig::default().em_max_iters)]
    em_max_iters: usize,
    #[arg(long, default_value_t = FitConfig::default().em_tol)]
    em_tol: f64,
    /// Circulant embedding size (default 2q - 1).
    #[arg(long)]
    embedding_l: Option<usize>,
}

impl FitTuning {
    fn config(&self) -> FitConfig {
        FitConfig {
            max_outer_iters: self.max_outer_iters,
            outer_tol: self.outer_tol,
            em_max_iters: self.em_max_iters,
            em_tol: self.em_tol,
            embedding_l: self.embedding_l,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// toeplitz, persymmetric or unrestricted.
    #[arg(long, default_value = "toeplitz")]
    psi: String,
    /// diagonal, unrestricted or identity.
    #[arg(long, default_value = "diagonal")]
    delta: String,
    /// Output fit directory.
    #[arg(long)]
    out: PathBuf,
    /// Subtract the average response before fitting.
    #[arg(long)]
    subtract_average: bool,
    /// Epochs (0-based) to leave out before fitting.
    #[arg(long, value_delimiter = ',')]
    drop_epochs: Vec<usize>,
    #[command(flatten)]
    tuning: FitTuning,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    fit: PathBuf,
    /// Directory holding gamma.kcf, psi.kcf and delta.kcf of the truth.
    #[arg(long)]
    truth: PathBuf,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fit: PathBuf,
    /// random or consecutive.
    #[arg(long)]
    mode: String,
    /// Random partitions to draw (random mode).
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    /// Required in random mode.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (default validate_report.json in the fit directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegressArgs {
    #[arg(long)]
    fit: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Raw data for the alpha-power regressor.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sampling rate in Hz (needed with --data).
    #[arg(long)]
    fs: Option<f64>,
    /// Band edges in Hz, as `lo,hi`.
    #[arg(long, value_delimiter = ',', default_values_t = [8.0, 12.0])]
    band: Vec<f64>,
    /// Channels for the alpha regressor (default: all).
    #[arg(long, value_delimiter = ',')]
    channels: Vec<usize>,
    /// BOLD data as KCT1 with q = n = 1 (voxels x 1 x epochs x 1).
    #[arg(long)]
    bold: Option<PathBuf>,
    #[arg(long)]
    confounders: Option<PathBuf>,
    /// Lags of the interest regressor in epochs.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0")]
    shifts: Vec<i64>,
    /// BH false discovery rate.
    #[arg(long, default_value_t = 0.01)]
    fdr: f64,
    /// Regressor entering the GLM: delta or alpha.
    #[arg(long, default_value = "delta")]
    interest: String,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Fit directory with a Toeplitz psi.kcf.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    fs: f64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn read_data(path: &Path) -> Result<TrialTensor> {
    kct::read(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

/// Applies the preprocessing recorded in a fit summary to raw data.
fn prepare(t: &TrialTensor, removed: &[usize], subtract: bool) -> Result<TrialTensor> {
    let mut t = if removed.is_empty() {
        t.clone()
    } else {
        let r = t.dims().r;
        if let Some(e) = removed.iter().find(|&&e| e >= r) {
            return Err(Error::InvalidArgument(format!("epoch {e} out of range 0..{r}")));
        }
        let keep: Vec<usize> = (0..r).filter(|d| !removed.contains(d)).collect();
        t.select_epochs(&keep)?
    };
    if subtract {
        t = subtract_average_response(&t)?;
    }
    Ok(t)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let truth = read_factor_triple(&a.gamma, &a.psi, &a.delta)?;
    let (p, q, r) = truth.dims();
    let t = sample_dataset(&truth, Dims::new(p, q, r, a.n), a.seed)?;
    kct::write(&a.out, &t)?;
    println!("wrote {} ({p} x {q} x {r} x {})", a.out.display(), a.n);
    Ok(())
}

fn cmd_study(a: StudyArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", a.config.display())))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let cfg = StudyConfigFile::from_json_str(&text)?.resolve(base, a.seed)?;
    let report = run_study(&cfg)?;
    std::fs::create_dir_all(&a.out)?;
    write_text(&a.out.join("study_report.json"), &to_json(&report)?)?;
    let table = report.to_csv();
    write_text(&a.out.join("study_table.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let psi: PsiStructure = a.psi.parse()?;
    let delta: DeltaStructure = a.delta.parse()?;
    let assumptions = AssumptionSet::new(psi, delta);
    let cfg = a.tuning.config();
    cfg.validate()?;
    let raw = read_data(&a.data)?;
    let mut removed = a.drop_epochs.clone();
    removed.sort_unstable();
    removed.dedup();
    let data = prepare(&raw, &removed, a.subtract_average)?;
    let res = fit(&data, assumptions, &cfg)?;
    let mut preprocessing = Vec::new();
    if !removed.is_empty() {
        preprocessing.push(DROP_EPOCHS.to_string());
    }
    if a.subtract_average {
        preprocessing.push(SUBTRACT_AVERAGE.to_string());
    }
    let mut summary = FitSummary::new(&res, data.dims(), &cfg, preprocessing);
    summary.removed_epochs = removed;
    write_fit_dir(&a.out, &res.factors, &summary)?;

    let mut line = format!(
        "{}: {} outer iterations ({}), log-likelihood {:.6}, residuals gamma {:.2e}",
        assumptions,
        res.outer_iterations,
        if res.converged { "converged" } else { "not converged" },
        res.final_loglik(),
        res.gamma_residual
    );
    if let Some(d) = res.delta_residual {
        let _ = write!(line, " delta {d:.2e}");
    }
    if let Some(s) = res.psi_residual {
        let _ = write!(line, " psi {s:.2e}");
    }
    if let Some(g) = res.g_residual {
        let _ = write!(line, " G/n {:.2e}", g / res.n_tilde as f64);
    }
    println!("{line}");
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (est, _) = read_fit_dir(&a.fit)?;
    let (truth, _) = read_fit_dir(&a.truth)?;
    let total = mse_total(&est, &truth)?;
    let comps = mse_components(&est.normalize()?, &truth.normalize()?)?;
    let value = serde_json::json!({
        "mse_total": total,
        "mse_gamma": comps.gamma,
        "mse_psi": comps.psi,
        "mse_delta": comps.delta,
        "component_normalization": "Gamma(1,1) = Delta(1,1) = 1",
    });
    emit(a.out.as_deref(), &to_json(&value)?)
}

fn load_fit_with_summary(dir: &Path) -> Result<(kroncov::FactorSet, FitSummary)> {
    let (factors, summary) = read_fit_dir(dir)?;
    let summary = summary.ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no fit.json", dir.display()))
    })?;
    Ok((factors, summary))
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let mode: SplitMode = a.mode.parse()?;
    let seed = match (mode, a.seed) {
        (SplitMode::Random, None) => {
            return Err(Error::InvalidArgument("--seed is required in random mode".into()))
        }
        (_, s) => s.unwrap_or(0),
    };
    let (factors, summary) = load_fit_with_summary(&a.fit)?;
    let raw = read_data(&a.data)?;
    let data = prepare(
        &raw,
        &summary.removed_epochs,
        summary.preprocessing.iter().any(|s| s == SUBTRACT_AVERAGE),
    )?;
    let report = validate(&data, &factors, summary.assumptions, &summary.config, mode, a.folds, a.repeats, seed)?;
    let out = a.out.unwrap_or_else(|| a.fit.join("validate_report.json"));
    write_text(&out, &to_json(&report)?)?;
    let failed = report.values.iter().filter(|v| v.value.is_none()).count();
    println!(
        "{} values, mean {:.4e}, sd {:.4e}, {failed} failed -> {}",
        report.values.len(),
        report.mean,
        report.std,
        out.display()
    );
    Ok(())
}

fn cmd_regress(a: RegressArgs) -> Result<()> {
    let (factors, summary) = read_fit_dir(&a.fit)?;
    let removed = summary.as_ref().map(|s| s.removed_epochs.clone()).unwrap_or_default();
    let delta = delta_regressor(&factors.delta, &removed)?;
    std::fs::create_dir_all(&a.out)?;
    write_text(&a.out.join("delta_regressor.csv"), &format_regressor(&delta))?;
    let mut info = serde_json::json!({ "epochs": delta.len(), "removed_epochs": removed });

    let alpha = match &a.data {
        Some(path) => {
            let fs = a.fs.ok_or_else(|| Error::InvalidArgument("--fs is required with --data".into()))?;
            let t = read_data(path)?;
            let channels = if a.channels.is_empty() { (0..t.dims().p).collect() } else { a.channels.clone() };
            let [lo, hi] = a.band[..] else {
                return Err(Error::InvalidArgument(format!("--band needs two values, got {}", a.band.len())));
            };
            let s = alpha_regressor(&t, &channels, (lo, hi), fs)?;
            if s.len() != delta.len() {
                return Err(Error::Dimension(format!(
                    "data has {} epochs, the fit covers {}",
                    s.len(),
                    delta.len()
                )));
            }
            write_text(&a.out.join("alpha_regressor.csv"), &format_regressor(&s))?;
            info["spearman_delta_alpha"] = serde_json::json!(spearman(&delta.values, &s.values)?);
            Some(s)
        }
        None => None,
    };

    if let Some(bold_path) = &a.bold {
        let interest = match a.interest.as_str() {
            "delta" => &delta,
            "alpha" => alpha
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--interest alpha needs --data and --fs".into()))?,
            other => return Err(Error::InvalidArgument(format!("unknown interest regressor `{other}`"))),
        };
        let bold = read_data(bold_path)?;
        let confounders = match &a.confounders {
            Some(p) => parse_confounders(&std::fs::read_to_string(p)?)?,
            None => Confounders::none(interest.len()),
        };
        let design = build_design(interest, &a.shifts, &confounders)?;
        let report = run_glm(&bold, &design, &a.shifts, a.fdr)?;
        write_text(&a.out.join("voxels.csv"), &format_voxel_csv(&report.results))?;
        write_text(&a.out.join("glm_summary.json"), &to_json(&report.summary)?)?;
        info["glm"] = serde_json::to_value(&report.summary)?;
        println!(
            "{} of {} voxels significant at FDR {}",
            report.summary.significant, report.summary.voxels, report.summary.fdr
        );
    }
    write_text(&a.out.join("regressors.json"), &to_json(&info)?)?;
    Ok(())
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<()> {
    let (factors, _) = read_fit_dir(&a.fit)?;
    let TemporalFactor::Toeplitz(psi) = &factors.psi else {
        return Err(Error::InvalidArgument("spectrum needs a Toeplitz psi".into()));
    };
    let (freqs, power) = spectrum_from_psi(psi, a.fs)?;
    let mut csv = String::from("frequency_hz,power\n");
    for (f, p) in freqs.iter().zip(&power) {
        let _ = writeln!(csv, "{f:e},{p:e}");
    }
    emit(a.out.as_deref(), &csv)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Study(a) => cmd_study(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Regress(a) => cmd_regress(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
