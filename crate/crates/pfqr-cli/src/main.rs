//! Command-line front end: simulation, fitting, tuning, evaluation, conic
//! export, stability selection and end-to-end reproduction runs.
//!
//! Every subcommand accepts `--config <file.json>` whose keys mirror the
//! long flag names; explicit flags override file values. Exit codes: 0
//! success, 1 usage/config error, 2 data error, 3 solver non-convergence
//! under `--strict`.

use clap::{Args, Parser, Subcommand};
use pfqr::admm::{Solver, SolverConfig};
use pfqr::model::{
    build_design, CoefficientSet, Dataset, PenaltySpec, QuantileLevels,
};
use pfqr::simgen::{NoiseFamily, SimConfig};
use pfqr::tuning::{
    Criterion, Method, TuningGrid,
};
use pfqr::wavelet::{FilterFamily, WaveletFilter};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_NONCONVERGED: i32 = 3;

#[derive(Parser)]
#[command(
    name = "pfqr",
    about = "Partial functional composite quantile regression with sparse group lasso",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset (CSV files plus a JSON sidecar).
    Simulate(SimulateArgs),
    /// Fit the penalized model on a dataset directory.
    Fit(FitArgs),
    /// Grid-search the penalty level by GIC or a validation set.
    Tune(TuneArgs),
    /// Compute metrics of a fitted coefficient file against simulation truth.
    Evaluate(EvaluateArgs),
    /// Export the second-order cone reformulation of a fit problem.
    ExportSocp(ExportSocpArgs),
    /// Bootstrap stability selection of functional predictors.
    StabilitySelect(StabilityArgs),
    /// End-to-end reproduction runs.
    #[command(subcommand)]
    Reproduce(ReproduceCommand),
}

#[derive(Subcommand)]
enum ReproduceCommand {
    /// Monte Carlo aggregate of one simulation-table row.
    Table1Row(Table1RowArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            eprintln!("pfqr-error: usage: invalid command line");
            std::process::exit(EXIT_USAGE);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("pfqr-error: {kind}: {e}");
            code
        }
    };
    std::process::exit(code);
}

fn classify(e: &pfqr::Error) -> (&'static str, i32) {
    use pfqr::Error::*;
    match e {
        InvalidArgument(_) => ("usage", EXIT_USAGE),
        Dimension(_) | Degenerate(_) | Parse { .. } | Io(_) | Csv(_) | Json(_) => {
            ("data", EXIT_DATA)
        }
        SingularSystem(_) => ("data", EXIT_DATA),
    }
}

fn run(cli: Cli) -> pfqr::Result<i32> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::ExportSocp(args) => cmd_export_socp(args),
        Command::StabilitySelect(args) => cmd_stability(args),
        Command::Reproduce(ReproduceCommand::Table1Row(args)) => cmd_table1_row(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn load_config_file<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> pfqr::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                pfqr::Error::InvalidArgument(format!(
                    "config file {}: {e}",
                    p.display()
                ))
            })
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_req<T>(flag: Option<T>, file: Option<T>, name: &str) -> pfqr::Result<T> {
    flag.or(file).ok_or_else(|| {
        pfqr::Error::InvalidArgument(format!("missing required option --{name}"))
    })
}

/// Solver options shared by the fitting subcommands.
#[derive(Args, Clone, Default)]
struct SolverFlags {
    #[arg(long, help = "Outer augmented-Lagrangian penalty")]
    eta: Option<f64>,
    #[arg(long, help = "Inner augmented-Lagrangian penalty")]
    eta1: Option<f64>,
    #[arg(long, help = "Absolute stopping tolerance")]
    eps_abs: Option<f64>,
    #[arg(long, help = "Relative stopping tolerance")]
    eps_rel: Option<f64>,
    #[arg(long, help = "Outer iteration budget")]
    max_outer: Option<usize>,
    #[arg(long, help = "Inner iteration budget per outer step")]
    max_inner: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SolverFileCfg {
    eta: Option<f64>,
    eta1: Option<f64>,
    eps_abs: Option<f64>,
    eps_rel: Option<f64>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
}

fn resolve_solver(flags: &SolverFlags, file: &SolverFileCfg) -> SolverConfig {
    let d = SolverConfig::default();
    SolverConfig {
        eta: pick(flags.eta, file.eta, d.eta),
        eta1: pick(flags.eta1, file.eta1, d.eta1),
        eps_abs: pick(flags.eps_abs, file.eps_abs, d.eps_abs),
        eps_rel: pick(flags.eps_rel, file.eps_rel, d.eps_rel),
        max_outer: pick(flags.max_outer, file.max_outer, d.max_outer),
        max_inner: pick(flags.max_inner, file.max_inner, d.max_inner),
        warm_start: d.warm_start,
    }
}

/// Quantile-level options: a single level, or K equally spaced levels.
fn resolve_taus(tau: Option<f64>, k: Option<usize>) -> pfqr::Result<QuantileLevels> {
    match (tau, k) {
        (Some(_), Some(_)) => Err(pfqr::Error::InvalidArgument(
            "--tau and --composite-k are mutually exclusive".into(),
        )),
        (Some(t), None) => QuantileLevels::single(t),
        (None, Some(k)) => QuantileLevels::equally_spaced(k),
        (None, None) => QuantileLevels::equally_spaced(9),
    }
}

fn parse_wavelet(name: &str) -> pfqr::Result<WaveletFilter> {
    WaveletFilter::new(name.parse::<FilterFamily>()?)
}

fn write_provenance<T: Serialize>(dir: &Path, resolved: &T) -> pfqr::Result<()> {
    pfqr::io::write_json(&dir.join("provenance.json"), resolved)
}

fn check_strict(strict: bool, converged: bool) -> pfqr::Result<i32> {
    if converged {
        Ok(0)
    } else if strict {
        eprintln!("pfqr-error: solver: did not converge within the iteration budget");
        Ok(EXIT_NONCONVERGED)
    } else {
        eprintln!("pfqr-warning: solver did not converge within the iteration budget");
        Ok(0)
    }
}

fn install_thread_pool(jobs: Option<usize>) -> pfqr::Result<()> {
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| pfqr::Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_betas_csv(
    path: &Path,
    params: &CoefficientSet,
    filter: &WaveletFilter,
) -> pfqr::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(pfqr::Error::Csv)?;
    let mut header = vec!["predictor".to_string()];
    header.extend((0..params.grid_len).map(|j| format!("t{j}")));
    w.write_record(&header).map_err(pfqr::Error::Csv)?;
    for l in 0..params.m {
        let beta = pfqr::model::reconstruct_beta(params.theta_block(l), filter)?;
        let mut rec = vec![l.to_string()];
        rec.extend(beta.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(pfqr::Error::Csv)?;
    }
    w.flush().map_err(pfqr::Error::Io)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, help = "normal|mixture|t3|cauchy (or 1..4)")]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, help = "Dyadic grid length (default 256)")]
    grid_len: Option<usize>,
    #[arg(long, help = "haar|sym6|db2|db4 (default sym6)")]
    wavelet: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateFileCfg {
    n: Option<usize>,
    snr: Option<f64>,
    noise: Option<String>,
    seed: Option<u64>,
    grid_len: Option<usize>,
    wavelet: Option<String>,
    out: Option<PathBuf>,
}

fn cmd_simulate(args: SimulateArgs) -> pfqr::Result<i32> {
    let file: SimulateFileCfg = load_config_file(&args.config)?;
    let n = pick_req(args.n, file.n, "n")?;
    let snr = pick_req(args.snr, file.snr, "snr")?;
    let noise: NoiseFamily = pick_req(args.noise, file.noise, "noise")?.parse()?;
    let seed = pick_req(args.seed, file.seed, "seed")?;
    let grid_len = pick(args.grid_len, file.grid_len, 256);
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let out = pick_req(args.out, file.out, "out")?;
    let filter_family: FilterFamily = wavelet.parse()?;

    let cfg = SimConfig {
        n,
        snr,
        noise,
        seed,
        grid_len,
        filter: filter_family,
    };
    let sim = pfqr::simgen::gen_dataset(&cfg)?;
    pfqr::io::write_dataset(&out, &sim.data)?;
    let mut checksums = std::collections::BTreeMap::new();
    for file in [
        pfqr::io::CURVES_FILE,
        pfqr::io::SCALARS_FILE,
        pfqr::io::RESPONSE_FILE,
    ] {
        checksums.insert(file.to_string(), pfqr::io::file_checksum(&out.join(file))?);
    }
    let sidecar = pfqr::io::SimSidecar {
        config: cfg,
        sigma: sim.sigma,
        gamma_true: sim.gamma_true,
        true_support: pfqr::simgen::TRUE_SUPPORT.to_vec(),
        checksums,
    };
    pfqr::io::write_json(&out.join("dataset.json"), &sidecar)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, help = "Dataset directory (curves/scalars/response CSVs)")]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, help = "Single quantile level")]
    tau: Option<f64>,
    #[arg(long, help = "K equally spaced levels k/(K+1); default K=9")]
    composite_k: Option<usize>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, help = "Exit 3 when the solver does not converge")]
    strict: bool,
    #[arg(long, help = "Write per-iteration JSON trace lines to this file")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FitFileCfg {
    data: Option<PathBuf>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    tau: Option<f64>,
    composite_k: Option<usize>,
    wavelet: Option<String>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    solver: SolverFileCfg,
}

#[derive(Serialize)]
struct FitDiagnostics {
    objective: f64,
    converged: bool,
    outer_iterations: usize,
    inner_iterations_total: usize,
    primal_residual: f64,
    dual_residual: f64,
    support_size: usize,
    selected_blocks: Vec<usize>,
    kkt_residual: f64,
}

#[derive(Serialize)]
struct FitProvenance {
    data: PathBuf,
    lambda1: f64,
    lambda2: f64,
    taus: Vec<f64>,
    wavelet: String,
    solver: SolverConfig,
}

fn cmd_fit(args: FitArgs) -> pfqr::Result<i32> {
    let file: FitFileCfg = load_config_file(&args.config)?;
    let data_dir = pick_req(args.data, file.data, "data")?;
    let lambda1 = pick_req(args.lambda1, file.lambda1, "lambda1")?;
    let lambda2 = pick_req(args.lambda2, file.lambda2, "lambda2")?;
    let out = pick_req(args.out, file.out, "out")?;
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let taus = resolve_taus(args.tau.or(file.tau), args.composite_k.or(file.composite_k))?;
    let cfg = resolve_solver(&args.solver, &file.solver);
    let filter = parse_wavelet(&wavelet)?;

    let data = pfqr::io::read_dataset(&data_dir)?;
    let design = build_design(&data, &filter)?;
    let pen = PenaltySpec::new(lambda1, lambda2)?;
    let solver = Solver::new(&design, &data.response, &taus, cfg)?;
    let mut state = solver.fresh_state();
    let mut trace_file = match &args.trace {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let result = solver.fit_from(
        &pen,
        &mut state,
        trace_file.as_mut().map(|f| f as &mut dyn std::io::Write),
    )?;
    drop(trace_file);

    std::fs::create_dir_all(&out)?;
    pfqr::io::write_json(&out.join("coefficients.json"), &result.params)?;
    write_betas_csv(&out.join("betas.csv"), &result.params, &filter)?;
    let kkt = pfqr::admm::kkt_residual(
        &result.params,
        &design,
        &data.response,
        &taus,
        &pen,
    )?;
    pfqr::io::write_json(
        &out.join("diagnostics.json"),
        &FitDiagnostics {
            objective: result.objective,
            converged: result.converged,
            outer_iterations: result.outer_iters,
            inner_iterations_total: result.inner_iters_total,
            primal_residual: result.primal_residual,
            dual_residual: result.dual_residual,
            support_size: result.support_size(),
            selected_blocks: result.selected_blocks(),
            kkt_residual: kkt,
        },
    )?;
    write_provenance(
        &out,
        &FitProvenance {
            data: data_dir,
            lambda1,
            lambda2,
            taus: taus.taus().to_vec(),
            wavelet,
            solver: cfg,
        },
    )?;
    check_strict(args.strict, result.converged)
}

// ---------------------------------------------------------------------------
// tune

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, help = "Training dataset directory")]
    train: Option<PathBuf>,
    #[arg(long, help = "Tuning dataset directory (defaults to the training set)")]
    validation: Option<PathBuf>,
    #[arg(long, help = "qsgl|ql|qgl")]
    method: Option<String>,
    #[arg(long, help = "gic|validation")]
    criterion: Option<String>,
    #[arg(long, help = "Number of grid points (default 30)")]
    grid_size: Option<usize>,
    #[arg(long, help = "lambda1/lambda2 ratio for qsgl (default 0.5)")]
    ratio: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    composite_k: Option<usize>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct TuneFileCfg {
    train: Option<PathBuf>,
    validation: Option<PathBuf>,
    method: Option<String>,
    criterion: Option<String>,
    grid_size: Option<usize>,
    ratio: Option<f64>,
    tau: Option<f64>,
    composite_k: Option<usize>,
    wavelet: Option<String>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    solver: SolverFileCfg,
}

#[derive(Serialize)]
struct TuneSelection {
    lambda1: f64,
    lambda2: f64,
    best_index: usize,
    criterion: Criterion,
    method: Method,
    converged: bool,
}

fn write_path_csv(path: &Path, entries: &[pfqr::tuning::PathEntry]) -> pfqr::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(pfqr::Error::Csv)?;
    w.write_record([
        "index",
        "lambda1",
        "lambda2",
        "objective",
        "support_size",
        "criterion_value",
        "zero_loss",
        "converged",
    ])
    .map_err(pfqr::Error::Csv)?;
    for (i, e) in entries.iter().enumerate() {
        w.write_record([
            i.to_string(),
            e.lambda1.to_string(),
            e.lambda2.to_string(),
            e.objective.to_string(),
            e.support_size.to_string(),
            e.criterion_value.to_string(),
            e.zero_loss.to_string(),
            e.converged.to_string(),
        ])
        .map_err(pfqr::Error::Csv)?;
    }
    w.flush().map_err(pfqr::Error::Io)?;
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> pfqr::Result<i32> {
    let file: TuneFileCfg = load_config_file(&args.config)?;
    let train_dir = pick_req(args.train, file.train, "train")?;
    let validation_dir = args.validation.or(file.validation);
    let method: Method = pick_req(args.method, file.method, "method")?.parse()?;
    let criterion: Criterion =
        pick(args.criterion, file.criterion, "gic".into()).parse()?;
    let grid_size = pick(args.grid_size, file.grid_size, 30);
    let ratio = pick(args.ratio, file.ratio, 0.5);
    let out = pick_req(args.out, file.out, "out")?;
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let taus = resolve_taus(args.tau.or(file.tau), args.composite_k.or(file.composite_k))?;
    let cfg = resolve_solver(&args.solver, &file.solver);
    let filter = parse_wavelet(&wavelet)?;

    let data_train = pfqr::io::read_dataset(&train_dir)?;
    let data_tune = match &validation_dir {
        Some(dir) => pfqr::io::read_dataset(dir)?,
        None => data_train.clone(),
    };
    let design = build_design(&data_train, &filter)?;
    let anchor = pfqr::tuning::lambda_anchor(
        method,
        &design,
        &data_train.response,
        &taus,
        ratio,
        &cfg,
    )?;
    let grid = TuningGrid::log_spaced(anchor, grid_size, ratio, criterion)?;
    let result = pfqr::tuning::grid_search(
        &data_train,
        &data_tune,
        &grid,
        method,
        &taus,
        &cfg,
        &filter,
    )?;

    std::fs::create_dir_all(&out)?;
    write_path_csv(&out.join("path.csv"), &result.path)?;
    pfqr::io::write_json(
        &out.join("selection.json"),
        &TuneSelection {
            lambda1: result.lambda1,
            lambda2: result.lambda2,
            best_index: result.best_index,
            criterion,
            method,
            converged: result.best_fit.converged,
        },
    )?;
    pfqr::io::write_json(&out.join("coefficients.json"), &result.best_fit.params)?;
    write_betas_csv(&out.join("betas.csv"), &result.best_fit.params, &filter)?;
    #[derive(Serialize)]
    struct TuneProvenance {
        train: PathBuf,
        validation: Option<PathBuf>,
        method: Method,
        criterion: Criterion,
        grid_size: usize,
        ratio: f64,
        lambda_anchor: f64,
        taus: Vec<f64>,
        wavelet: String,
        solver: SolverConfig,
    }
    write_provenance(
        &out,
        &TuneProvenance {
            train: train_dir,
            validation: validation_dir,
            method,
            criterion,
            grid_size,
            ratio,
            lambda_anchor: anchor,
            taus: taus.taus().to_vec(),
            wavelet,
            solver: cfg,
        },
    )?;
    check_strict(args.strict, result.best_fit.converged)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, help = "Dataset directory to predict on")]
    data: Option<PathBuf>,
    #[arg(long, help = "coefficients.json from fit/tune")]
    coefficients: Option<PathBuf>,
    #[arg(long, help = "dataset.json sidecar holding the simulation truth")]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    composite_k: Option<usize>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long, help = "Output metrics JSON file")]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct EvaluateFileCfg {
    data: Option<PathBuf>,
    coefficients: Option<PathBuf>,
    sidecar: Option<PathBuf>,
    tau: Option<f64>,
    composite_k: Option<usize>,
    wavelet: Option<String>,
    out: Option<PathBuf>,
}

fn evaluate_fit(
    params: &CoefficientSet,
    data: &Dataset,
    taus: &QuantileLevels,
    filter: &WaveletFilter,
    beta_true: &[Vec<f64>],
    theta_true: &[Vec<f64>],
) -> pfqr::Result<pfqr::metrics::MetricReport> {
    let design = build_design(data, filter)?;
    let beta_hat: Vec<Vec<f64>> = (0..params.m)
        .map(|l| pfqr::model::reconstruct_beta(params.theta_block(l), filter))
        .collect::<pfqr::Result<_>>()?;
    let (mise, ise) = pfqr::metrics::mise_ise(&beta_hat, beta_true)?;
    let est_blocks: Vec<usize> = (0..params.m)
        .filter(|l| params.theta_block(*l).iter().any(|v| *v != 0.0))
        .collect();
    let true_blocks: Vec<usize> = (0..params.m)
        .filter(|l| theta_true[*l].iter().any(|v| *v != 0.0))
        .collect();
    let ga = pfqr::metrics::group_accuracy(&est_blocks, &true_blocks, params.m)?;
    let theta_true_flat: Vec<f64> = theta_true.iter().flatten().copied().collect();
    let va = pfqr::metrics::variable_accuracy(&params.theta, &theta_true_flat)?;
    // Predict at the level closest to the median.
    let mid = taus
        .taus()
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (*a - 0.5).abs().total_cmp(&(*b - 0.5).abs())
        })
        .map(|(i, _)| i)
        .unwrap();
    let y_hat = pfqr::model::predict_quantile(params, &design, mid)?;
    let mape = pfqr::metrics::mape(
        y_hat.as_slice().unwrap(),
        data.response.as_slice().unwrap(),
    )?;
    let report = pfqr::metrics::MetricReport {
        mise,
        mape,
        ga,
        va,
        ise,
    };
    report.validate()?;
    Ok(report)
}

fn cmd_evaluate(args: EvaluateArgs) -> pfqr::Result<i32> {
    let file: EvaluateFileCfg = load_config_file(&args.config)?;
    let data_dir = pick_req(args.data, file.data, "data")?;
    let coeff_path = pick_req(args.coefficients, file.coefficients, "coefficients")?;
    let sidecar_path = pick_req(args.sidecar, file.sidecar, "sidecar")?;
    let out = pick_req(args.out, file.out, "out")?;
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let taus = resolve_taus(args.tau.or(file.tau), args.composite_k.or(file.composite_k))?;
    let filter = parse_wavelet(&wavelet)?;

    let data = pfqr::io::read_dataset(&data_dir)?;
    let params: CoefficientSet = pfqr::io::read_json(&coeff_path)?;
    params.validate()?;
    let sidecar: pfqr::io::SimSidecar = pfqr::io::read_json(&sidecar_path)?;
    let truth_filter = WaveletFilter::new(sidecar.config.filter)?;
    let (beta_true, theta_true) =
        pfqr::simgen::gen_true_betas(&truth_filter, sidecar.config.grid_len)?;
    let report = evaluate_fit(&params, &data, &taus, &filter, &beta_true, &theta_true)?;
    pfqr::io::write_json(&out, &report)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// export-socp

#[derive(Args)]
struct ExportSocpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    composite_k: Option<usize>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long, help = "Output conic problem file")]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ExportSocpFileCfg {
    data: Option<PathBuf>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    tau: Option<f64>,
    composite_k: Option<usize>,
    wavelet: Option<String>,
    out: Option<PathBuf>,
}

fn cmd_export_socp(args: ExportSocpArgs) -> pfqr::Result<i32> {
    let file: ExportSocpFileCfg = load_config_file(&args.config)?;
    let data_dir = pick_req(args.data, file.data, "data")?;
    let lambda1 = pick_req(args.lambda1, file.lambda1, "lambda1")?;
    let lambda2 = pick_req(args.lambda2, file.lambda2, "lambda2")?;
    let out = pick_req(args.out, file.out, "out")?;
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let taus = resolve_taus(args.tau.or(file.tau), args.composite_k.or(file.composite_k))?;
    let filter = parse_wavelet(&wavelet)?;

    let data = pfqr::io::read_dataset(&data_dir)?;
    let design = build_design(&data, &filter)?;
    let pen = PenaltySpec::new(lambda1, lambda2)?;
    let prob = pfqr::socp::build_socp(&design, &data.response, &taus, &pen)?;
    pfqr::socp::export_to_path(&prob, &out)?;
    #[derive(Serialize)]
    struct SocpProvenance {
        data: PathBuf,
        lambda1: f64,
        lambda2: f64,
        taus: Vec<f64>,
        wavelet: String,
        num_vars: usize,
    }
    pfqr::io::write_json(
        &out.with_extension("provenance.json"),
        &SocpProvenance {
            data: data_dir,
            lambda1,
            lambda2,
            taus: taus.taus().to_vec(),
            wavelet,
            num_vars: prob.num_vars,
        },
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// stability-select

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, help = "Bootstrap replicates (default 100)")]
    bootstraps: Option<usize>,
    #[arg(long, help = "Median-norm selection threshold (default 1e-5)")]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    composite_k: Option<usize>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long, help = "Worker threads (default: all cores)")]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct StabilityFileCfg {
    data: Option<PathBuf>,
    method: Option<String>,
    bootstraps: Option<usize>,
    threshold: Option<f64>,
    seed: Option<u64>,
    grid_size: Option<usize>,
    ratio: Option<f64>,
    tau: Option<f64>,
    composite_k: Option<usize>,
    wavelet: Option<String>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    solver: SolverFileCfg,
}

fn write_boxplot_csv(
    path: &Path,
    summaries: &[pfqr::tuning::QuantileSummary],
) -> pfqr::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(pfqr::Error::Csv)?;
    w.write_record(["predictor", "min", "q1", "median", "q3", "max"])
        .map_err(pfqr::Error::Csv)?;
    for (l, s) in summaries.iter().enumerate() {
        w.write_record([
            l.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
        ])
        .map_err(pfqr::Error::Csv)?;
    }
    w.flush().map_err(pfqr::Error::Io)?;
    Ok(())
}

fn cmd_stability(args: StabilityArgs) -> pfqr::Result<i32> {
    use rayon::prelude::*;
    let file: StabilityFileCfg = load_config_file(&args.config)?;
    let data_dir = pick_req(args.data, file.data, "data")?;
    let method: Method = pick(args.method, file.method, "qsgl".into()).parse()?;
    let b = pick(args.bootstraps, file.bootstraps, 100);
    let threshold = pick(args.threshold, file.threshold, 1e-5);
    let seed = pick_req(args.seed, file.seed, "seed")?;
    let grid_size = pick(args.grid_size, file.grid_size, 30);
    let ratio = pick(args.ratio, file.ratio, 0.5);
    let out = pick_req(args.out, file.out, "out")?;
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let taus = resolve_taus(args.tau.or(file.tau), args.composite_k.or(file.composite_k))?;
    let cfg = resolve_solver(&args.solver, &file.solver);
    let filter = parse_wavelet(&wavelet)?;
    install_thread_pool(args.jobs.or(file.jobs))?;
    if b == 0 {
        return Err(pfqr::Error::InvalidArgument(
            "--bootstraps must be at least 1".into(),
        ));
    }

    let data = pfqr::io::read_dataset(&data_dir)?;
    let design = build_design(&data, &filter)?;
    let anchor = pfqr::tuning::lambda_anchor(
        method,
        &design,
        &data.response,
        &taus,
        ratio,
        &cfg,
    )?;
    let grid = TuningGrid::log_spaced(anchor, grid_size, ratio, Criterion::Gic)?;

    // Replicates fan out in parallel; each derives its own seed and results
    // are merged in replicate order, so the parallelism degree cannot change
    // the output.
    let rep_results: Vec<pfqr::Result<Option<Vec<f64>>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            pfqr::tuning::stability_replicate(
                &data,
                &taus,
                &grid,
                method,
                &cfg,
                &filter,
                pfqr::tuning::replicate_seed(seed, rep),
            )
        })
        .collect();
    let m = data.m();
    let mut norms = Vec::with_capacity(b);
    let mut degenerate_reps = Vec::new();
    for (rep, r) in rep_results.into_iter().enumerate() {
        match r? {
            Some(v) => norms.push(v),
            None => {
                degenerate_reps.push(rep);
                norms.push(vec![0.0; m]);
            }
        }
    }
    let mut median_norms = Vec::with_capacity(m);
    let mut summaries = Vec::with_capacity(m);
    for l in 0..m {
        let col: Vec<f64> = norms.iter().map(|r| r[l]).collect();
        let s = pfqr::tuning::quantile_summary(&col)?;
        median_norms.push(s.median);
        summaries.push(s);
    }
    let selected: Vec<usize> = (0..m)
        .filter(|l| median_norms[*l] > threshold)
        .collect();
    let report = pfqr::tuning::StabilityReport {
        norms,
        median_norms,
        selected,
        summaries: summaries.clone(),
        degenerate_reps,
    };

    std::fs::create_dir_all(&out)?;
    pfqr::io::write_json(&out.join("stability.json"), &report)?;
    write_boxplot_csv(&out.join("boxplot.csv"), &summaries)?;
    #[derive(Serialize)]
    struct StabilityProvenance {
        data: PathBuf,
        method: Method,
        bootstraps: usize,
        threshold: f64,
        seed: u64,
        grid_size: usize,
        ratio: f64,
        lambda_anchor: f64,
        taus: Vec<f64>,
        wavelet: String,
        solver: SolverConfig,
    }
    write_provenance(
        &out,
        &StabilityProvenance {
            data: data_dir,
            method,
            bootstraps: b,
            threshold,
            seed,
            grid_size,
            ratio,
            lambda_anchor: anchor,
            taus: taus.taus().to_vec(),
            wavelet,
            solver: cfg,
        },
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// reproduce table1-row

#[derive(Args)]
struct Table1RowArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, help = "Training (and tuning) sample size")]
    n: Option<usize>,
    #[arg(long, help = "normal|mixture|t3|cauchy (or 1..4)")]
    noise: Option<String>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, help = "Monte Carlo repetitions")]
    reps: Option<usize>,
    #[arg(long, help = "qsgl|ql|qgl")]
    method: Option<String>,
    #[arg(long, help = "gic|validation")]
    criterion: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    grid_len: Option<usize>,
    #[arg(long)]
    wavelet: Option<String>,
    #[arg(long, help = "Quantile level (default 0.5 for simulations)")]
    tau: Option<f64>,
    #[arg(long, help = "Worker threads (default: all cores)")]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct Table1RowFileCfg {
    n: Option<usize>,
    noise: Option<String>,
    snr: Option<f64>,
    reps: Option<usize>,
    method: Option<String>,
    criterion: Option<String>,
    seed: Option<u64>,
    grid_size: Option<usize>,
    ratio: Option<f64>,
    grid_len: Option<usize>,
    wavelet: Option<String>,
    tau: Option<f64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    solver: SolverFileCfg,
}

#[derive(Debug, Clone, Serialize)]
struct RepOutcome {
    rep: usize,
    mise: f64,
    ga: f64,
    va: f64,
    mape: f64,
    ise: Vec<f64>,
    lambda1: f64,
    lambda2: f64,
    converged: bool,
}

/// One Monte Carlo repetition: generate train/tune/test, tune, evaluate.
pub(crate) fn table1_rep(
    rep: usize,
    n: usize,
    noise: NoiseFamily,
    snr: f64,
    method: Method,
    criterion: Criterion,
    master_seed: u64,
    grid_size: usize,
    ratio: f64,
    grid_len: usize,
    filter_family: FilterFamily,
    taus: &QuantileLevels,
    cfg: &SolverConfig,
) -> pfqr::Result<RepOutcome> {
    let filter = WaveletFilter::new(filter_family)?;
    let seed_of = |stream: usize| {
        pfqr::tuning::replicate_seed(master_seed, 3 * rep + stream)
    };
    let make = |size: usize, stream: usize| -> pfqr::Result<_> {
        pfqr::simgen::gen_dataset(&SimConfig {
            n: size,
            snr,
            noise,
            seed: seed_of(stream),
            grid_len,
            filter: filter_family,
        })
    };
    let train = make(n, 0)?;
    let tune_data = make(n, 1)?;
    let test = make(10 * n, 2)?;

    let design = build_design(&train.data, &filter)?;
    let anchor = pfqr::tuning::lambda_anchor(
        method,
        &design,
        &train.data.response,
        taus,
        ratio,
        cfg,
    )?;
    let grid = TuningGrid::log_spaced(anchor, grid_size, ratio, criterion)?;
    let tuned = pfqr::tuning::grid_search(
        &train.data,
        &tune_data.data,
        &grid,
        method,
        taus,
        cfg,
        &filter,
    )?;
    let report = evaluate_fit(
        &tuned.best_fit.params,
        &test.data,
        taus,
        &filter,
        &train.beta_true,
        &train.theta_true,
    )?;
    Ok(RepOutcome {
        rep,
        mise: report.mise,
        ga: report.ga,
        va: report.va,
        mape: report.mape,
        ise: report.ise,
        lambda1: tuned.lambda1,
        lambda2: tuned.lambda2,
        converged: tuned.best_fit.converged,
    })
}

fn median_iqr(values: &[f64]) -> pfqr::Result<(f64, f64)> {
    let s = pfqr::tuning::quantile_summary(values)?;
    Ok((s.median, s.q3 - s.q1))
}

fn cmd_table1_row(args: Table1RowArgs) -> pfqr::Result<i32> {
    use rayon::prelude::*;
    let file: Table1RowFileCfg = load_config_file(&args.config)?;
    let n = pick_req(args.n, file.n, "n")?;
    let noise: NoiseFamily = pick_req(args.noise, file.noise, "noise")?.parse()?;
    let snr = pick_req(args.snr, file.snr, "snr")?;
    let reps = pick_req(args.reps, file.reps, "reps")?;
    let method: Method = pick_req(args.method, file.method, "method")?.parse()?;
    let criterion: Criterion =
        pick(args.criterion, file.criterion, "gic".into()).parse()?;
    let seed = pick_req(args.seed, file.seed, "seed")?;
    let grid_size = pick(args.grid_size, file.grid_size, 30);
    let ratio = pick(args.ratio, file.ratio, 0.5);
    let grid_len = pick(args.grid_len, file.grid_len, 256);
    let wavelet = pick(args.wavelet, file.wavelet, "sym6".into());
    let tau = pick(args.tau, file.tau, 0.5);
    let out = pick_req(args.out, file.out, "out")?;
    let cfg = resolve_solver(&args.solver, &file.solver);
    let filter_family: FilterFamily = wavelet.parse()?;
    let taus = QuantileLevels::single(tau)?;
    install_thread_pool(args.jobs.or(file.jobs))?;
    if reps == 0 {
        return Err(pfqr::Error::InvalidArgument("--reps must be >= 1".into()));
    }

    let outcomes: Vec<pfqr::Result<RepOutcome>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            table1_rep(
                rep,
                n,
                noise,
                snr,
                method,
                criterion,
                seed,
                grid_size,
                ratio,
                grid_len,
                filter_family,
                &taus,
                &cfg,
            )
        })
        .collect();
    let mut rows = Vec::with_capacity(reps);
    for o in outcomes {
        rows.push(o?);
    }
    rows.sort_by_key(|r| r.rep);

    std::fs::create_dir_all(&out)?;
    // Per-repetition detail.
    {
        let mut w = csv::Writer::from_path(out.join("per_rep.csv"))
            .map_err(pfqr::Error::Csv)?;
        let mut header = vec![
            "rep".to_string(),
            "mise".to_string(),
            "ga".to_string(),
            "va".to_string(),
            "mape".to_string(),
            "lambda1".to_string(),
            "lambda2".to_string(),
            "converged".to_string(),
        ];
        header.extend((0..rows[0].ise.len()).map(|l| format!("ise{}", l + 1)));
        w.write_record(&header).map_err(pfqr::Error::Csv)?;
        for r in &rows {
            let mut rec = vec![
                r.rep.to_string(),
                r.mise.to_string(),
                r.ga.to_string(),
                r.va.to_string(),
                r.mape.to_string(),
                r.lambda1.to_string(),
                r.lambda2.to_string(),
                r.converged.to_string(),
            ];
            rec.extend(r.ise.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(pfqr::Error::Csv)?;
        }
        w.flush().map_err(pfqr::Error::Io)?;
    }
    // Aggregate medians and interquartile ranges.
    {
        let mise: Vec<f64> = rows.iter().map(|r| r.mise).collect();
        let ga: Vec<f64> = rows.iter().map(|r| r.ga).collect();
        let va: Vec<f64> = rows.iter().map(|r| r.va).collect();
        let mape: Vec<f64> = rows.iter().map(|r| r.mape).collect();
        let (mise_med, mise_iqr) = median_iqr(&mise)?;
        let (ga_med, ga_iqr) = median_iqr(&ga)?;
        let (va_med, va_iqr) = median_iqr(&va)?;
        let (mape_med, mape_iqr) = median_iqr(&mape)?;
        let mut w = csv::Writer::from_path(out.join("aggregate.csv"))
            .map_err(pfqr::Error::Csv)?;
        w.write_record([
            "method",
            "criterion",
            "n",
            "noise",
            "snr",
            "reps",
            "mise_median",
            "mise_iqr",
            "ga_median",
            "ga_iqr",
            "va_median",
            "va_iqr",
            "mape_median",
            "mape_iqr",
        ])
        .map_err(pfqr::Error::Csv)?;
        w.write_record([
            method.to_string(),
            criterion.to_string(),
            n.to_string(),
            noise.to_string(),
            snr.to_string(),
            reps.to_string(),
            mise_med.to_string(),
            mise_iqr.to_string(),
            ga_med.to_string(),
            ga_iqr.to_string(),
            va_med.to_string(),
            va_iqr.to_string(),
            mape_med.to_string(),
            mape_iqr.to_string(),
        ])
        .map_err(pfqr::Error::Csv)?;
        w.flush().map_err(pfqr::Error::Io)?;
    }
    #[derive(Serialize)]
    struct RowProvenance {
        n: usize,
        noise: NoiseFamily,
        snr: f64,
        reps: usize,
        method: Method,
        criterion: Criterion,
        seed: u64,
        grid_size: usize,
        ratio: f64,
        grid_len: usize,
        wavelet: String,
        tau: f64,
        solver: SolverConfig,
    }
    write_provenance(
        &out,
        &RowProvenance {
            n,
            noise,
            snr,
            reps,
            method,
            criterion,
            seed,
            grid_size,
            ratio,
            grid_len,
            wavelet,
            tau,
            solver: cfg,
        },
    )?;
    let all_converged = rows.iter().all(|r| r.converged);
    check_strict(args.strict, all_converged)
}
