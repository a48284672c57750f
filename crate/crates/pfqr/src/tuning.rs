//! Tuning-parameter selection (information criterion and validation-set
//! search along a penalty path) and bootstrap stability selection.

use crate::admm::{FitResult, Solver, SolverConfig};
use crate::model::{self, build_design, Dataset, Design, PenaltySpec, QuantileLevels};
use crate::wavelet::WaveletFilter;
use crate::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

/// Penalization method; all three share one solver and differ only in how a
/// grid value maps to (lambda1, lambda2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Sparse group lasso: lambda1 = ratio * lambda2.
    QSgl,
    /// Lasso: lambda2 = 0, lambda1 swept.
    QL,
    /// Group lasso: lambda1 = 0, lambda2 swept.
    QGl,
}

impl Method {
    pub fn penalty(self, value: f64, ratio: f64) -> Result<PenaltySpec> {
        match self {
            Method::QSgl => PenaltySpec::new(ratio * value, value),
            Method::QL => PenaltySpec::new(value, 0.0),
            Method::QGl => PenaltySpec::new(0.0, value),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qsgl" => Ok(Method::QSgl),
            "ql" => Ok(Method::QL),
            "qgl" => Ok(Method::QGl),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected qsgl|ql|qgl)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::QSgl => "qsgl",
            Method::QL => "ql",
            Method::QGl => "qgl",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Gic,
    Validation,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gic" => Ok(Criterion::Gic),
            "validation" => Ok(Criterion::Validation),
            other => Err(Error::InvalidArgument(format!(
                "unknown criterion '{other}' (expected gic|validation)"
            ))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Gic => "gic",
            Criterion::Validation => "validation",
        })
    }
}

/// A descending penalty grid with a fixed lambda1/lambda2 ratio.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TuningGrid {
    pub lambda2_values: Vec<f64>,
    pub ratio: f64,
    pub criterion: Criterion,
}

impl TuningGrid {
    pub fn new(lambda2_values: Vec<f64>, ratio: f64, criterion: Criterion) -> Result<Self> {
        if lambda2_values.is_empty() {
            return Err(Error::InvalidArgument("empty tuning grid".into()));
        }
        if lambda2_values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "grid values must be positive and finite".into(),
            ));
        }
        if lambda2_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "grid values must be strictly descending".into(),
            ));
        }
        if !(ratio >= 0.0) {
            return Err(Error::InvalidArgument("ratio must be nonnegative".into()));
        }
        Ok(TuningGrid {
            lambda2_values,
            ratio,
            criterion,
        })
    }

    /// Default grid: `count` log-spaced values from `anchor` down to
    /// 1e-3 * anchor.
    pub fn log_spaced(
        anchor: f64,
        count: usize,
        ratio: f64,
        criterion: Criterion,
    ) -> Result<Self> {
        if !(anchor > 0.0) || count == 0 {
            return Err(Error::InvalidArgument(
                "anchor must be positive and count >= 1".into(),
            ));
        }
        let values = if count == 1 {
            vec![anchor]
        } else {
            let lo = (1e-3 * anchor).ln();
            let hi = anchor.ln();
            (0..count)
                .map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp())
                .collect()
        };
        TuningGrid::new(values, ratio, criterion)
    }
}

/// GIC value for a fit; an interpolating fit (zero average loss at some
/// level) is reported distinctly and compares below every finite score.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GicScore {
    pub value: f64,
    pub zero_loss: bool,
    pub support_size: usize,
}

/// Generalized information criterion: mean over quantile levels of the log
/// average check loss, plus phi_n times the exact support size.
pub fn gic(
    fit: &FitResult,
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    phi_n: f64,
) -> Result<GicScore> {
    if !(phi_n > 0.0) {
        return Err(Error::InvalidArgument("phi_n must be positive".into()));
    }
    model::check_model_dims(&fit.params, design, y, taus)?;
    let n = design.n();
    let mut log_loss_sum = 0.0;
    let mut zero_loss = false;
    for (kk, &tau) in taus.taus().iter().enumerate() {
        let fitted = model::predict_quantile(&fit.params, design, kk)?;
        let mut loss = 0.0;
        for i in 0..n {
            loss += model::check_loss(y[i] - fitted[i], tau)?;
        }
        let mean = loss / n as f64;
        if mean <= 0.0 {
            zero_loss = true;
        } else {
            log_loss_sum += mean.ln();
        }
    }
    let support_size = fit.support_size();
    let value = if zero_loss {
        f64::NEG_INFINITY
    } else {
        log_loss_sum / taus.k() as f64 + phi_n * support_size as f64
    };
    Ok(GicScore {
        value,
        zero_loss,
        support_size,
    })
}

/// Default GIC penalty rate: p_n = ln(ln n) ln(ln p) / (10 n), scaled by 5
/// for the sparse-group-lasso and lasso methods.
pub fn phi_n_default(n: usize, p: usize, method: Method) -> Result<f64> {
    if n < 3 || p < 3 {
        return Err(Error::InvalidArgument(
            "n and p must both be at least 3 for the nested logarithms".into(),
        ));
    }
    let p_n = (n as f64).ln().ln() * (p as f64).ln().ln() / (10.0 * n as f64);
    Ok(match method {
        Method::QSgl | Method::QL => 5.0 * p_n,
        Method::QGl => p_n,
    })
}

/// Check-loss subgradient of the intercept-and-scalars-only fit, as one
/// vector over the functional coefficients (summed over quantile levels).
fn null_fit_gradient(
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let n = design.n();
    let p = design.m * design.grid_len;
    // Fit with the functional part removed.
    let mut rows = Array2::zeros((n, 1 + design.q));
    for i in 0..n {
        rows[[i, 0]] = 1.0;
        for (j, uj) in design.u_row(i).iter().enumerate() {
            rows[[i, 1 + j]] = *uj;
        }
    }
    let null_design = Design {
        rows,
        m: 0,
        grid_len: design.grid_len,
        q: design.q,
    };
    let null_cfg = SolverConfig {
        eps_abs: cfg.eps_abs.min(1e-6),
        eps_rel: cfg.eps_rel.min(1e-5),
        max_inner: cfg.max_inner.max(2000),
        ..*cfg
    };
    let null_fit = crate::admm::fit(
        &null_design,
        y,
        taus,
        &PenaltySpec::new(0.0, 0.0)?,
        &null_cfg,
    )?;

    let mut g = vec![0.0; p];
    for (kk, &tau) in taus.taus().iter().enumerate() {
        let fitted =
            model::predict_quantile(&null_fit.params, &null_design, kk)?;
        for i in 0..n {
            let e = y[i] - fitted[i];
            let s = if e < 0.0 { tau - 1.0 } else { tau };
            for (j, vj) in design.v_row(i).iter().enumerate() {
                g[j] -= s * vj;
            }
        }
    }
    Ok(g)
}

fn block_norm(g: &[f64], l: usize, nn: usize) -> f64 {
    g[l * nn..(l + 1) * nn]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Smallest lambda2 (with lambda1 = ratio * lambda2) at which the solver
/// returns an all-zero functional estimate, found by bisection to 1e-6
/// relative. The closed-form subdifferential bound only seeds the search:
/// check-loss subgradients are free at the interpolated points of the null
/// fit, so the sign-based gradient can misstate the exact threshold.
pub fn lambda_max(
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    ratio: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let method = if ratio == 0.0 { Method::QGl } else { Method::QSgl };
    smallest_zeroing_penalty(method, design, y, taus, ratio, cfg)
}

/// Grid anchor for each method: the smallest penalty zeroing every block.
pub fn lambda_anchor(
    method: Method,
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    ratio: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    smallest_zeroing_penalty(method, design, y, taus, ratio, cfg)
}

fn smallest_zeroing_penalty(
    method: Method,
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    ratio: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    if design.m == 0 {
        return Err(Error::Degenerate("no functional predictors".into()));
    }
    let g = null_fit_gradient(design, y, taus, cfg)?;
    let nn = design.grid_len;
    let seed = match method {
        Method::QL => g.iter().fold(0.0f64, |a, b| a.max(b.abs())),
        _ => (0..design.m)
            .map(|l| block_norm(&g, l, nn))
            .fold(0.0f64, f64::max),
    };
    if seed == 0.0 {
        return Err(Error::Degenerate("zero gradient at the null fit".into()));
    }

    let solver = Solver::new(design, y, taus, *cfg)?;
    let mut state = solver.fresh_state();
    let mut is_zero = |value: f64| -> Result<bool> {
        let pen = method.penalty(value, ratio)?;
        let fit = solver.fit_from(&pen, &mut state, None)?;
        Ok(fit.params.theta.iter().all(|v| *v == 0.0))
    };

    let mut hi = seed;
    let mut grow = 0;
    while !is_zero(hi)? {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Degenerate(
                "no zeroing penalty found; solver may not be converging".into(),
            ));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if is_zero(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// One grid point of a tuning path.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathEntry {
    pub lambda1: f64,
    pub lambda2: f64,
    pub objective: f64,
    pub support_size: usize,
    pub selected_blocks: Vec<usize>,
    pub criterion_value: f64,
    pub zero_loss: bool,
    pub converged: bool,
}

/// Outcome of a grid search.
#[derive(Debug, Clone)]
pub struct TuningResult {
    pub lambda1: f64,
    pub lambda2: f64,
    pub best_index: usize,
    pub path: Vec<PathEntry>,
    pub best_fit: FitResult,
}

/// Sweeps the grid from the largest penalty down with warm starts and picks
/// the entry minimizing the criterion; ties keep the larger penalty.
pub fn grid_search(
    data_train: &Dataset,
    data_tune: &Dataset,
    grid: &TuningGrid,
    method: Method,
    taus: &QuantileLevels,
    cfg: &SolverConfig,
    filter: &WaveletFilter,
) -> Result<TuningResult> {
    if data_train.m() != data_tune.m()
        || data_train.grid_len() != data_tune.grid_len()
        || data_train.q() != data_tune.q()
    {
        return Err(Error::Dimension(
            "training and tuning datasets must share m, N and q".into(),
        ));
    }
    let design_train = build_design(data_train, filter)?;
    let design_tune = build_design(data_tune, filter)?;
    let y_train = &data_train.response;
    let y_tune = &data_tune.response;
    let solver = Solver::new(&design_train, y_train, taus, *cfg)?;
    let phi_n = phi_n_default(design_train.n(), design_train.p(), method)?;

    let mut state = solver.fresh_state();
    let mut path = Vec::with_capacity(grid.lambda2_values.len());
    let mut best: Option<(usize, f64, FitResult)> = None;
    for (idx, &value) in grid.lambda2_values.iter().enumerate() {
        let pen = method.penalty(value, grid.ratio)?;
        let fit = solver.fit_from(&pen, &mut state, None)?;
        let (criterion_value, zero_loss) = match grid.criterion {
            Criterion::Gic => {
                let score = gic(&fit, &design_train, y_train, taus, phi_n)?;
                (score.value, score.zero_loss)
            }
            Criterion::Validation => {
                let mut loss = 0.0;
                for (kk, &tau) in taus.taus().iter().enumerate() {
                    let fitted =
                        model::predict_quantile(&fit.params, &design_tune, kk)?;
                    for i in 0..design_tune.n() {
                        loss += model::check_loss(y_tune[i] - fitted[i], tau)?;
                    }
                }
                (
                    loss / (taus.k() as f64 * design_tune.n() as f64),
                    false,
                )
            }
        };
        path.push(PathEntry {
            lambda1: pen.lambda1,
            lambda2: pen.lambda2,
            objective: fit.objective,
            support_size: fit.support_size(),
            selected_blocks: fit.selected_blocks(),
            criterion_value,
            zero_loss,
            converged: fit.converged,
        });
        let better = match &best {
            None => true,
            // Strict improvement only: descending sweep keeps the larger
            // penalty on ties.
            Some((_, best_value, _)) => criterion_value < *best_value,
        };
        if better {
            best = Some((idx, criterion_value, fit));
        }
    }
    let (best_index, _, best_fit) = best.expect("non-empty grid");
    debug_assert_eq!(
        best_index,
        select_best(&path.iter().map(|e| e.criterion_value).collect::<Vec<_>>())
    );
    Ok(TuningResult {
        lambda1: path[best_index].lambda1,
        lambda2: path[best_index].lambda2,
        best_index,
        path,
        best_fit,
    })
}

/// Index of the first strict minimum; on exact ties the earlier entry wins,
/// which on a descending penalty grid keeps the larger (sparser) penalty.
pub(crate) fn select_best(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Five-number summary used for box-plot exports.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantileSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantile_summary(values: &[f64]) -> Result<QuantileSummary> {
    if values.is_empty() {
        return Err(Error::Degenerate("no values to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let at = |p: f64| -> f64 {
        // Linear interpolation between closest ranks.
        let h = p * (sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Ok(QuantileSummary {
        min: sorted[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: *sorted.last().unwrap(),
    })
}

/// Bootstrap stability-selection report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StabilityReport {
    /// Function-space L2 norm of each reconstructed slope, per replicate
    /// (replicate-major).
    pub norms: Vec<Vec<f64>>,
    pub median_norms: Vec<f64>,
    pub selected: Vec<usize>,
    pub summaries: Vec<QuantileSummary>,
    /// Replicates whose resampled response was (numerically) constant; they
    /// contribute all-zero norms.
    pub degenerate_reps: Vec<usize>,
}

/// Per-replicate seed derivation shared by the library loop and any caller
/// that fans replicates out in parallel.
pub fn replicate_seed(master: u64, rep: usize) -> u64 {
    master.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One bootstrap replicate: resample with replacement, tune by GIC, fit,
/// and return the function-space norms of the reconstructed slopes.
/// Returns `None` when the resampled response is constant.
pub fn stability_replicate(
    data: &Dataset,
    taus: &QuantileLevels,
    grid: &TuningGrid,
    method: Method,
    cfg: &SolverConfig,
    filter: &WaveletFilter,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    let n = data.n();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut curves = Array3::zeros(data.curves.dim());
    let mut scalars = Array2::zeros(data.scalars.dim());
    let mut response = Array1::zeros(n);
    for (row, &i) in idx.iter().enumerate() {
        curves
            .index_axis_mut(ndarray::Axis(0), row)
            .assign(&data.curves.index_axis(ndarray::Axis(0), i));
        scalars
            .index_axis_mut(ndarray::Axis(0), row)
            .assign(&data.scalars.index_axis(ndarray::Axis(0), i));
        response[row] = data.response[i];
    }
    let spread = response.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b))
        - response.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if spread < 1e-12 {
        return Ok(None);
    }
    let boot = Dataset::new(curves, scalars, response)?;
    let gic_grid = TuningGrid {
        criterion: Criterion::Gic,
        ..grid.clone()
    };
    let tuned = grid_search(&boot, &boot, &gic_grid, method, taus, cfg, filter)?;
    let mut norms = Vec::with_capacity(data.m());
    for l in 0..data.m() {
        let beta =
            model::reconstruct_beta(tuned.best_fit.params.theta_block(l), filter)?;
        norms.push(crate::metrics::function_l2_norm(&beta));
    }
    Ok(Some(norms))
}

/// Runs `b` bootstrap replicates and selects predictors whose median slope
/// norm exceeds `norm_threshold`.
pub fn stability_select(
    data: &Dataset,
    taus: &QuantileLevels,
    grid: &TuningGrid,
    method: Method,
    b: usize,
    norm_threshold: f64,
    seed: u64,
    cfg: &SolverConfig,
    filter: &WaveletFilter,
) -> Result<StabilityReport> {
    if b == 0 {
        return Err(Error::InvalidArgument("B must be at least 1".into()));
    }
    let m = data.m();
    let mut norms = Vec::with_capacity(b);
    let mut degenerate_reps = Vec::new();
    for rep in 0..b {
        match stability_replicate(
            data,
            taus,
            grid,
            method,
            cfg,
            filter,
            replicate_seed(seed, rep),
        )? {
            Some(rep_norms) => norms.push(rep_norms),
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
        let summary = quantile_summary(&col)?;
        median_norms.push(summary.median);
        summaries.push(summary);
    }
    let selected = (0..m)
        .filter(|l| median_norms[*l] > norm_threshold)
        .collect();
    Ok(StabilityReport {
        norms,
        median_norms,
        selected,
        summaries,
        degenerate_reps,
    })
}
