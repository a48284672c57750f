//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N (...): PASS/FAIL` line (visible with `--nocapture`).
//!
//! The Monte Carlo criteria (5-7) share generated repetitions through
//! lazily initialized statics so the expensive fits run once regardless of
//! test ordering; criterion 8 audits the stopping rule on every fit those
//! runs retain.

use ndarray::{Array1, Array2, Array3};
use pfqr::admm::{fit, kkt_residual, FitResult, SolverConfig};
use pfqr::model::{build_design, CoefficientSet, Dataset, PenaltySpec, QuantileLevels};
use pfqr::simgen::{NoiseFamily, SimConfig, TRUE_SUPPORT};
use pfqr::tuning::{self, Criterion, Method, TuningGrid};
use pfqr::wavelet::{self, WaveletFilter};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

fn median(values: &[f64]) -> f64 {
    tuning::quantile_summary(values).unwrap().median
}

// ---------------------------------------------------------------------------
// Criterion 1: wavelet round-trip and Parseval.

#[test]
fn criterion_1_wavelet_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_rt = 0.0f64;
    let mut worst_pv = 0.0f64;
    for filter in [WaveletFilter::haar(), WaveletFilter::sym6()] {
        for n in [8usize, 16, 64, 256] {
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let coeffs = wavelet::dwt(&x, &filter, wavelet::full_levels(n)).unwrap();
                let back = wavelet::idwt(&coeffs, &filter).unwrap();
                let rt = x
                    .iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nc: f64 = coeffs.values.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst_rt = worst_rt.max(rt);
                worst_pv = worst_pv.max((nx - nc).abs());
            }
        }
    }
    let pass = worst_rt < 1e-10 && worst_pv < 1e-10;
    report(
        1,
        "wavelet round-trip/Parseval",
        pass,
        &format!(
            "max round-trip {worst_rt:.2e}, max Parseval gap {worst_pv:.2e}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: proximal operator oracles.

#[test]
fn criterion_2_prox_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_check = 0.0f64;
    for _ in 0..1000 {
        let c = rng.gen_range(-3.0..3.0);
        let tau = rng.gen_range(0.05..0.95);
        let eta1 = rng.gen_range(0.2..5.0);
        let got = pfqr::prox::prox_check(c, tau, eta1).unwrap();
        // Grid minimization of rho_tau(r) + eta1/2 (c-r)^2 at step 1e-4.
        let lo = c.min(0.0) - 1.0 / eta1 - 0.5;
        let hi = c.max(0.0) + 1.0 / eta1 + 0.5;
        let steps = ((hi - lo) / 1e-4).ceil() as usize;
        let mut best = f64::INFINITY;
        let mut arg = lo;
        for s in 0..=steps {
            let r = lo + s as f64 * 1e-4;
            let rho = r * (tau - if r < 0.0 { 1.0 } else { 0.0 });
            let val = rho + eta1 / 2.0 * (c - r) * (c - r);
            if val < best {
                best = val;
                arg = r;
            }
        }
        worst_check = worst_check.max((got - arg).abs());
    }

    let mut worst_block = 0.0f64;
    for _ in 0..500 {
        let len = rng.gen_range(2..12);
        let c: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let t1 = rng.gen_range(0.0..0.8);
        let t2 = rng.gen_range(0.0..0.8);
        let b = pfqr::prox::prox_sgl_block(&c, t1, t2).unwrap();
        // Subgradient inclusion: c - b in t1 d||b||_1 + t2 d||b||_2.
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let resid = if bn > 0.0 {
            let mut sq = 0.0;
            for j in 0..len {
                let g = c[j] - b[j];
                let r = if b[j] != 0.0 {
                    g - t1 * b[j].signum() - t2 * b[j] / bn
                } else {
                    (g.abs() - t1).max(0.0)
                };
                sq += r * r;
            }
            sq.sqrt()
        } else {
            // Zero block: the soft-thresholded data must sit inside the
            // t2 ball.
            let soft: f64 = c
                .iter()
                .map(|v| {
                    let s = (v.abs() - t1).max(0.0);
                    s * s
                })
                .sum::<f64>()
                .sqrt();
            (soft - t2).max(0.0)
        };
        worst_block = worst_block.max(resid);
    }
    let pass = worst_check < 1e-4 && worst_block < 1e-8;
    report(
        2,
        "prox oracles",
        pass,
        &format!(
            "check prox max gap {worst_check:.2e}, block residual {worst_block:.2e}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: exact small-instance optimality.

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize, grid: usize, q: usize) -> Dataset {
    let curves = Array3::from_shape_fn((n, m, grid), |_| rng.gen_range(-1.0..1.0));
    let scalars = Array2::from_shape_fn((n, q), |_| rng.gen_range(-1.0..1.0));
    let response = Array1::from_shape_fn(n, |_| rng.gen_range(-2.0..2.0));
    Dataset::new(curves, scalars, response).unwrap()
}

/// Enumerates all interpolation fits through p = 1 + q points of a
/// scalar-only design and returns the best check-loss value: some optimal
/// quantile fit always interpolates a basic subset.
fn enumerate_median_optimum(data: &Dataset, tau: f64) -> f64 {
    let n = data.response.len();
    let q = data.scalars.ncols();
    let p = 1 + q;
    let idx: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut combo = vec![0usize; p];
    fn solve_and_score(
        combo: &[usize],
        data: &Dataset,
        tau: f64,
        best: &mut f64,
    ) {
        let p = combo.len();
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for (row, &i) in combo.iter().enumerate() {
            a[row][0] = 1.0;
            for j in 1..p {
                a[row][j] = data.scalars[[i, j - 1]];
            }
            b[row] = data.response[i];
        }
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&x, &z| a[x][col].abs().total_cmp(&a[z][col].abs()))
                .unwrap();
            if a[piv][col].abs() < 1e-12 {
                return;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..p {
                let f = a[row][col] / a[col][col];
                for cc in col..p {
                    a[row][cc] -= f * a[col][cc];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; p];
        for row in (0..p).rev() {
            let mut s = b[row];
            for cc in row + 1..p {
                s -= a[row][cc] * x[cc];
            }
            x[row] = s / a[row][row];
        }
        let mut obj = 0.0;
        for i in 0..data.response.len() {
            let mut fitted = x[0];
            for j in 1..p {
                fitted += data.scalars[[i, j - 1]] * x[j];
            }
            let e = data.response[i] - fitted;
            obj += e * (tau - if e < 0.0 { 1.0 } else { 0.0 });
        }
        if obj < *best {
            *best = obj;
        }
    }
    fn rec(
        idx: &[usize],
        start: usize,
        depth: usize,
        combo: &mut Vec<usize>,
        data: &Dataset,
        tau: f64,
        best: &mut f64,
    ) {
        if depth == combo.len() {
            solve_and_score(combo, data, tau, best);
            return;
        }
        for pos in start..idx.len() {
            combo[depth] = idx[pos];
            rec(idx, pos + 1, depth + 1, combo, data, tau, best);
        }
    }
    rec(&idx, 0, 0, &mut combo, data, tau, &mut best);
    best
}

fn small_instance_fits() -> (f64, f64, f64, f64, Vec<(FitResult, SolverConfig)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let filter = WaveletFilter::haar();
    let taus = QuantileLevels::single(0.5).unwrap();

    // Unpenalized median regression, n = 10, three free parameters.
    let data = random_dataset(&mut rng, 10, 0, 4, 2);
    let design = build_design(&data, &filter).unwrap();
    let cfg = SolverConfig {
        eps_abs: 1e-9,
        eps_rel: 1e-8,
        max_inner: 100_000,
        ..SolverConfig::default()
    };
    let pen0 = PenaltySpec::new(0.0, 0.0).unwrap();
    let r1 = fit(&design, &data.response, &taus, &pen0, &cfg).unwrap();
    let oracle = enumerate_median_optimum(&data, 0.5);

    // Penalized tiny instance with a KKT certificate.
    let data2 = random_dataset(&mut rng, 20, 2, 4, 1);
    let design2 = build_design(&data2, &filter).unwrap();
    let cfg2 = SolverConfig {
        eps_abs: 1e-7,
        eps_rel: 1e-6,
        max_inner: 2000,
        max_outer: 20_000,
        ..SolverConfig::default()
    };
    let pen2 = PenaltySpec::new(0.3, 0.3).unwrap();
    let r2 = fit(&design2, &data2.response, &taus, &pen2, &cfg2).unwrap();
    let kkt = kkt_residual(&r2.params, &design2, &data2.response, &taus, &pen2).unwrap();
    let y_l1: f64 = data2.response.iter().map(|v| v.abs()).sum();

    (
        r1.objective,
        oracle,
        kkt,
        1e-3 * (1.0 + y_l1),
        vec![(r1, cfg), (r2, cfg2)],
    )
}

#[test]
fn criterion_3_small_instance_optimality() {
    let start = Instant::now();
    let (obj, oracle, kkt, kkt_bound, _) = small_instance_fits();
    let pass = (obj - oracle).abs() < 1e-4 && kkt < kkt_bound;
    report(
        3,
        "small-instance optimality",
        pass,
        &format!(
            "median objective {obj:.6} vs enumeration {oracle:.6}, kkt {kkt:.2e} (bound {kkt_bound:.2e}), {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: SOCP equivalence.

#[test]
fn criterion_4_socp_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let taus = QuantileLevels::new(vec![0.25, 0.75]).unwrap();
    let filter = WaveletFilter::haar();
    let mut worst_gap = 0.0f64;
    let mut all_feasible = true;
    for _ in 0..5 {
        let data = random_dataset(&mut rng, 6, 2, 4, 1);
        let design = build_design(&data, &filter).unwrap();
        let pen = PenaltySpec::new(rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5)).unwrap();
        let prob = pfqr::socp::build_socp(&design, &data.response, &taus, &pen).unwrap();
        for _ in 0..10 {
            let mut params = CoefficientSet::zeros(2, 1, 2, 4);
            for v in params
                .alpha
                .iter_mut()
                .chain(&mut params.gamma)
                .chain(&mut params.theta)
            {
                *v = rng.gen_range(-1.0..1.0);
            }
            let point =
                pfqr::socp::lift(&params, &design, &data.response, &taus, &prob).unwrap();
            let rep = pfqr::socp::verify_feasible(&prob, &point, 1e-9).unwrap();
            all_feasible &= rep.feasible;
            let conic = prob.objective_at(&point);
            let primal =
                pfqr::model::objective(&params, &design, &data.response, &taus, &pen).unwrap();
            worst_gap = worst_gap.max((conic - primal).abs());
        }
    }
    let pass = worst_gap < 1e-9 && all_feasible;
    report(
        4,
        "conic reformulation equivalence",
        pass,
        &format!(
            "max objective gap {worst_gap:.2e}, all lifts feasible: {all_feasible}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 5-8: Monte Carlo runs at desk scale.

struct DeskOutcome {
    mise: f64,
    ise: Vec<f64>,
    ga: f64,
    stopping_ok: bool,
}

fn stopping_conforms(fit: &FitResult, cfg: &SolverConfig) -> bool {
    // A fit reported as converged must satisfy the residual formulas; a fit
    // reported as not converged is conforming by definition.
    if !fit.converged {
        return true;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let p = fit.params.theta.len();
    let q = fit.params.gamma.len();
    let k = fit.params.alpha.len();
    let bound_primal = (p as f64).sqrt() * cfg.eps_abs
        + cfg.eps_rel * norm(&fit.theta_dense).max(norm(&fit.params.theta));
    let bound_dual = ((p + q + k) as f64).sqrt() * cfg.eps_abs
        + cfg.eps_rel * cfg.eta * norm(&fit.dual);
    fit.primal_residual <= bound_primal + 1e-12 && fit.dual_residual <= bound_dual + 1e-12
}

/// One tuned run on a shared repetition: lambda path from the data-driven
/// anchor, grid search by the requested criterion, slope-function metrics.
fn tuned_outcome(
    train: &pfqr::simgen::SimulatedDataset,
    tune: &pfqr::simgen::SimulatedDataset,
    method: Method,
    criterion: Criterion,
    taus: &QuantileLevels,
    cfg: &SolverConfig,
    filter: &WaveletFilter,
) -> DeskOutcome {
    let design = build_design(&train.data, filter).unwrap();
    let anchor =
        tuning::lambda_anchor(method, &design, &train.data.response, taus, 0.5, cfg).unwrap();
    let grid = TuningGrid::log_spaced(anchor, 30, 0.5, criterion).unwrap();
    let result =
        tuning::grid_search(&train.data, &tune.data, &grid, method, taus, cfg, filter).unwrap();
    let beta_hat: Vec<Vec<f64>> = (0..result.best_fit.params.m)
        .map(|l| {
            pfqr::model::reconstruct_beta(result.best_fit.params.theta_block(l), filter).unwrap()
        })
        .collect();
    let (mise, ise) = pfqr::metrics::mise_ise(&beta_hat, &train.beta_true).unwrap();
    let ga = pfqr::metrics::group_accuracy(
        &result.best_fit.selected_blocks(),
        &TRUE_SUPPORT,
        train.data.m(),
    )
    .unwrap();
    DeskOutcome {
        mise,
        ise,
        ga,
        stopping_ok: stopping_conforms(&result.best_fit, cfg),
    }
}

fn gen_rep(n: usize, snr: f64, master: u64, rep: usize) -> (
    pfqr::simgen::SimulatedDataset,
    pfqr::simgen::SimulatedDataset,
) {
    let make = |stream: usize| {
        pfqr::simgen::gen_dataset(&SimConfig::new(
            n,
            snr,
            NoiseFamily::Normal,
            tuning::replicate_seed(master, 2 * rep + stream),
        ))
        .unwrap()
    };
    (make(0), make(1))
}

struct Shared56 {
    qsgl_gic: Vec<DeskOutcome>,
    ql_gic: Vec<DeskOutcome>,
    qgl_gic: Vec<DeskOutcome>,
    qsgl_gs_200: Vec<DeskOutcome>,
    qsgl_gs_400: Vec<DeskOutcome>,
}

static SHARED_56: OnceLock<Shared56> = OnceLock::new();
static SHARED_7: OnceLock<Vec<DeskOutcome>> = OnceLock::new();

const DESK_REPS: usize = 20;

fn shared_56() -> &'static Shared56 {
    SHARED_56.get_or_init(|| {
        let taus = QuantileLevels::single(0.5).unwrap();
        let cfg = SolverConfig::default();
        let filter = WaveletFilter::sym6();
        let mut out = Shared56 {
            qsgl_gic: Vec::new(),
            ql_gic: Vec::new(),
            qgl_gic: Vec::new(),
            qsgl_gs_200: Vec::new(),
            qsgl_gs_400: Vec::new(),
        };
        for rep in 0..DESK_REPS {
            let (train, tune) = gen_rep(200, 5.0, 56_200, rep);
            for (method, criterion, bucket) in [
                (Method::QSgl, Criterion::Gic, 0usize),
                (Method::QL, Criterion::Gic, 1),
                (Method::QGl, Criterion::Gic, 2),
                (Method::QSgl, Criterion::Validation, 3),
            ] {
                let o = tuned_outcome(&train, &tune, method, criterion, &taus, &cfg, &filter);
                match bucket {
                    0 => out.qsgl_gic.push(o),
                    1 => out.ql_gic.push(o),
                    2 => out.qgl_gic.push(o),
                    _ => out.qsgl_gs_200.push(o),
                }
            }
        }
        for rep in 0..DESK_REPS {
            let (train, tune) = gen_rep(400, 5.0, 56_400, rep);
            out.qsgl_gs_400.push(tuned_outcome(
                &train,
                &tune,
                Method::QSgl,
                Criterion::Validation,
                &taus,
                &cfg,
                &filter,
            ));
        }
        out
    })
}

fn shared_7() -> &'static Vec<DeskOutcome> {
    SHARED_7.get_or_init(|| {
        let taus = QuantileLevels::single(0.5).unwrap();
        let cfg = SolverConfig::default();
        let filter = WaveletFilter::sym6();
        (0..10)
            .map(|rep| {
                let (train, tune) = gen_rep(200, 10.0, 700, rep);
                tuned_outcome(
                    &train,
                    &tune,
                    Method::QGl,
                    Criterion::Validation,
                    &taus,
                    &cfg,
                    &filter,
                )
            })
            .collect()
    })
}

#[test]
fn criterion_5_paper_trend_desk_scale() {
    let start = Instant::now();
    let s = shared_56();
    let m_qsgl = median(&s.qsgl_gic.iter().map(|o| o.mise).collect::<Vec<_>>());
    let m_ql = median(&s.ql_gic.iter().map(|o| o.mise).collect::<Vec<_>>());
    let m_qgl = median(&s.qgl_gic.iter().map(|o| o.mise).collect::<Vec<_>>());
    let ise1 = median(&s.qsgl_gic.iter().map(|o| o.ise[0]).collect::<Vec<_>>());
    let ise2 = median(&s.qsgl_gic.iter().map(|o| o.ise[1]).collect::<Vec<_>>());
    let pass = m_qsgl < m_ql
        && m_qsgl < m_qgl
        && (0.7..=3.0).contains(&m_qsgl)
        && ise1 <= ise2;
    report(
        5,
        "sparse-group trend",
        pass,
        &format!(
            "median MISE qsgl {m_qsgl:.3} vs ql {m_ql:.3} / qgl {m_qgl:.3}; ISE1 {ise1:.3} vs ISE2 {ise2:.3}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6_consistency_trend() {
    let start = Instant::now();
    let s = shared_56();
    let m200 = median(&s.qsgl_gs_200.iter().map(|o| o.mise).collect::<Vec<_>>());
    let m400 = median(&s.qsgl_gs_400.iter().map(|o| o.mise).collect::<Vec<_>>());
    let pass = m400 < m200;
    report(
        6,
        "error shrinks with n",
        pass,
        &format!(
            "median MISE n=400 {m400:.3} < n=200 {m200:.3}: {pass}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_group_selection() {
    let start = Instant::now();
    let s = shared_7();
    let ga = median(&s.iter().map(|o| o.ga).collect::<Vec<_>>());
    let pass = ga >= 0.9;
    report(
        7,
        "group selection accuracy",
        pass,
        &format!("median GA {ga:.3}; {:.0}s", start.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_8_stopping_rule_conformance() {
    let start = Instant::now();
    let mut checked = 0usize;
    let mut violations = 0usize;
    let s = shared_56();
    for o in s
        .qsgl_gic
        .iter()
        .chain(&s.ql_gic)
        .chain(&s.qgl_gic)
        .chain(&s.qsgl_gs_200)
        .chain(&s.qsgl_gs_400)
        .chain(shared_7().iter())
    {
        checked += 1;
        if !o.stopping_ok {
            violations += 1;
        }
    }
    let (_, _, _, _, small_fits) = small_instance_fits();
    for (f, cfg) in &small_fits {
        checked += 1;
        if !stopping_conforms(f, cfg) {
            violations += 1;
        }
    }
    let pass = violations == 0;
    report(
        8,
        "stopping-rule conformance",
        pass,
        &format!(
            "{checked} fits audited, {violations} violations; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: reproduction determinism across parallelism degrees.

#[test]
fn criterion_9_reproduce_determinism() {
    let start = Instant::now();
    let root = std::env::temp_dir().join(format!("pfqr-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let out_dir = root.join(format!("jobs{jobs}"));
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_pfqr"))
            .args([
                "reproduce",
                "table1-row",
                "--n",
                "16",
                "--noise",
                "normal",
                "--snr",
                "5",
                "--reps",
                "4",
                "--method",
                "qsgl",
                "--seed",
                "99",
                "--grid-size",
                "5",
                "--grid-len",
                "16",
                "--wavelet",
                "haar",
                "--jobs",
                jobs,
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .expect("spawn pfqr");
        assert!(
            out.status.success(),
            "reproduce failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((
            std::fs::read(out_dir.join("aggregate.csv")).unwrap(),
            std::fs::read(out_dir.join("per_rep.csv")).unwrap(),
        ));
    }
    let pass = outputs[0] == outputs[1];
    report(
        9,
        "reproduction determinism",
        pass,
        &format!(
            "aggregate CSVs identical across --jobs 1/4: {pass}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
    std::fs::remove_dir_all(&root).unwrap();
}
