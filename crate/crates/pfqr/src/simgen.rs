//! Seeded simulation generator: correlated functional covariates, four
//! wavelet-sparse true slope functions, two scalar covariates and four
//! response-noise families with an SNR-calibrated scale.

use crate::model::Dataset;
use crate::wavelet::{self, FilterFamily, WaveletFilter};
use crate::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Cauchy, Distribution, Normal, StudentT};
use statrs::distribution::{Beta, Continuous};

pub const NUM_PREDICTORS: usize = 12;
pub const NUM_SCALARS: usize = 2;
pub const GAMMA_TRUE: [f64; 2] = [0.32 / 256.0, 0.32 / 256.0];
/// Predictors whose true slope is nonzero (0-based).
pub const TRUE_SUPPORT: [usize; 4] = [0, 1, 2, 3];

/// Response noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    /// Standard normal.
    Normal,
    /// 0.95 N(0,1) + 0.05 N(0, variance 10).
    Mixture,
    /// Student t with 3 degrees of freedom.
    T3,
    /// Standard Cauchy; sigma acts as the scale parameter.
    Cauchy,
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "1" => Ok(NoiseFamily::Normal),
            "mixture" | "2" => Ok(NoiseFamily::Mixture),
            "t3" | "3" => Ok(NoiseFamily::T3),
            "cauchy" | "4" => Ok(NoiseFamily::Cauchy),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise family '{other}' (expected normal|mixture|t3|cauchy or 1..4)"
            ))),
        }
    }
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseFamily::Normal => "normal",
            NoiseFamily::Mixture => "mixture",
            NoiseFamily::T3 => "t3",
            NoiseFamily::Cauchy => "cauchy",
        };
        f.write_str(s)
    }
}

/// Generator configuration; identical configs give bitwise-identical output.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub snr: f64,
    pub noise: NoiseFamily,
    pub seed: u64,
    pub grid_len: usize,
    pub filter: FilterFamily,
}

impl SimConfig {
    pub fn new(n: usize, snr: f64, noise: NoiseFamily, seed: u64) -> Self {
        SimConfig {
            n,
            snr,
            noise,
            seed,
            grid_len: 256,
            filter: FilterFamily::Sym6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if !self.grid_len.is_power_of_two() {
            return Err(Error::InvalidArgument("grid length must be dyadic".into()));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidArgument("snr must be positive".into()));
        }
        Ok(())
    }
}

/// A generated dataset plus the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub data: Dataset,
    pub beta_true: Vec<Vec<f64>>,
    pub theta_true: Vec<Vec<f64>>,
    pub gamma_true: [f64; 2],
    pub sigma: f64,
    pub noiseless_response: Vec<f64>,
}

/// Midpoint grid of `n` points on [lo, hi].
fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| lo + (j as f64 + 0.5) / n as f64 * (hi - lo))
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The four template functions behind the nonzero slopes, on [0,1].
fn template(l: usize, t: f64, beta_a: &Beta, beta_b: &Beta) -> f64 {
    use std::f64::consts::PI;
    match l {
        0 => 0.03 * beta_a.pdf(t) - 0.05 * beta_b.pdf(t),
        1 => 4.0 * (4.0 * PI * t).sin() - sign(t - 0.3) - sign(0.72 - t),
        2 => -3.0 * (2.0 * PI * t).cos() + 3.0 * (t * t).exp() / (t * t * t + 1.0),
        3 => {
            let s = (2.0 * PI * t).sin();
            let c = (2.0 * PI * t).cos();
            0.1 * s + 0.2 * c + 0.3 * s * s + 0.4 * c * c * c + 0.5 * s * s * s
        }
        _ => unreachable!(),
    }
}

/// True slopes: wavelet hard-thresholding (|coefficient| > 0.1) of the four
/// templates, rescaled to unit function L2 norm; the remaining eight slopes
/// are identically zero. Returns (curves, wavelet coefficient blocks).
pub fn gen_true_betas(
    filter: &WaveletFilter,
    n_grid: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !n_grid.is_power_of_two() {
        return Err(Error::InvalidArgument("grid length must be dyadic".into()));
    }
    let beta_a = Beta::new(20.0, 60.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let beta_b = Beta::new(50.0, 20.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ts = grid(0.0, 1.0, n_grid);
    let levels = wavelet::full_levels(n_grid);
    let mut betas = Vec::with_capacity(NUM_PREDICTORS);
    let mut thetas = Vec::with_capacity(NUM_PREDICTORS);
    for l in 0..NUM_PREDICTORS {
        if l >= 4 {
            betas.push(vec![0.0; n_grid]);
            thetas.push(vec![0.0; n_grid]);
            continue;
        }
        let f: Vec<f64> = ts.iter().map(|t| template(l, *t, &beta_a, &beta_b)).collect();
        let mut coeffs = wavelet::dwt(&f, filter, levels)?;
        for c in coeffs.values.iter_mut() {
            if c.abs() <= 0.1 {
                *c = 0.0;
            }
        }
        let raw = wavelet::idwt(&coeffs, filter)?;
        let norm = crate::metrics::function_l2_norm(&raw);
        if norm < 1e-12 {
            return Err(Error::Degenerate(format!(
                "thresholded slope {l} vanished"
            )));
        }
        betas.push(raw.iter().map(|v| v / norm).collect());
        thetas.push(coeffs.values.iter().map(|v| v / norm).collect());
    }
    Ok((betas, thetas))
}

/// Mixing weights from z-processes to observed curves; the squared weights
/// of each driven predictor sum to one.
const W1: (f64, f64) = (0.916_515_138_991_168, 0.4); // sqrt(.84)
const W2: (f64, f64, f64) = (0.989_949_493_661_166_5, 0.1, 0.1); // sqrt(.98)
const W5: (f64, f64) = (0.994_987_437_106_619_9, 0.1); // sqrt(.99)

/// Applies the linear mixing from omega processes to predictor curves.
pub(crate) fn mix_omegas(omega: &Array3<f64>) -> Array3<f64> {
    let (n, m, nn) = omega.dim();
    assert_eq!(m, NUM_PREDICTORS);
    let mut x = omega.clone();
    for i in 0..n {
        for j in 0..nn {
            x[[i, 0, j]] = W1.0 * omega[[i, 0, j]] + W1.1 * omega[[i, 5, j]];
            x[[i, 1, j]] =
                W2.0 * omega[[i, 1, j]] + W2.1 * omega[[i, 0, j]] + W2.2 * omega[[i, 4, j]];
            x[[i, 2, j]] = W1.0 * omega[[i, 2, j]] + W1.1 * omega[[i, 3, j]];
            x[[i, 4, j]] = W5.0 * omega[[i, 4, j]] + W5.1 * omega[[i, 1, j]];
        }
    }
    x
}

/// Noise scale from the signal-to-noise ratio: |mean(signal)| / snr.
/// An infinite ratio gives exactly zero noise.
pub fn sigma_from_snr(noiseless: &[f64], snr: f64, _noise: NoiseFamily) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument("snr must be positive".into()));
    }
    if snr.is_infinite() {
        return Ok(0.0);
    }
    let mu = noiseless.iter().sum::<f64>() / noiseless.len().max(1) as f64;
    if mu.abs() < 1e-8 {
        return Err(Error::Degenerate(format!(
            "signal mean {mu:.3e} too close to zero; SNR is undefined"
        )));
    }
    Ok(mu.abs() / snr)
}

/// Generates one dataset. All randomness comes from a single seeded stream
/// with a fixed draw order: scalar covariates, then the z-process parameters
/// (sample-major), then the per-(sample, predictor) curve shifts, then the
/// response noise.
pub fn gen_dataset(cfg: &SimConfig) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let n = cfg.n;
    let nn = cfg.grid_len;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // Scalar covariates.
    let mut scalars = Array2::zeros((n, NUM_SCALARS));
    for i in 0..n {
        scalars[[i, 0]] = std_normal.sample(&mut rng);
        scalars[[i, 1]] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    }

    // Latent z-processes on their own domains, sampled at nn points each.
    let mut z = Array3::zeros((n, NUM_PREDICTORS, nn));
    let normal = |mean: f64, sd: f64| Normal::new(mean, sd).unwrap();
    for i in 0..n {
        for l in 0..NUM_PREDICTORS {
            match l {
                0 => {
                    let a1 = normal(-4.0, 3.0).sample(&mut rng);
                    let a2 = normal(7.0, 1.5).sample(&mut rng);
                    for (j, t) in grid(0.0, 1.0, nn).iter().enumerate() {
                        z[[i, l, j]] =
                            (2.0 * std::f64::consts::PI * (t - a1)).cos() + a2;
                    }
                }
                1 => {
                    let b1 = normal(-3.0, 1.2).sample(&mut rng);
                    let b2 = normal(2.0, 0.5).sample(&mut rng);
                    let b3 = normal(-2.0, 1.0).sample(&mut rng);
                    for (j, t) in grid(-1.0, 1.0, nn).iter().enumerate() {
                        z[[i, l, j]] = b1 * t * t * t + b2 * t * t + b3 * t;
                    }
                }
                2 => {
                    let c1 = normal(-2.0, 1.0).sample(&mut rng);
                    let c2 = normal(3.0, 1.5).sample(&mut rng);
                    for (j, t) in
                        grid(0.0, std::f64::consts::PI / 3.0, nn).iter().enumerate()
                    {
                        z[[i, l, j]] = (2.0 * (t - c1)).sin() + c2 * t;
                    }
                }
                3 => {
                    let d1 = rng.gen_range(2.0..7.0);
                    let d2 = normal(2.0, 0.4).sample(&mut rng);
                    for (j, t) in grid(-2.0, 1.0, nn).iter().enumerate() {
                        z[[i, l, j]] = d1 * (2.0 * t).cos() + d2 * t;
                    }
                }
                4 => {
                    let e1 = rng.gen_range(3.0..7.0);
                    let e2 = std_normal.sample(&mut rng);
                    for (j, t) in
                        grid(0.0, std::f64::consts::PI / 3.0, nn).iter().enumerate()
                    {
                        z[[i, l, j]] = e1 * (std::f64::consts::PI * t).sin() + e2;
                    }
                }
                5 => {
                    let f1 = normal(4.0, 2.0).sample(&mut rng);
                    let f2 = normal(-3.0, 0.5).sample(&mut rng);
                    let f3 = std_normal.sample(&mut rng);
                    for (j, t) in grid(-1.0, 1.0, nn).iter().enumerate() {
                        z[[i, l, j]] = f1 * (-t / 3.0).exp() + f2 * t + f3;
                    }
                }
                _ => {
                    // 49-term random cosine expansion plus a random level.
                    let g: Vec<f64> = (1..=49)
                        .map(|jj| {
                            normal(0.0, 1.0 / (jj as f64 + 1.0)).sample(&mut rng)
                        })
                        .collect();
                    let h = std_normal.sample(&mut rng);
                    for (j, t) in grid(0.0, 1.0, nn).iter().enumerate() {
                        let mut s = 0.0;
                        for (jj, gj) in g.iter().enumerate() {
                            s += ((jj + 1) as f64 * std::f64::consts::PI * t).cos()
                                * gj;
                        }
                        z[[i, l, j]] = 5.0 * 2f64.sqrt() * s + 5.0 * h;
                    }
                }
            }
        }
    }

    // Batch-wide range of each z-process for the shift scale.
    let mut ranges = [0.0f64; NUM_PREDICTORS];
    for l in 0..NUM_PREDICTORS {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..nn {
                lo = lo.min(z[[i, l, j]]);
                hi = hi.max(z[[i, l, j]]);
            }
        }
        ranges[l] = hi - lo;
    }

    // Per-(sample, predictor) scalar shifts.
    let mut omega = z;
    for i in 0..n {
        for l in 0..NUM_PREDICTORS {
            let eps = normal(0.0, 0.05 * ranges[l]).sample(&mut rng);
            for j in 0..nn {
                omega[[i, l, j]] += eps;
            }
        }
    }

    let curves = mix_omegas(&omega);

    let (beta_true, theta_true) = gen_true_betas(&WaveletFilter::new(cfg.filter)?, nn)?;
    let mut noiseless = vec![0.0; n];
    for i in 0..n {
        let mut acc = GAMMA_TRUE[0] * scalars[[i, 0]] + GAMMA_TRUE[1] * scalars[[i, 1]];
        for l in 0..NUM_PREDICTORS {
            let mut s = 0.0;
            for j in 0..nn {
                s += curves[[i, l, j]] * beta_true[l][j];
            }
            acc += s / nn as f64;
        }
        noiseless[i] = acc;
    }

    let sigma = sigma_from_snr(&noiseless, cfg.snr, cfg.noise)?;
    let mut response = Array1::zeros(n);
    for i in 0..n {
        let eps = match cfg.noise {
            NoiseFamily::Normal => std_normal.sample(&mut rng),
            NoiseFamily::Mixture => {
                let wide = rng.gen_bool(0.05);
                let draw = std_normal.sample(&mut rng);
                if wide {
                    draw * 10f64.sqrt()
                } else {
                    draw
                }
            }
            NoiseFamily::T3 => StudentT::new(3.0).unwrap().sample(&mut rng),
            NoiseFamily::Cauchy => Cauchy::new(0.0, 1.0).unwrap().sample(&mut rng),
        };
        response[i] = noiseless[i] + sigma * eps;
    }

    let data = Dataset::new(curves, scalars, response)?;
    Ok(SimulatedDataset {
        data,
        beta_true,
        theta_true,
        gamma_true: GAMMA_TRUE,
        sigma,
        noiseless_response: noiseless,
    })
}
