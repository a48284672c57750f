//! Data model, wavelet design matrix, check loss, sparse group lasso penalty,
//! objective, prediction and slope reconstruction.

use crate::wavelet::{self, WaveletFilter};
use crate::{Error, Result};
use ndarray::{Array1, Array2, Array3, ArrayView1};

/// Observed data: n samples of m curves on an N-point grid, q scalar
/// covariates and a scalar response.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// n x m x N curve samples.
    pub curves: Array3<f64>,
    /// n x q scalar covariates.
    pub scalars: Array2<f64>,
    /// Length-n response.
    pub response: Array1<f64>,
}

impl Dataset {
    pub fn new(curves: Array3<f64>, scalars: Array2<f64>, response: Array1<f64>) -> Result<Self> {
        let (n, _m, grid) = curves.dim();
        if n == 0 {
            return Err(Error::Dimension("empty dataset".into()));
        }
        if grid < 2 || !grid.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "grid length {grid} is not a power of two >= 2"
            )));
        }
        if scalars.nrows() != n || response.len() != n {
            return Err(Error::Dimension(format!(
                "sample counts disagree: curves {n}, scalars {}, response {}",
                scalars.nrows(),
                response.len()
            )));
        }
        for v in curves.iter().chain(scalars.iter()).chain(response.iter()) {
            if !v.is_finite() {
                return Err(Error::Dimension("non-finite value in dataset".into()));
            }
        }
        Ok(Dataset { curves, scalars, response })
    }

    pub fn n(&self) -> usize {
        self.curves.dim().0
    }

    pub fn m(&self) -> usize {
        self.curves.dim().1
    }

    pub fn grid_len(&self) -> usize {
        self.curves.dim().2
    }

    pub fn q(&self) -> usize {
        self.scalars.ncols()
    }
}

/// The design matrix with rows a_i = (1, v_i, u_i), where v_i stacks the
/// scaled wavelet coefficients of the m curves of sample i.
#[derive(Debug, Clone)]
pub struct Design {
    /// n x (1 + mN + q).
    pub rows: Array2<f64>,
    pub m: usize,
    pub grid_len: usize,
    pub q: usize,
}

impl Design {
    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    /// Total column count 1 + mN + q.
    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    /// The v-block of row i (length mN).
    pub fn v_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i).slice_move(ndarray::s![1..1 + self.m * self.grid_len])
    }

    /// The u-block of row i (length q).
    pub fn u_row(&self, i: usize) -> ArrayView1<'_, f64> {
        let start = 1 + self.m * self.grid_len;
        self.rows.row(i).slice_move(ndarray::s![start..])
    }
}

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLevels {
    taus: Vec<f64>,
}

impl QuantileLevels {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::InvalidArgument("no quantile levels".into()));
        }
        for pair in taus.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidArgument(
                    "quantile levels must be strictly increasing".into(),
                ));
            }
        }
        if taus[0] <= 0.0 || *taus.last().unwrap() >= 1.0 {
            return Err(Error::InvalidArgument("quantile levels must lie in (0, 1)".into()));
        }
        Ok(QuantileLevels { taus })
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau])
    }

    /// K equally spaced levels k/(K+1).
    pub fn equally_spaced(k: usize) -> Result<Self> {
        let taus = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        Self::new(taus)
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn k(&self) -> usize {
        self.taus.len()
    }
}

/// Model coefficients: per-level intercepts, scalar slopes and the wavelet
/// coefficient vector partitioned into m blocks of length N.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoefficientSet {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub m: usize,
    pub grid_len: usize,
}

impl CoefficientSet {
    pub fn zeros(k: usize, q: usize, m: usize, grid_len: usize) -> Self {
        CoefficientSet {
            alpha: vec![0.0; k],
            gamma: vec![0.0; q],
            theta: vec![0.0; m * grid_len],
            m,
            grid_len,
        }
    }

    pub fn theta_block(&self, l: usize) -> &[f64] {
        &self.theta[l * self.grid_len..(l + 1) * self.grid_len]
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.m * self.grid_len {
            return Err(Error::Dimension(format!(
                "theta length {} != m*N = {}",
                self.theta.len(),
                self.m * self.grid_len
            )));
        }
        for v in self.alpha.iter().chain(&self.gamma).chain(&self.theta) {
            if !v.is_finite() {
                return Err(Error::Dimension("non-finite coefficient".into()));
            }
        }
        Ok(())
    }
}

/// Sparse group lasso tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltySpec {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl PenaltySpec {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if lambda1 < 0.0 || lambda2 < 0.0 || !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalties must be nonnegative, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(PenaltySpec { lambda1, lambda2 })
    }
}

/// Builds the design matrix: each curve is transformed at full depth and
/// scaled by 1/N so that dot(v, theta) approximates the integral of x beta.
pub fn build_design(data: &Dataset, filter: &WaveletFilter) -> Result<Design> {
    let (n, m, grid) = data.curves.dim();
    let q = data.q();
    let levels = wavelet::full_levels(grid);
    let mut rows = Array2::zeros((n, 1 + m * grid + q));
    let scale = 1.0 / grid as f64;
    let mut curve = vec![0.0; grid];
    for i in 0..n {
        rows[[i, 0]] = 1.0;
        for l in 0..m {
            for (j, c) in curve.iter_mut().enumerate() {
                *c = data.curves[[i, l, j]];
            }
            let coeffs = wavelet::dwt(&curve, filter, levels)?;
            for (j, v) in coeffs.values.iter().enumerate() {
                rows[[i, 1 + l * grid + j]] = v * scale;
            }
        }
        for j in 0..q {
            rows[[i, 1 + m * grid + j]] = data.scalars[[i, j]];
        }
    }
    Ok(Design { rows, m, grid_len: grid, q })
}

/// Quantile check loss rho_tau(r) = r (tau - 1{r < 0}).
pub fn check_loss(r: f64, tau: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) || tau == 0.0 || tau == 1.0 {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1)")));
    }
    Ok(check_loss_unchecked(r, tau))
}

#[inline]
pub(crate) fn check_loss_unchecked(r: f64, tau: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

/// Sparse group lasso penalty over the m theta blocks.
pub fn sgl_penalty(theta: &[f64], m: usize, grid_len: usize, pen: &PenaltySpec) -> Result<f64> {
    if theta.len() != m * grid_len {
        return Err(Error::Dimension(format!(
            "theta length {} != m*N = {}",
            theta.len(),
            m * grid_len
        )));
    }
    let mut total = 0.0;
    for l in 0..m {
        let block = &theta[l * grid_len..(l + 1) * grid_len];
        let l1: f64 = block.iter().map(|v| v.abs()).sum();
        let l2: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += pen.lambda1 * l1 + pen.lambda2 * l2;
    }
    Ok(total)
}

/// The composite objective: summed check losses over levels and samples plus
/// the sparse group lasso penalty.
pub fn objective(
    params: &CoefficientSet,
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    pen: &PenaltySpec,
) -> Result<f64> {
    params.validate()?;
    check_model_dims(params, design, y, taus)?;
    let mut total = 0.0;
    for (k, &tau) in taus.taus().iter().enumerate() {
        let fitted = predict_quantile(params, design, k)?;
        for i in 0..design.n() {
            total += check_loss_unchecked(y[i] - fitted[i], tau);
        }
    }
    total += sgl_penalty(&params.theta, params.m, params.grid_len, pen)?;
    Ok(total)
}

pub(crate) fn check_model_dims(
    params: &CoefficientSet,
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
) -> Result<()> {
    if params.alpha.len() != taus.k() {
        return Err(Error::Dimension(format!(
            "{} intercepts for {} quantile levels",
            params.alpha.len(),
            taus.k()
        )));
    }
    if params.gamma.len() != design.q
        || params.m != design.m
        || params.grid_len != design.grid_len
    {
        return Err(Error::Dimension("coefficient shape does not match design".into()));
    }
    if y.len() != design.n() {
        return Err(Error::Dimension(format!(
            "{} responses for {} design rows",
            y.len(),
            design.n()
        )));
    }
    Ok(())
}

/// Fitted conditional quantile at level index k (0-based).
pub fn predict_quantile(
    params: &CoefficientSet,
    design: &Design,
    k: usize,
) -> Result<Array1<f64>> {
    if k >= params.alpha.len() {
        return Err(Error::InvalidArgument(format!(
            "level index {k} out of range (K = {})",
            params.alpha.len()
        )));
    }
    let n = design.n();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let v = design.v_row(i);
        let u = design.u_row(i);
        let mut acc = params.alpha[k];
        for (vj, tj) in v.iter().zip(&params.theta) {
            acc += vj * tj;
        }
        for (uj, gj) in u.iter().zip(&params.gamma) {
            acc += uj * gj;
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Grid samples of the slope function for one theta block: the inverse DWT,
/// with no 1/N factor (that scaling lives on the design side).
pub fn reconstruct_beta(theta_block: &[f64], filter: &WaveletFilter) -> Result<Vec<f64>> {
    let n = theta_block.len();
    let levels = wavelet::full_levels(n);
    let coeffs = crate::wavelet::WaveletCoeffs::new(theta_block.to_vec(), levels)?;
    wavelet::idwt(&coeffs, filter)
}
