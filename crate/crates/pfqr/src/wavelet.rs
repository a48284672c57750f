//! Orthonormal discrete wavelet transform on dyadic-length signals.
//!
//! Periodic (circular) boundary handling keeps the transform exactly
//! orthogonal, so `idwt` is the exact inverse of `dwt` and the Parseval
//! identity holds to rounding error. Coefficients are stored coarsest-first:
//! the approximation band at the primary resolution, then detail bands of
//! doubling size.

use crate::{Error, Result};
use ndarray::Array2;

/// Haar analysis lowpass taps.
const HAAR_LO: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

/// Daubechies-2 (4-tap) analysis lowpass taps.
const DB2_LO: [f64; 4] = [
    -0.12940952255092145,
    0.22414386804185735,
    0.836516303737469,
    0.48296291314469025,
];

/// Daubechies-4 (8-tap) analysis lowpass taps.
const DB4_LO: [f64; 8] = [
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.23037781330885523,
];

/// Least-asymmetric Daubechies with 6 vanishing moments (symlet-6),
/// analysis lowpass taps.
const SYM6_LO: [f64; 12] = [
    -0.007800708325034148,
    0.0017677118642428036,
    0.04472490177066578,
    -0.021060292512300564,
    -0.07263752278646252,
    0.3379294217276218,
    0.787641141030194,
    0.4910559419267466,
    -0.048311742585633,
    -0.11799011114819057,
    0.0034907120842174702,
    0.015404109327027373,
];

/// Wavelet filter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterFamily {
    Haar,
    Sym6,
    /// Plain Daubechies with the given number of vanishing moments.
    Daubechies(usize),
}

impl std::fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterFamily::Haar => write!(f, "haar"),
            FilterFamily::Sym6 => write!(f, "sym6"),
            FilterFamily::Daubechies(k) => write!(f, "daubechies-{k}"),
        }
    }
}

impl std::str::FromStr for FilterFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(FilterFamily::Haar),
            "sym6" => Ok(FilterFamily::Sym6),
            _ => {
                if let Some(k) = s.strip_prefix("daubechies-") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad filter name {s:?}")))?;
                    Ok(FilterFamily::Daubechies(k))
                } else {
                    Err(Error::InvalidArgument(format!("unknown filter {s:?}")))
                }
            }
        }
    }
}

/// An orthonormal quadrature mirror filter pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    pub name: FilterFamily,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

impl WaveletFilter {
    pub fn new(name: FilterFamily) -> Result<Self> {
        let lowpass: Vec<f64> = match name {
            FilterFamily::Haar => HAAR_LO.to_vec(),
            FilterFamily::Sym6 => SYM6_LO.to_vec(),
            FilterFamily::Daubechies(2) => DB2_LO.to_vec(),
            FilterFamily::Daubechies(4) => DB4_LO.to_vec(),
            FilterFamily::Daubechies(k) => {
                return Err(Error::InvalidArgument(format!(
                    "daubechies-{k} taps not shipped (available: 2, 4)"
                )))
            }
        };
        let len = lowpass.len();
        // Quadrature mirror: g[j] = (-1)^j h[L-1-j].
        let highpass: Vec<f64> = (0..len)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - j]
            })
            .collect();
        let filter = WaveletFilter { name, lowpass, highpass };
        filter.validate()?;
        Ok(filter)
    }

    pub fn haar() -> Self {
        Self::new(FilterFamily::Haar).expect("haar taps are valid")
    }

    pub fn sym6() -> Self {
        Self::new(FilterFamily::Sym6).expect("sym6 taps are valid")
    }

    /// Checks the orthonormal-filter invariants on the stored taps.
    fn validate(&self) -> Result<()> {
        let tol = 1e-12;
        let sum: f64 = self.lowpass.iter().sum();
        if (sum - std::f64::consts::SQRT_2).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "{} lowpass taps sum to {sum}, expected sqrt(2)",
                self.name
            )));
        }
        for taps in [&self.lowpass, &self.highpass] {
            let sq: f64 = taps.iter().map(|h| h * h).sum();
            if (sq - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "{} taps are not unit-norm (sum of squares {sq})",
                    self.name
                )));
            }
            for shift in 1..taps.len() / 2 {
                let dot: f64 = taps[2 * shift..]
                    .iter()
                    .zip(taps.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                if dot.abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "{} taps not orthogonal at even shift {shift} (inner product {dot})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Coefficients of a decomposed signal, coarsest band first.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub values: Vec<f64>,
    pub levels: usize,
}

impl WaveletCoeffs {
    pub fn new(values: Vec<f64>, levels: usize) -> Result<Self> {
        let n = values.len();
        check_dyadic(n)?;
        let j = n.trailing_zeros() as usize;
        if levels == 0 || levels > j {
            return Err(Error::InvalidArgument(format!(
                "levels {levels} out of range for length {n} (1..={j})"
            )));
        }
        Ok(WaveletCoeffs { values, levels })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the approximation band at the coarsest resolution.
    pub fn approx_len(&self) -> usize {
        self.values.len() >> self.levels
    }
}

fn check_dyadic(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Dimension(format!(
            "signal length {n} is not a power of two >= 2"
        )));
    }
    Ok(())
}

/// Full decomposition depth J for a length-2^J signal.
pub fn full_levels(n: usize) -> usize {
    n.trailing_zeros() as usize
}

/// One analysis step with periodic extension: `x` (length n) into
/// approximation and detail halves of `out`.
fn analysis_step(x: &[f64], filter: &WaveletFilter, out: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    let taps = filter.len();
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for j in 0..taps {
            let idx = (2 * k + j) % n;
            a += filter.lowpass[j] * x[idx];
            d += filter.highpass[j] * x[idx];
        }
        out[k] = a;
        out[half + k] = d;
    }
}

/// One synthesis step: approximation and detail halves of `coeffs` back to a
/// length-n signal.
fn synthesis_step(coeffs: &[f64], filter: &WaveletFilter, out: &mut [f64]) {
    let n = coeffs.len();
    let half = n / 2;
    let taps = filter.len();
    out[..n].fill(0.0);
    for k in 0..half {
        let a = coeffs[k];
        let d = coeffs[half + k];
        for j in 0..taps {
            let idx = (2 * k + j) % n;
            out[idx] += filter.lowpass[j] * a + filter.highpass[j] * d;
        }
    }
}

/// Forward transform of a dyadic-length signal.
pub fn dwt(signal: &[f64], filter: &WaveletFilter, levels: usize) -> Result<WaveletCoeffs> {
    let n = signal.len();
    check_dyadic(n)?;
    let j = full_levels(n);
    if levels == 0 || levels > j {
        return Err(Error::InvalidArgument(format!(
            "levels {levels} out of range for length {n} (1..={j})"
        )));
    }
    let mut values = signal.to_vec();
    let mut scratch = vec![0.0; n];
    let mut cur = n;
    for _ in 0..levels {
        analysis_step(&values[..cur], filter, &mut scratch[..cur]);
        values[..cur].copy_from_slice(&scratch[..cur]);
        cur /= 2;
    }
    WaveletCoeffs::new(values, levels)
}

/// Inverse transform; exact inverse of [`dwt`] with the same filter.
pub fn idwt(coeffs: &WaveletCoeffs, filter: &WaveletFilter) -> Result<Vec<f64>> {
    let n = coeffs.len();
    check_dyadic(n)?;
    let mut values = coeffs.values.clone();
    let mut scratch = vec![0.0; n];
    let mut cur = n >> (coeffs.levels - 1);
    loop {
        synthesis_step(&values[..cur], filter, &mut scratch[..cur]);
        values[..cur].copy_from_slice(&scratch[..cur]);
        if cur == n {
            break;
        }
        cur *= 2;
    }
    Ok(values)
}

/// Explicit N x N transform matrix W with `W x = dwt(x)`.
pub fn wavelet_matrix(n: usize, filter: &WaveletFilter, levels: usize) -> Result<Array2<f64>> {
    check_dyadic(n)?;
    let mut w = Array2::zeros((n, n));
    let mut basis = vec![0.0; n];
    for col in 0..n {
        basis[col] = 1.0;
        let coeffs = dwt(&basis, filter, levels)?;
        for (row, v) in coeffs.values.iter().enumerate() {
            w[[row, col]] = *v;
        }
        basis[col] = 0.0;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn haar_constant_signal() {
        let c = dwt(&[1.0, 1.0, 1.0, 1.0], &WaveletFilter::haar(), 2).unwrap();
        let expect = [2.0, 0.0, 0.0, 0.0];
        for (a, b) in c.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", c.values);
        }
    }

    #[test]
    fn haar_zero_mean_signal() {
        let c = dwt(&[1.0, -1.0], &WaveletFilter::haar(), 1).unwrap();
        assert!((c.values[0]).abs() < 1e-12);
        assert!((c.values[1] - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn haar_inverse_of_constant() {
        let c = WaveletCoeffs::new(vec![2.0, 0.0, 0.0, 0.0], 2).unwrap();
        let x = idwt(&c, &WaveletFilter::haar()).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn idwt_zero_is_zero() {
        let c = WaveletCoeffs::new(vec![0.0; 8], 3).unwrap();
        let x = idwt(&c, &WaveletFilter::sym6()).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sym6_parseval_256() {
        let filter = WaveletFilter::sym6();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = random_signal(&mut rng, 256);
            let c = dwt(&x, &filter, 8).unwrap();
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nc: f64 = c.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((nx - nc).abs() < 1e-10);
        }
    }

    #[test]
    fn round_trip_all_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for filter in [WaveletFilter::haar(), WaveletFilter::sym6()] {
            for j in 3..=8 {
                let n = 1 << j;
                let x = random_signal(&mut rng, n);
                for levels in 1..=j {
                    let c = dwt(&x, &filter, levels).unwrap();
                    let back = idwt(&c, &filter).unwrap();
                    for (a, b) in x.iter().zip(back) {
                        assert!((a - b).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn linearity() {
        let filter = WaveletFilter::sym6();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_signal(&mut rng, 64);
        let y = random_signal(&mut rng, 64);
        let (a, b) = (0.7, -2.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let cx = dwt(&x, &filter, 6).unwrap();
        let cy = dwt(&y, &filter, 6).unwrap();
        let cc = dwt(&combo, &filter, 6).unwrap();
        for i in 0..64 {
            assert!((cc.values[i] - (a * cx.values[i] + b * cy.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_haar_n2() {
        let w = wavelet_matrix(2, &WaveletFilter::haar(), 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [[r, r], [r, -r]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((w[[i, j]] - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_orthonormal_sym6_n64() {
        let w = wavelet_matrix(64, &WaveletFilter::sym6(), 6).unwrap();
        let wwt = w.dot(&w.t());
        for i in 0..64 {
            for j in 0..64 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((wwt[[i, j]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matrix_consistent_with_dwt() {
        let filter = WaveletFilter::sym6();
        let w = wavelet_matrix(32, &filter, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = random_signal(&mut rng, 32);
            let via_matrix = w.dot(&ndarray::Array1::from(x.clone()));
            let via_dwt = dwt(&x, &filter, 5).unwrap();
            for (a, b) in via_matrix.iter().zip(&via_dwt.values) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sym6_vanishing_moments_on_polynomials() {
        // Degree <= 5 polynomials have (numerically) zero detail coefficients
        // away from the periodic wrap-around.
        let filter = WaveletFilter::sym6();
        let n = 256;
        let levels = 3;
        let taps = filter.len();
        let x: Vec<f64> = (0..n)
            .map(|j| {
                let t = j as f64 / (n - 1) as f64;
                1.0 - 2.0 * t + 3.0 * t.powi(2) - t.powi(3) + 0.5 * t.powi(4) + t.powi(5)
            })
            .collect();
        let c = dwt(&x, &filter, levels).unwrap();
        let approx = n >> levels;
        let mut band_start = approx;
        let mut band_len: usize = approx;
        while band_start < n {
            for k in taps..band_len.saturating_sub(taps) {
                assert!(
                    c.values[band_start + k].abs() < 1e-8,
                    "band at {band_start}, k={k}: {}",
                    c.values[band_start + k]
                );
            }
            band_start += band_len;
            band_len *= 2;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = WaveletFilter::haar();
        assert!(dwt(&[1.0, 2.0, 3.0], &f, 1).is_err());
        assert!(dwt(&[1.0], &f, 1).is_err());
        assert!(dwt(&[1.0, 2.0, 3.0, 4.0], &f, 3).is_err());
        assert!(dwt(&[1.0, 2.0, 3.0, 4.0], &f, 0).is_err());
        assert!(WaveletCoeffs::new(vec![0.0; 6], 1).is_err());
        assert!(WaveletFilter::new(FilterFamily::Daubechies(9)).is_err());
    }
}
