//! Closed-form proximal operators and the ridge-type quadratic inner step.

use crate::model::{CoefficientSet, Design, QuantileLevels};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};

/// Proximal operator of the check loss: argmin_r rho_tau(r) + (eta1/2)(c - r)^2.
pub fn prox_check(c: f64, tau: f64, eta1: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1)")));
    }
    if !(eta1 > 0.0) {
        return Err(Error::InvalidArgument(format!("eta1 {eta1} must be positive")));
    }
    Ok(prox_check_unchecked(c, tau, eta1))
}

#[inline]
pub(crate) fn prox_check_unchecked(c: f64, tau: f64, eta1: f64) -> f64 {
    let upper = tau / eta1;
    let lower = -(1.0 - tau) / eta1;
    if c > upper {
        c - upper
    } else if c < lower {
        c - lower
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn soft_threshold_scalar(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Elementwise soft threshold sgn(v) max(|v| - t, 0).
pub fn soft_threshold(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {t} must be nonnegative")));
    }
    Ok(v.iter().map(|x| soft_threshold_scalar(*x, t)).collect())
}

/// Blockwise sparse group lasso prox: the exact minimizer of
/// t1 ||b||_1 + t2 ||b||_2 + (1/2) ||b - c||_2^2.
pub fn prox_sgl_block(c: &[f64], t1: f64, t2: f64) -> Result<Vec<f64>> {
    if !(t1 >= 0.0) || !(t2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "thresholds ({t1}, {t2}) must be nonnegative"
        )));
    }
    let mut out: Vec<f64> = c.iter().map(|x| soft_threshold_scalar(*x, t1)).collect();
    let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= t2 {
        out.fill(0.0);
    } else {
        let scale = (norm - t2) / norm;
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
    Ok(out)
}

pub(crate) mod linalg {
    use super::*;

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
        let n = a.nrows();
        let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(0.0f64, f64::max);
        let pivot_tol = 1e-11 * (1.0 + max_diag);
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[[i, j]];
                for k in 0..j {
                    sum -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    if sum <= pivot_tol || !sum.is_finite() {
                        return Err(Error::SingularSystem(format!(
                            "non-positive pivot {sum} at row {i}"
                        )));
                    }
                    l[[i, i]] = sum.sqrt();
                } else {
                    l[[i, j]] = sum / l[[j, j]];
                }
            }
        }
        Ok(l)
    }

    /// Solves L L^T x = b given the lower factor L.
    pub fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
        let n = l.nrows();
        let mut x = b.clone();
        for i in 0..n {
            let mut sum = x[i];
            for k in 0..i {
                sum -= l[[i, k]] * x[k];
            }
            x[i] = sum / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..n {
                sum -= l[[k, i]] * x[k];
            }
            x[i] = sum / l[[i, i]];
        }
        x
    }
}

/// Cached factorization for the quadratic inner step.
///
/// The minimized quadratic is
///   (eta/2) ||theta - s||^2
///   + (eta1/2) sum_{k,i} (t_{ki} - alpha_k - u_i' gamma - v_i' theta)^2,
/// whose normal-equations matrix depends only on the design, K and
/// eta/eta1; it is factorized once and reused across iterations. The theta
/// block is inverted through the n x n kernel (eta/eta1) I + K V V', which
/// keeps the per-solve cost at a few design mat-vecs.
pub struct QuadraticStepSolver {
    k: usize,
    m: usize,
    grid_len: usize,
    q: usize,
    /// eta / eta1.
    ridge: f64,
    /// Lower Cholesky factor of (ridge) I_n + K V V'. Empty when mN = 0.
    kernel_chol: Array2<f64>,
    /// F = M_thth^{-1} M_th,a, (mN) x (K + q).
    cross: Array2<f64>,
    /// Lower Cholesky factor of the Schur complement on (alpha, gamma).
    schur_chol: Array2<f64>,
    eta1: f64,
    rows: Array2<f64>,
    /// Owned contiguous V' (mN x n); transposed mat-vecs through a strided
    /// view of `rows` are cache-hostile at this aspect ratio.
    vt: Array2<f64>,
    colsum_v: Array1<f64>,
}

impl QuadraticStepSolver {
    pub fn new(design: &Design, k: usize, eta: f64, eta1: f64) -> Result<Self> {
        if !(eta > 0.0) || !(eta1 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty parameters ({eta}, {eta1}) must be positive"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one quantile level".into()));
        }
        let n = design.n();
        let p = design.m * design.grid_len;
        let q = design.q;
        let ridge = eta / eta1;
        let kf = k as f64;
        let rows = design.rows.clone();
        let v = rows.slice(ndarray::s![.., 1..1 + p]);
        let u = rows.slice(ndarray::s![.., 1 + p..]);
        let vt = v.t().as_standard_layout().to_owned();
        let colsum_v = v.sum_axis(ndarray::Axis(0));

        // Kernel (ridge) I_n + K V V'.
        let kernel_chol = if p > 0 {
            let mut g = v.dot(&v.t()) * kf;
            for i in 0..n {
                g[[i, i]] += ridge;
            }
            linalg::cholesky(&g).map_err(|_| {
                Error::SingularSystem("theta kernel is not positive definite".into())
            })?
        } else {
            Array2::zeros((0, 0))
        };

        // M_th,a columns: for each alpha_k the column sums of V; for gamma,
        // K V' U columns.
        let small = k + q;
        let mut m_theta_a = Array2::zeros((p, small));
        if p > 0 {
            for kk in 0..k {
                for j in 0..p {
                    m_theta_a[[j, kk]] = colsum_v[j];
                }
            }
            let vtu = vt.dot(&u) * kf;
            for c in 0..q {
                for j in 0..p {
                    m_theta_a[[j, k + c]] = vtu[[j, c]];
                }
            }
        }

        // cross = M_thth^{-1} M_th,a, column by column.
        let mut cross = Array2::zeros((p, small));
        if p > 0 {
            for c in 0..small {
                let col = m_theta_a.column(c).to_owned();
                let sol = apply_theta_inverse(&col, &v, &vt, &kernel_chol, ridge, kf);
                cross.column_mut(c).assign(&sol);
            }
        }

        // M_aa and its Schur complement S = M_aa - M_a,th cross.
        let colsum_u = u.sum_axis(ndarray::Axis(0));
        let utu = u.t().dot(&u) * kf;
        let mut schur = Array2::zeros((small, small));
        for kk in 0..k {
            schur[[kk, kk]] = n as f64;
            for c in 0..q {
                schur[[kk, k + c]] = colsum_u[c];
                schur[[k + c, kk]] = colsum_u[c];
            }
        }
        for a in 0..q {
            for b in 0..q {
                schur[[k + a, k + b]] = utu[[a, b]];
            }
        }
        if p > 0 {
            let correction = m_theta_a.t().dot(&cross);
            schur -= &correction;
        }
        let schur_chol = linalg::cholesky(&schur).map_err(|e| {
            Error::SingularSystem(format!(
                "intercept/scalar block is singular (duplicate or constant columns?): {e}"
            ))
        })?;

        Ok(QuadraticStepSolver {
            k,
            m: design.m,
            grid_len: design.grid_len,
            q,
            ridge,
            kernel_chol,
            cross,
            schur_chol,
            eta1,
            rows,
            vt,
            colsum_v,
        })
    }

    /// Owned contiguous transpose of the wavelet block V (mN x n).
    pub(crate) fn vt(&self) -> &Array2<f64> {
        &self.vt
    }

    pub fn eta1(&self) -> f64 {
        self.eta1
    }

    /// Solves the normal equations for targets t (K x n) and ridge center s
    /// (the point theta is pulled toward, length mN).
    pub fn solve(&self, targets: &Array2<f64>, ridge_center: &[f64]) -> Result<CoefficientSet> {
        let p = self.m * self.grid_len;
        let n = self.rows.nrows();
        if targets.dim() != (self.k, n) || ridge_center.len() != p {
            return Err(Error::Dimension(format!(
                "quadratic step shapes: targets {:?}, center {}",
                targets.dim(),
                ridge_center.len()
            )));
        }
        let v = self.rows.slice(ndarray::s![.., 1..1 + p]);
        let u = self.rows.slice(ndarray::s![.., 1 + p..]);
        let kf = self.k as f64;
        let small = self.k + self.q;

        // Right-hand sides (after dividing by eta1).
        let t_total = targets.sum_axis(ndarray::Axis(0));
        let mut r_small = Array1::zeros(small);
        for kk in 0..self.k {
            r_small[kk] = targets.row(kk).sum();
        }
        let utt = u.t().dot(&t_total);
        for c in 0..self.q {
            r_small[self.k + c] = utt[c];
        }

        let (theta0, a_sol) = if p > 0 {
            let mut r_theta = self.vt.dot(&t_total);
            for (j, s) in ridge_center.iter().enumerate() {
                r_theta[j] += self.ridge * s;
            }
            let y0 =
                apply_theta_inverse(&r_theta, &v, &self.vt, &self.kernel_chol, self.ridge, kf);
            // a = S^{-1} (r_a - M_a,th y0); M_a,th y0 uses the same cross
            // structure as in new().
            let mut rhs = r_small;
            let dot_cs: f64 = self.colsum_v.dot(&y0);
            for kk in 0..self.k {
                rhs[kk] -= dot_cs;
            }
            let vy = v.dot(&y0);
            let uvy = u.t().dot(&vy) * kf;
            for c in 0..self.q {
                rhs[self.k + c] -= uvy[c];
            }
            let a = linalg::chol_solve(&self.schur_chol, &rhs);
            let theta = &y0 - &self.cross.dot(&a);
            (theta, a)
        } else {
            let a = linalg::chol_solve(&self.schur_chol, &r_small);
            (Array1::zeros(0), a)
        };

        let mut out = CoefficientSet::zeros(self.k, self.q, self.m, self.grid_len);
        out.alpha.copy_from_slice(&a_sol.as_slice().unwrap()[..self.k]);
        out.gamma.copy_from_slice(&a_sol.as_slice().unwrap()[self.k..]);
        out.theta.copy_from_slice(theta0.as_slice().unwrap());
        Ok(out)
    }
}

/// Applies ((ridge) I + K V'V)^{-1} to x via the n x n kernel factorization.
fn apply_theta_inverse(
    x: &Array1<f64>,
    v: &ArrayView2<'_, f64>,
    vt: &Array2<f64>,
    kernel_chol: &Array2<f64>,
    ridge: f64,
    kf: f64,
) -> Array1<f64> {
    let vx = v.dot(x);
    let sol = linalg::chol_solve(kernel_chol, &vx);
    let back = vt.dot(&sol);
    (x - &(back * kf)) / ridge
}

/// One-shot form of the quadratic inner step (see [`QuadraticStepSolver`]).
#[allow(clippy::too_many_arguments)]
pub fn solve_quadratic_step(
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    r: &Array2<f64>,
    z: &Array2<f64>,
    theta_anchor: &[f64],
    w: &[f64],
    eta: f64,
    eta1: f64,
) -> Result<CoefficientSet> {
    let k = taus.k();
    let n = design.n();
    if y.len() != n || r.dim() != (k, n) || z.dim() != (k, n) {
        return Err(Error::Dimension("residual/dual shapes do not match (K, n)".into()));
    }
    let p = design.m * design.grid_len;
    if theta_anchor.len() != p || w.len() != p {
        return Err(Error::Dimension("anchor/dual length does not match mN".into()));
    }
    let solver = QuadraticStepSolver::new(design, k, eta, eta1)?;
    let mut targets = Array2::zeros((k, n));
    for kk in 0..k {
        for i in 0..n {
            targets[[kk, i]] = y[i] - r[[kk, i]] + z[[kk, i]];
        }
    }
    let center: Vec<f64> = theta_anchor.iter().zip(w).map(|(a, b)| a - b).collect();
    solver.solve(&targets, &center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_design, Dataset};
    use crate::wavelet::WaveletFilter;
    use ndarray::{Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Grid minimization oracle for the scalar check prox.
    fn prox_check_grid(c: f64, tau: f64, eta1: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut arg = 0.0;
        let mut r = -5.0;
        while r <= 5.0 {
            let val = crate::model::check_loss_unchecked(r, tau) + eta1 / 2.0 * (c - r) * (c - r);
            if val < best {
                best = val;
                arg = r;
            }
            r += 1e-4;
        }
        arg
    }

    #[test]
    fn prox_check_examples() {
        assert!((prox_check(2.0, 0.5, 1.0).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(prox_check(0.3, 0.5, 1.0).unwrap(), 0.0);
        assert!((prox_check(-1.0, 0.9, 2.0).unwrap() + 0.95).abs() < 1e-12);
        // Against the grid oracle.
        assert!((prox_check(2.0, 0.5, 1.0).unwrap() - prox_check_grid(2.0, 0.5, 1.0)).abs() < 1e-4);
        assert!(
            (prox_check(-1.0, 0.9, 2.0).unwrap() - prox_check_grid(-1.0, 0.9, 2.0)).abs() < 1e-4
        );
        assert!(prox_check(1.0, 0.0, 1.0).is_err());
        assert!(prox_check(1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn prox_check_lipschitz_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..500 {
            let tau = rng.gen_range(0.05..0.95);
            let eta1 = rng.gen_range(0.1..5.0);
            let c1 = rng.gen_range(-3.0..3.0);
            let c2 = rng.gen_range(-3.0..3.0);
            let p1 = prox_check(c1, tau, eta1).unwrap();
            let p2 = prox_check(c2, tau, eta1).unwrap();
            assert!((p1 - p2).abs() <= (c1 - c2).abs() + 1e-12);
            if c1 < c2 {
                assert!(p1 <= p2 + 1e-12);
            }
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[3.0, -1.0], 1.0).unwrap(), vec![2.0, 0.0]);
        let v = vec![0.4, -0.7, 2.0];
        assert_eq!(soft_threshold(&v, 0.0).unwrap(), v);
        assert!(soft_threshold(&v, 2.0).unwrap().iter().all(|x| *x == 0.0));
        assert!(soft_threshold(&v, -0.1).is_err());
    }

    /// Subgradient-inclusion residual for the block prox output.
    fn sgl_subgradient_residual(c: &[f64], t1: f64, t2: f64, b: &[f64]) -> f64 {
        let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Zero-output condition: ||S(c, t1)||_2 <= t2.
            let s: f64 = c
                .iter()
                .map(|v| soft_threshold_scalar(*v, t1).powi(2))
                .sum::<f64>()
                .sqrt();
            return (s - t2).max(0.0);
        }
        let mut res = 0.0;
        for (j, bj) in b.iter().enumerate() {
            let grad = c[j] - bj - t2 * bj / norm;
            let r = if *bj != 0.0 {
                grad - t1 * bj.signum()
            } else {
                (grad.abs() - t1).max(0.0)
            };
            res += r * r;
        }
        res.sqrt()
    }

    #[test]
    fn prox_sgl_block_examples() {
        let out = prox_sgl_block(&[3.0, -1.0], 1.0, 1.0).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12 && out[1] == 0.0);
        assert!(sgl_subgradient_residual(&[3.0, -1.0], 1.0, 1.0, &out) < 1e-8);

        let out = prox_sgl_block(&[0.5, 0.5], 1.0, 3.7).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));

        let c = vec![0.3, -1.2, 2.2];
        assert_eq!(prox_sgl_block(&c, 0.0, 0.0).unwrap(), c);
        assert!(prox_sgl_block(&c, -1.0, 0.0).is_err());
    }

    #[test]
    fn prox_sgl_block_subgradient_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let n = rng.gen_range(1..8);
            let c1: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let c2: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t1 = rng.gen_range(0.0..2.0);
            let t2 = rng.gen_range(0.0..2.0);
            let b1 = prox_sgl_block(&c1, t1, t2).unwrap();
            let b2 = prox_sgl_block(&c2, t1, t2).unwrap();
            assert!(sgl_subgradient_residual(&c1, t1, t2, &b1) < 1e-8);
            let dc: f64 = c1.iter().zip(&c2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let db: f64 = b1.iter().zip(&b2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(db <= dc + 1e-12);
        }
    }

    fn random_design(rng: &mut impl Rng, n: usize, m: usize, grid: usize, q: usize) -> (Design, Array1<f64>) {
        let mut curves = Array3::zeros((n, m, grid));
        for v in curves.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut scalars = Array2::zeros((n, q));
        for v in scalars.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let y = Array1::from_iter((0..n).map(|_| rng.gen_range(-2.0..2.0)));
        let data = Dataset::new(curves, scalars, y.clone()).unwrap();
        (build_design(&data, &WaveletFilter::haar()).unwrap(), y)
    }

    fn quad_objective(
        design: &Design,
        targets: &Array2<f64>,
        center: &[f64],
        params: &CoefficientSet,
        eta: f64,
        eta1: f64,
    ) -> f64 {
        let k = targets.nrows();
        let mut total = 0.0;
        for kk in 0..k {
            for i in 0..design.n() {
                let mut fitted = params.alpha[kk];
                for (j, v) in design.v_row(i).iter().enumerate() {
                    fitted += v * params.theta[j];
                }
                for (j, u) in design.u_row(i).iter().enumerate() {
                    fitted += u * params.gamma[j];
                }
                let d = targets[[kk, i]] - fitted;
                total += eta1 / 2.0 * d * d;
            }
        }
        for (t, s) in params.theta.iter().zip(center) {
            total += eta / 2.0 * (t - s) * (t - s);
        }
        total
    }

    #[test]
    fn ridge_dominance_forces_theta_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (design, y) = random_design(&mut rng, 12, 1, 4, 1);
        let taus = QuantileLevels::single(0.5).unwrap();
        let r = Array2::zeros((1, 12));
        let z = Array2::zeros((1, 12));
        let out = solve_quadratic_step(&design, &y, &taus, &r, &z, &[0.0; 4], &[0.0; 4], 1e8, 1.0)
            .unwrap();
        assert!(out.theta.iter().all(|t| t.abs() < 1e-3), "{:?}", out.theta);
    }

    #[test]
    fn matches_ols_normal_equations_when_no_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 15;
        let (design, y) = random_design(&mut rng, n, 0, 4, 2);
        let taus = QuantileLevels::single(0.5).unwrap();
        let r = Array2::zeros((1, n));
        let z = Array2::zeros((1, n));
        let out = solve_quadratic_step(&design, &y, &taus, &r, &z, &[], &[], 1.0, 1.0).unwrap();

        // Direct 3x3 normal-equation solve of y on (1, u1, u2).
        let mut a = [[0.0f64; 3]; 3];
        let mut b = [0.0f64; 3];
        for i in 0..n {
            let row = [1.0, design.u_row(i)[0], design.u_row(i)[1]];
            for p in 0..3 {
                b[p] += row[p] * y[i];
                for q in 0..3 {
                    a[p][q] += row[p] * row[q];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..3 {
            let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..3 {
                let f = a[row][col] / a[col][col];
                for cc in col..3 {
                    a[row][cc] -= f * a[col][cc];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = [0.0f64; 3];
        for row in (0..3).rev() {
            let mut s = b[row];
            for cc in row + 1..3 {
                s -= a[row][cc] * x[cc];
            }
            x[row] = s / a[row][row];
        }
        assert!((out.alpha[0] - x[0]).abs() < 1e-8);
        assert!((out.gamma[0] - x[1]).abs() < 1e-8);
        assert!((out.gamma[1] - x[2]).abs() < 1e-8);
    }

    #[test]
    fn random_probe_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (design, y) = random_design(&mut rng, 10, 2, 4, 1);
        let taus = QuantileLevels::new(vec![0.3, 0.7]).unwrap();
        let mut r = Array2::zeros((2, 10));
        let mut z = Array2::zeros((2, 10));
        for v in r.iter_mut().chain(z.iter_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
        let anchor: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let (eta, eta1) = (0.8, 1.7);
        let out =
            solve_quadratic_step(&design, &y, &taus, &r, &z, &anchor, &w, eta, eta1).unwrap();

        let mut targets = Array2::zeros((2, 10));
        for kk in 0..2 {
            for i in 0..10 {
                targets[[kk, i]] = y[i] - r[[kk, i]] + z[[kk, i]];
            }
        }
        let center: Vec<f64> = anchor.iter().zip(&w).map(|(a, b)| a - b).collect();
        let base = quad_objective(&design, &targets, &center, &out, eta, eta1);
        for _ in 0..1000 {
            let mut probe = out.clone();
            for v in probe
                .alpha
                .iter_mut()
                .chain(&mut probe.gamma)
                .chain(&mut probe.theta)
            {
                *v += rng.gen_range(-0.05..0.05);
            }
            let val = quad_objective(&design, &targets, &center, &probe, eta, eta1);
            assert!(val + 1e-12 >= base);
        }
    }

    #[test]
    fn gradient_norm_small_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (design, y) = random_design(&mut rng, 14, 2, 8, 2);
        let taus = QuantileLevels::new(vec![0.2, 0.5, 0.8]).unwrap();
        let r = Array2::zeros((3, 14));
        let z = Array2::zeros((3, 14));
        let anchor: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = vec![0.0; 16];
        let (eta, eta1) = (1.3, 0.9);
        let out =
            solve_quadratic_step(&design, &y, &taus, &r, &z, &anchor, &w, eta, eta1).unwrap();

        // Finite-difference gradient check against the quadratic objective.
        let mut targets = Array2::zeros((3, 14));
        for kk in 0..3 {
            for i in 0..14 {
                targets[[kk, i]] = y[i];
            }
        }
        let base = quad_objective(&design, &targets, &anchor, &out, eta, eta1);
        let h = 1e-6;
        let mut rhs_norm = 0.0f64;
        for i in 0..y.len() {
            rhs_norm += y[i].abs();
        }
        let mut grad_norm_sq = 0.0;
        let dims = out.alpha.len() + out.gamma.len() + out.theta.len();
        for d in 0..dims {
            let mut probe = out.clone();
            let slot = if d < probe.alpha.len() {
                &mut probe.alpha[d]
            } else if d < probe.alpha.len() + probe.gamma.len() {
                let j = d - probe.alpha.len();
                &mut probe.gamma[j]
            } else {
                let j = d - probe.alpha.len() - probe.gamma.len();
                &mut probe.theta[j]
            };
            *slot += h;
            let val = quad_objective(&design, &targets, &anchor, &probe, eta, eta1);
            let g = (val - base) / h;
            grad_norm_sq += g * g;
        }
        assert!(grad_norm_sq.sqrt() < 1e-3 * (1.0 + rhs_norm));
    }

    #[test]
    fn duplicate_constant_column_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 8;
        let mut curves = Array3::zeros((n, 0, 4));
        for v in curves.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut scalars = Array2::zeros((n, 1));
        scalars.fill(1.0); // duplicates the intercept column
        let y = Array1::from_iter((0..n).map(|_| rng.gen_range(-1.0..1.0)));
        let data = Dataset::new(curves, scalars, y.clone()).unwrap();
        let design = build_design(&data, &WaveletFilter::haar()).unwrap();
        let taus = QuantileLevels::single(0.5).unwrap();
        let r = Array2::zeros((1, n));
        let z = Array2::zeros((1, n));
        let err = solve_quadratic_step(&design, &y, &taus, &r, &z, &[], &[], 1.0, 1.0);
        assert!(matches!(err, Err(Error::SingularSystem(_))));
    }
}
