//! Evaluation metrics: selection accuracy, integrated squared errors and
//! prediction error.

use crate::{Error, Result};

/// Summary of estimation and selection quality for one fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub mise: f64,
    pub mape: f64,
    pub ga: f64,
    pub va: f64,
    pub ise: Vec<f64>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.mise >= 0.0 && self.mape >= 0.0 && unit(self.ga) && unit(self.va)) {
            return Err(Error::InvalidArgument("metric out of range".into()));
        }
        if self.ise.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("negative ise entry".into()));
        }
        Ok(())
    }
}

/// Proportion of functional predictors whose in/out-of-model status is
/// correct: (|M_hat ∩ M0| + |M_hat^c ∩ M0^c|) / m.
pub fn group_accuracy(estimated: &[usize], truth: &[usize], m: usize) -> Result<f64> {
    if estimated.iter().chain(truth).any(|l| *l >= m) {
        return Err(Error::InvalidArgument("support index out of range".into()));
    }
    let est: std::collections::HashSet<usize> = estimated.iter().copied().collect();
    let tru: std::collections::HashSet<usize> = truth.iter().copied().collect();
    let correct = (0..m).filter(|l| est.contains(l) == tru.contains(l)).count();
    Ok(correct as f64 / m as f64)
}

/// The same proportion over individual coefficients: indices where the
/// zero/nonzero pattern of the two vectors agrees, divided by the length.
pub fn variable_accuracy(theta_hat: &[f64], theta_true: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta_true.len() {
        return Err(Error::Dimension(format!(
            "theta lengths {} vs {}",
            theta_hat.len(),
            theta_true.len()
        )));
    }
    if theta_hat.is_empty() {
        return Err(Error::Degenerate("empty coefficient vectors".into()));
    }
    let correct = theta_hat
        .iter()
        .zip(theta_true)
        .filter(|(a, b)| (**a != 0.0) == (**b != 0.0))
        .count();
    Ok(correct as f64 / theta_hat.len() as f64)
}

/// Per-predictor integrated squared error on the shared grid,
/// ISE_l = (1/N) Σ_j (β̂_l(t_j) − β_l(t_j))², and their mean.
pub fn mise_ise(beta_hat: &[Vec<f64>], beta_true: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if beta_hat.len() != beta_true.len() {
        return Err(Error::Dimension(format!(
            "{} estimated curves vs {} true",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    if beta_hat.is_empty() {
        return Err(Error::Degenerate("no curves".into()));
    }
    let mut ise = Vec::with_capacity(beta_hat.len());
    for (bh, bt) in beta_hat.iter().zip(beta_true) {
        if bh.len() != bt.len() || bh.is_empty() {
            return Err(Error::Dimension("curve grid mismatch".into()));
        }
        let sum: f64 = bh.iter().zip(bt).map(|(a, b)| (a - b) * (a - b)).sum();
        ise.push(sum / bh.len() as f64);
    }
    let mise = ise.iter().sum::<f64>() / ise.len() as f64;
    Ok((mise, ise))
}

/// Mean absolute prediction error.
pub fn mape(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Dimension(format!(
            "prediction lengths {} vs {}",
            y_hat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Degenerate("empty prediction vectors".into()));
    }
    Ok(y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.len() as f64)
}

/// Function-space L2 norm on the grid, sqrt((1/N) Σ β²); the norm used by
/// stability selection and consistent with the ISE convention.
pub fn function_l2_norm(beta: &[f64]) -> f64 {
    if beta.is_empty() {
        return 0.0;
    }
    (beta.iter().map(|v| v * v).sum::<f64>() / beta.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn group_accuracy_examples() {
        let truth = [0usize, 1, 2, 3];
        assert_eq!(group_accuracy(&[0, 1, 2, 3], &truth, 12).unwrap(), 1.0);
        assert!((group_accuracy(&[], &truth, 12).unwrap() - 8.0 / 12.0).abs() < 1e-15);
        let all: Vec<usize> = (0..12).collect();
        assert!((group_accuracy(&all, &truth, 12).unwrap() - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn group_accuracy_symmetric_under_complement() {
        let m = 10;
        let est = [1usize, 3, 5];
        let tru = [1usize, 2];
        let comp = |s: &[usize]| -> Vec<usize> {
            (0..m).filter(|l| !s.contains(l)).collect()
        };
        let a = group_accuracy(&est, &tru, m).unwrap();
        let b = group_accuracy(&comp(&est), &comp(&tru), m).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn variable_accuracy_examples() {
        let t = [1.0, 0.0, -2.0, 0.0];
        assert_eq!(variable_accuracy(&t, &t).unwrap(), 1.0);
        assert_eq!(variable_accuracy(&[0.0; 4], &t).unwrap(), 0.5);
        let comp = [0.0, 3.0, 0.0, -1.0];
        assert_eq!(variable_accuracy(&comp, &t).unwrap(), 0.0);
        assert!(variable_accuracy(&t, &[1.0]).is_err());
    }

    #[test]
    fn mise_examples() {
        let truth: Vec<Vec<f64>> = (0..12)
            .map(|l| {
                if l < 4 {
                    // Unit function-L2-norm curve on an 8-point grid.
                    vec![1.0; 8]
                } else {
                    vec![0.0; 8]
                }
            })
            .collect();
        let zero = vec![vec![0.0; 8]; 12];
        let (mise, ise) = mise_ise(&zero, &truth).unwrap();
        assert!((mise - 4.0 / 12.0).abs() < 1e-15);
        assert!((ise[0] - 1.0).abs() < 1e-15);
        assert_eq!(ise[11], 0.0);
        let (perfect, _) = mise_ise(&truth, &truth).unwrap();
        assert_eq!(perfect, 0.0);
    }

    #[test]
    fn mise_matches_direct_sum_oracle_and_is_reorder_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let a: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (mise, ise) = mise_ise(&a, &b).unwrap();
        let mut oracle = 0.0;
        for l in 0..5 {
            let mut s = 0.0;
            for j in 0..16 {
                let d = a[l][j] - b[l][j];
                s += d * d;
            }
            s /= 16.0;
            assert!((ise[l] - s).abs() < 1e-14);
            oracle += s;
        }
        oracle /= 5.0;
        assert!((mise - oracle).abs() < 1e-14);

        let perm = [3usize, 0, 4, 1, 2];
        let ap: Vec<Vec<f64>> = perm.iter().map(|l| a[*l].clone()).collect();
        let bp: Vec<Vec<f64>> = perm.iter().map(|l| b[*l].clone()).collect();
        let (mise_p, _) = mise_ise(&ap, &bp).unwrap();
        assert!((mise - mise_p).abs() < 1e-14);
    }

    #[test]
    fn mape_examples() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(mape(&y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        assert!((mape(&shifted, &y).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let oracle: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 20.0;
        assert!((mape(&a, &b).unwrap() - oracle).abs() < 1e-15);
        assert!(mape(&a, &[1.0]).is_err());
    }

    #[test]
    fn function_norm_consistent_with_ise() {
        let beta = [0.5, -1.5, 2.0, 0.0];
        let zero = [0.0; 4];
        let (_, ise) = mise_ise(&[beta.to_vec()], &[zero.to_vec()]).unwrap();
        assert!((function_l2_norm(&beta) - ise[0].sqrt()).abs() < 1e-15);
    }
}
