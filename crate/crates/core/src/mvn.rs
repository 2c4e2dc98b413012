//! Mean-field approximation of a multivariate normal posterior, where the
//! linear-response correction recovers the exact covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LrvbError, Result};
use crate::lrvb::lrvb_dense;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvnTarget {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Coordinates of each variational factor.
    pub partition: Vec<Vec<usize>>,
}

impl MvnTarget {
    /// Fully factorized target: one factor per coordinate.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let partition = (0..mu.len()).map(|j| vec![j]).collect();
        Self::with_partition(mu, sigma, partition)
    }

    pub fn with_partition(mu: DVector<f64>, sigma: DMatrix<f64>, partition: Vec<Vec<usize>>) -> Result<Self> {
        let t = Self { mu, sigma, partition };
        t.validate()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.dim();
        if j == 0 {
            return Err(LrvbError::InvalidDimension("empty target".into()));
        }
        if self.sigma.shape() != (j, j) {
            return Err(LrvbError::DimensionMismatch(format!(
                "Σ is {:?} for a mean of length {j}",
                self.sigma.shape()
            )));
        }
        crate::layout::pack_symmetric(&self.sigma)?;
        if self.sigma.clone().cholesky().is_none() {
            return Err(LrvbError::InvalidConfig("Σ is not positive definite".into()));
        }
        let mut seen = vec![false; j];
        for g in &self.partition {
            if g.is_empty() {
                return Err(LrvbError::InvalidConfig("empty factor in partition".into()));
            }
            for &i in g {
                if i >= j || std::mem::replace(&mut seen[i], true) {
                    return Err(LrvbError::InvalidConfig(format!(
                        "partition must cover 0..{j} exactly once (problem at {i})"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(LrvbError::InvalidConfig("partition does not cover every coordinate".into()));
        }
        Ok(())
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.sigma.clone().cholesky().expect("validated").inverse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvnFit {
    pub m: DVector<f64>,
    /// Block-diagonal factor covariance.
    pub v: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Factor covariance: `Λ_gg⁻¹` on each factor's block.
fn factor_cov(target: &MvnTarget, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let j = target.dim();
    let mut v = DMatrix::zeros(j, j);
    for g in &target.partition {
        let inv = sub(lambda, g, g).cholesky().expect("principal block of a PD matrix").inverse();
        for (a, &ga) in g.iter().enumerate() {
            for (b, &gb) in g.iter().enumerate() {
                v[(ga, gb)] = inv[(a, b)];
            }
        }
    }
    v
}

/// Coordinate ascent from `init`.
pub fn mfvb_mvn_from(target: &MvnTarget, init: &DVector<f64>, tol: f64, max_sweeps: usize) -> Result<MvnFit> {
    target.validate()?;
    if init.len() != target.dim() {
        return Err(LrvbError::DimensionMismatch("initial point has the wrong length".into()));
    }
    if !(tol > 0.0) {
        return Err(LrvbError::InvalidConfig("tol must be positive".into()));
    }
    let lambda = target.precision();
    let j = target.dim();
    let solvers: Vec<_> = target
        .partition
        .iter()
        .map(|g| {
            let rest: Vec<usize> = (0..j).filter(|i| !g.contains(i)).collect();
            let chol = sub(&lambda, g, g).cholesky().expect("principal block of a PD matrix");
            let cross = sub(&lambda, g, &rest);
            (g.clone(), rest, chol, cross)
        })
        .collect();
    let mut m = init.clone();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut change = 0.0f64;
        for (g, rest, chol, cross) in &solvers {
            let dev = DVector::from_iterator(rest.len(), rest.iter().map(|&i| m[i] - target.mu[i]));
            let shift = chol.solve(&(cross * dev));
            for (a, &ga) in g.iter().enumerate() {
                let new = target.mu[ga] - shift[a];
                change = change.max((new - m[ga]).abs());
                m[ga] = new;
            }
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(MvnFit {
        m,
        v: factor_cov(target, &lambda),
        sweeps,
        converged,
    })
}

/// Coordinate ascent from the origin.
pub fn mfvb_mvn(target: &MvnTarget, tol: f64) -> Result<MvnFit> {
    mfvb_mvn_from(target, &DVector::zeros(target.dim()), tol, 100_000)
}

/// Linear-response covariance; `H` is `−Λ` across factors and zero within.
pub fn lrvb_mvn(target: &MvnTarget) -> Result<DMatrix<f64>> {
    target.validate()?;
    let lambda = target.precision();
    let v = factor_cov(target, &lambda);
    let mut h = -lambda;
    for g in &target.partition {
        for &a in g {
            for &b in g {
                h[(a, b)] = 0.0;
            }
        }
    }
    Ok(lrvb_dense(&v, &h)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_target(rng: &mut StdRng, j: usize) -> MvnTarget {
        let a = DMatrix::from_fn(j, j, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let sigma = &a * a.transpose() + DMatrix::identity(j, j) * 0.1;
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let mu = DVector::from_fn(j, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        MvnTarget::new(mu, sigma).unwrap()
    }

    #[test]
    fn diagonal_target_is_already_mean_field() {
        let mu = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 2.0, 1.5]));
        let t = MvnTarget::new(mu.clone(), sigma.clone()).unwrap();
        let one = mfvb_mvn_from(&t, &DVector::zeros(3), 1e-12, 1).unwrap();
        assert_eq!(one.m, mu);
        assert!((one.v.clone() - &sigma).amax() < 1e-15);
        assert!((lrvb_mvn(&t).unwrap() - sigma).amax() < 1e-15);
    }

    #[test]
    fn correlated_pair() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let t = MvnTarget::new(DVector::zeros(2), sigma.clone()).unwrap();
        let fit = mfvb_mvn(&t, 1e-12).unwrap();
        assert!(fit.m.amax() < 1e-12);
        assert!((fit.v[(0, 0)] - 0.19).abs() < 1e-12);
        assert!((fit.v[(1, 1)] - 0.19).abs() < 1e-12);
        assert!((lrvb_mvn(&t).unwrap() - sigma).amax() < 1e-10);
    }

    #[test]
    fn exact_for_random_targets() {
        let mut rng = StdRng::seed_from_u64(42);
        for &j in &[2, 3, 5, 10] {
            for _ in 0..5 {
                let t = random_target(&mut rng, j);
                let fit = mfvb_mvn(&t, 1e-12).unwrap();
                assert!((&fit.m - &t.mu).amax() < 1e-9);
                let s = lrvb_mvn(&t).unwrap();
                let rel = (&s - &t.sigma).amax() / t.sigma.amax();
                assert!(rel < 1e-8, "J = {j}: {rel}");
                for i in 0..j {
                    assert!(fit.v[(i, i)] <= t.sigma[(i, i)] * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn unique_fixed_point() {
        let mut rng = StdRng::seed_from_u64(5);
        let t = random_target(&mut rng, 5);
        for _ in 0..100 {
            let init = DVector::from_fn(5, |_, _| rng.random::<f64>() * 20.0 - 10.0);
            let fit = mfvb_mvn_from(&t, &init, 1e-12, 1_000_000).unwrap();
            assert!((&fit.m - &t.mu).amax() < 1e-8);
        }
    }

    #[test]
    fn grouped_factors_are_exact_too() {
        let mut rng = StdRng::seed_from_u64(9);
        let base = random_target(&mut rng, 5);
        let t = MvnTarget::with_partition(base.mu, base.sigma, vec![vec![0, 3], vec![1], vec![2, 4]]).unwrap();
        let s = lrvb_mvn(&t).unwrap();
        assert!((&s - &t.sigma).amax() / t.sigma.amax() < 1e-8);
        assert!(mfvb_mvn(&t, 1e-12).unwrap().v[(0, 1)] == 0.0);
    }

    #[test]
    fn invalid_targets_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MvnTarget::new(DVector::zeros(2), s).is_err());
        let s = DMatrix::identity(2, 2);
        assert!(MvnTarget::with_partition(DVector::zeros(2), s.clone(), vec![vec![0]]).is_err());
        assert!(MvnTarget::with_partition(DVector::zeros(2), s, vec![vec![0, 1], vec![1]]).is_err());
    }
}
