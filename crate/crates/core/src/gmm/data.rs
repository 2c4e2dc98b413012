use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LrvbError, Result};

/// Observations, one row per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// Simulation truth component of each row, when known.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(LrvbError::InvalidDimension(
                "dataset needs at least one row and one column".into(),
            ));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(LrvbError::InvalidConfig(format!(
                "non-finite value at row {}, column {}",
                i % x.nrows(),
                i / x.nrows()
            )));
        }
        Ok(Self { x, labels: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(LrvbError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        self.x.row(n).transpose()
    }

    /// Copy of the data with a single coordinate shifted.
    pub fn perturbed(&self, n: usize, p: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.x[(n, p)] += delta;
        out
    }

    /// Rows concatenated after `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.p() != other.p() {
            return Err(LrvbError::DimensionMismatch(format!(
                "cannot concatenate P={} with P={}",
                self.p(),
                other.p()
            )));
        }
        let (n1, n2) = (self.n(), other.n());
        let x = DMatrix::from_fn(n1 + n2, self.p(), |i, j| {
            if i < n1 {
                self.x[(i, j)]
            } else {
                other.x[(i - n1, j)]
            }
        });
        Ok(Self { x, labels: None })
    }
}

/// Parameters of a simulated mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmTruth {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

impl GmmTruth {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.means[k])
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |a, b| self.covariances[k][a][b])
    }

    pub fn precision(&self, k: usize) -> Result<DMatrix<f64>> {
        self.covariance(k)
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| LrvbError::InvalidConfig(format!("covariance {k} is not positive definite")))
    }

    pub fn validate(&self) -> Result<()> {
        let (k, p) = (self.k(), self.p());
        if k == 0 || p == 0 {
            return Err(LrvbError::InvalidDimension("empty mixture".into()));
        }
        if self.means.len() != k || self.covariances.len() != k {
            return Err(LrvbError::DimensionMismatch(format!(
                "{k} weights but {} means and {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(LrvbError::InvalidConfig("weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LrvbError::InvalidConfig(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        for c in 0..k {
            if self.means[c].len() != p
                || self.covariances[c].len() != p
                || self.covariances[c].iter().any(|r| r.len() != p)
            {
                return Err(LrvbError::DimensionMismatch(format!(
                    "component {c} does not have dimension {p}"
                )));
            }
            crate::layout::pack_symmetric(&self.covariance(c))?;
            self.precision(c)?;
        }
        Ok(())
    }

    /// The same mixture with components reordered: component `i` of the
    /// result is component `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            means: perm.iter().map(|&i| self.means[i].clone()).collect(),
            covariances: perm.iter().map(|&i| self.covariances[i].clone()).collect(),
            seed: self.seed,
        }
    }
}

/// A random mixture whose consecutive component means lie `separation`
/// apart along a random direction with a dominant first coordinate.
/// Covariances are `0.5 I + B Bᵀ` with `B` uniform on `[-1, 1] / √P`.
pub fn random_truth(k: usize, p: usize, separation: f64, seed: u64) -> Result<GmmTruth> {
    if k == 0 || p == 0 {
        return Err(LrvbError::InvalidDimension("K and P must be positive".into()));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(LrvbError::InvalidConfig(format!("separation must be finite and non-negative, got {separation}")));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut u = DVector::from_fn(p, |_, _| rng.random::<f64>() - 0.5);
    u[0] = 1.0 + rng.random::<f64>();
    u /= u.norm();
    let centre = (k as f64 - 1.0) / 2.0;
    let means = (0..k)
        .map(|c| (&u * ((c as f64 - centre) * separation)).iter().copied().collect())
        .collect();
    let width = 1.0 / (p as f64).sqrt();
    let covariances = (0..k)
        .map(|_| {
            let b = DMatrix::from_fn(p, p, |_, _| (2.0 * rng.random::<f64>() - 1.0) * width);
            let s = DMatrix::identity(p, p) * 0.5 + &b * b.transpose();
            (0..p).map(|a| (0..p).map(|c| 0.5 * (s[(a, c)] + s[(c, a)])).collect()).collect()
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| 1.0 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let rest: f64 = weights[..k - 1].iter().sum();
    weights[k - 1] = 1.0 - rest;
    let truth = GmmTruth {
        weights,
        means,
        covariances,
        seed,
    };
    truth.validate()?;
    Ok(truth)
}

/// Draws `n` i.i.d. rows from the mixture; labels hold the true components.
pub fn simulate(truth: &GmmTruth, n: usize, seed: u64) -> Result<Dataset> {
    truth.validate()?;
    if n == 0 {
        return Err(LrvbError::InvalidDimension("N must be positive".into()));
    }
    let (k, p) = (truth.k(), truth.p());
    let chols: Vec<DMatrix<f64>> = (0..k)
        .map(|c| {
            truth
                .covariance(c)
                .cholesky()
                .map(|ch| ch.l())
                .expect("validated positive definite")
        })
        .collect();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut eps = DVector::zeros(p);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = k - 1;
        for (c, &w) in truth.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = c;
                break;
            }
        }
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let row = &chols[comp] * &eps;
        for j in 0..p {
            x[(i, j)] = truth.means[comp][j] + row[j];
        }
        labels.push(comp);
    }
    Ok(Dataset {
        x,
        labels: Some(labels),
    })
}
