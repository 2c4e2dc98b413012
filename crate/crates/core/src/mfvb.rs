//! Coordinate-ascent mean-field variational Bayes for the Gaussian mixture.
//!
//! Each factor update is the exact conditionally conjugate update given the
//! current means of the other factors. A perturbation `t` over the α
//! statistics is added to the corresponding natural parameters, which makes
//! the same solver produce the perturbed optimum used by the finite
//! difference oracles.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{LrvbError, Result};
use crate::gmm::factors::{write_alpha_mean_params, write_z_mean_params};
use crate::gmm::{factor_mean_params, Dataset, DirichletFactor, FactorParams, GmmTruth, MvnFactor, WishartFactor};
use crate::layout::{sym_pairs, sym_index, BlockId, ParamLayout};

/// Expected component counts below this abort the fit.
pub const DEGENERATE_COUNT: f64 = 1e-8;

/// How the first sweep is seeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Start from known mixture parameters.
    Truth { truth: GmmTruth },
    /// Lloyd's algorithm with k-means++ seeding, best of several restarts.
    Kmeans,
    /// Random responsibilities.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of mixture components.
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub init: Init,
    #[serde(default)]
    pub seed: u64,
    /// Sparse perturbation over α indices.
    #[serde(default)]
    pub t: BTreeMap<usize, f64>,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    10_000
}

impl SolverConfig {
    pub fn new(k: usize, init: Init) -> Self {
        Self {
            k,
            tol: default_tol(),
            max_iter: default_max_iter(),
            init,
            seed: 0,
            t: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(LrvbError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(LrvbError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(LrvbError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if let Init::Truth { truth } = &self.init {
            truth.validate()?;
            if truth.k() != self.k {
                return Err(LrvbError::InvalidConfig(format!(
                    "truth has {} components, config asks for {}",
                    truth.k(),
                    self.k
                )));
            }
        }
        if self.t.values().any(|v| !v.is_finite()) {
            return Err(LrvbError::InvalidConfig("perturbation entries must be finite".into()));
        }
        Ok(())
    }

    /// Dense perturbation vector over the α statistics of `layout`.
    pub fn t_vector(&self, layout: &ParamLayout) -> Result<DVector<f64>> {
        let mut t = DVector::zeros(layout.alpha_dim());
        for (&i, &v) in &self.t {
            if i >= layout.alpha_dim() {
                return Err(LrvbError::InvalidConfig(format!(
                    "perturbation index {i} is outside the α block of size {}",
                    layout.alpha_dim()
                )));
            }
            t[i] = v;
        }
        Ok(t)
    }
}

/// The factors updated by one coordinate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorName {
    Z,
    Mu,
    Lambda,
    Pi,
}

impl FactorName {
    /// Sweep order.
    pub const SWEEP: [FactorName; 4] = [FactorName::Z, FactorName::Mu, FactorName::Lambda, FactorName::Pi];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub layout: ParamLayout,
    pub factors: FactorParams,
    /// Stacked mean parameters of `factors` over `layout`.
    pub m: DVector<f64>,
    /// Perturbation over the α statistics.
    pub t: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_change: f64,
}

impl VariationalState {
    /// Wraps factors, computing `m`.
    pub fn from_factors(factors: FactorParams, layout: ParamLayout, t: DVector<f64>) -> Result<Self> {
        if t.len() != layout.alpha_dim() {
            return Err(LrvbError::DimensionMismatch(format!(
                "perturbation has length {}, α has {}",
                t.len(),
                layout.alpha_dim()
            )));
        }
        let m = factor_mean_params(&factors, &layout)?;
        Ok(Self {
            layout,
            factors,
            m,
            t,
            iterations: 0,
            converged: false,
            max_change: f64::INFINITY,
        })
    }

    /// The same optimum with point-mass x* factors at the data, as needed
    /// for influence computations.
    pub fn with_x(&self, data: &Dataset) -> Result<Self> {
        let factors = self.factors.clone().with_point_x_star(data);
        let layout = self.layout.with_x(true);
        let m = factor_mean_params(&factors, &layout)?;
        Ok(Self {
            layout,
            factors,
            m,
            ..self.clone()
        })
    }

    pub fn alpha_means(&self) -> DVector<f64> {
        self.m.rows(0, self.layout.alpha_dim()).into_owned()
    }

    /// Standard deviations of the α statistics under the factorized q.
    pub fn mfvb_sds(&self) -> DVector<f64> {
        crate::gmm::factors::alpha_covariance(&self.factors, &self.layout)
            .diagonal()
            .map(f64::sqrt)
    }

    fn refresh_m(&mut self) -> f64 {
        let old = self.m.clone();
        write_alpha_mean_params(&self.factors, &self.layout, &mut self.m);
        write_z_mean_params(&self.factors, &self.layout, &mut self.m);
        (&self.m - old).amax()
    }
}

/// Responsibility-weighted data sums per component.
struct WeightedSums {
    count: Vec<f64>,
    sx: Vec<DVector<f64>>,
    sxx: Vec<DMatrix<f64>>,
}

fn weighted_sums(z: &DMatrix<f64>, data: &Dataset, second: bool) -> WeightedSums {
    let (n, k, p) = (data.n(), z.ncols(), data.p());
    let mut out = WeightedSums {
        count: vec![0.0; k],
        sx: vec![DVector::zeros(p); k],
        sxx: vec![DMatrix::zeros(p, p); if second { k } else { 0 }],
    };
    for i in 0..n {
        let x = data.x.row(i);
        for c in 0..k {
            let r = z[(i, c)];
            if r == 0.0 {
                continue;
            }
            out.count[c] += r;
            for a in 0..p {
                out.sx[c][a] += r * x[a];
            }
            if second {
                let s = &mut out.sxx[c];
                for a in 0..p {
                    let ra = r * x[a];
                    for b in a..p {
                        s[(a, b)] += ra * x[b];
                    }
                }
            }
        }
    }
    for s in &mut out.sxx {
        s.fill_lower_triangle_with_upper_triangle();
    }
    out
}

fn check_data(layout: &ParamLayout, data: &Dataset) -> Result<()> {
    if data.n() != layout.n() || data.p() != layout.p() {
        return Err(LrvbError::DimensionMismatch(format!(
            "data is {}x{}, state expects {}x{}",
            data.n(),
            data.p(),
            layout.n(),
            layout.p()
        )));
    }
    Ok(())
}

fn t_block<'a>(t: &'a DVector<f64>, layout: &ParamLayout, b: BlockId) -> &'a [f64] {
    &t.as_slice()[layout.range(b).expect("α block")]
}

/// Per-component constants of the z update.
fn z_update(factors: &mut FactorParams, data: &Dataset) {
    let (k, p) = (factors.k(), factors.p());
    let elog_pi = factors.pi.mean_params();
    let mut lam = Vec::with_capacity(k);
    let mut lin = Vec::with_capacity(k);
    let mut cst = Vec::with_capacity(k);
    for c in 0..k {
        let l = factors.lambda[c].mean();
        let mu = &factors.mu[c];
        let outer = &mu.cov + &mu.mean * mu.mean.transpose();
        cst.push(elog_pi[c] + 0.5 * factors.lambda[c].mean_log_det() - 0.5 * l.component_mul(&outer).sum());
        lin.push(&l * &mu.mean);
        lam.push(l);
    }
    let mut logits = vec![0.0; k];
    for i in 0..data.n() {
        let x = data.x.row(i);
        for c in 0..k {
            let mut quad = 0.0;
            for a in 0..p {
                let mut row = 0.0;
                for b in 0..p {
                    row += lam[c][(a, b)] * x[b];
                }
                quad += x[a] * row;
            }
            let mut dot = 0.0;
            for a in 0..p {
                dot += lin[c][a] * x[a];
            }
            logits[c] = cst[c] + dot - 0.5 * quad;
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - top).exp();
            total += *v;
        }
        for (c, v) in logits.iter().enumerate() {
            factors.z[(i, c)] = v / total;
        }
    }
}

fn check_counts(count: &[f64]) -> Result<()> {
    for (c, &n) in count.iter().enumerate() {
        if !(n >= DEGENERATE_COUNT) {
            return Err(LrvbError::Degenerate { component: c, count: n });
        }
    }
    Ok(())
}

fn mu_update(factors: &mut FactorParams, data: &Dataset, layout: &ParamLayout, t: &DVector<f64>) -> Result<()> {
    let p = factors.p();
    let sums = weighted_sums(&factors.z, data, false);
    check_counts(&sums.count)?;
    for c in 0..factors.k() {
        let lam = factors.lambda[c].mean();
        let t_mu = t_block(t, layout, BlockId::Mu(c));
        let t_outer = t_block(t, layout, BlockId::MuOuter(c));
        let eta1 = &lam * &sums.sx[c] + DVector::from_column_slice(t_mu);
        // Quadratic term Σ_{a≤b} η_ab μ_a μ_b = −½ μᵀ P μ.
        let mut prec = &lam * sums.count[c];
        for (a, b) in sym_pairs(p) {
            let ti = t_outer[sym_index(p, a, b)];
            if a == b {
                prec[(a, a)] -= 2.0 * ti;
            } else {
                prec[(a, b)] -= ti;
                prec[(b, a)] -= ti;
            }
        }
        let chol = prec.cholesky().ok_or_else(|| LrvbError::NonInterior {
            factor: format!("mu[{c}]"),
            detail: "update precision is not positive definite".into(),
        })?;
        let cov = chol.inverse();
        let mean = &cov * eta1;
        factors.mu[c] = MvnFactor { mean, cov };
    }
    Ok(())
}

fn lambda_update(factors: &mut FactorParams, data: &Dataset, layout: &ParamLayout, t: &DVector<f64>) -> Result<()> {
    let p = factors.p();
    let sums = weighted_sums(&factors.z, data, true);
    check_counts(&sums.count)?;
    for c in 0..factors.k() {
        let mu = &factors.mu[c];
        let outer = &mu.cov + &mu.mean * mu.mean.transpose();
        let cross = &sums.sx[c] * mu.mean.transpose();
        let mut scatter = &sums.sxx[c] - &cross - cross.transpose() + outer * sums.count[c];
        let t_lam = t_block(t, layout, BlockId::Lambda(c));
        for (a, b) in sym_pairs(p) {
            let ti = t_lam[sym_index(p, a, b)];
            if a == b {
                scatter[(a, a)] -= 2.0 * ti;
            } else {
                scatter[(a, b)] -= ti;
                scatter[(b, a)] -= ti;
            }
        }
        let t_ld = t_block(t, layout, BlockId::LogDetLambda(c))[0];
        // Flat prior: the log|Λ| natural parameter is N_k/2 = (ν − P − 1)/2.
        let dof = sums.count[c] + 2.0 * t_ld + p as f64 + 1.0;
        let degenerate = || LrvbError::NonInterior {
            factor: format!("lambda[{c}]"),
            detail: "expected scatter matrix is not positive definite".into(),
        };
        let chol = scatter.cholesky().ok_or_else(degenerate)?;
        let scale = chol.inverse();
        let w = WishartFactor { dof, scale };
        if !(dof > p as f64 - 1.0 + crate::gmm::factors::WISHART_DOF_GUARD) {
            return Err(LrvbError::NonInterior {
                factor: format!("lambda[{c}]"),
                detail: format!("degrees of freedom {dof} too small"),
            });
        }
        factors.lambda[c] = w;
    }
    Ok(())
}

fn pi_update(factors: &mut FactorParams, layout: &ParamLayout, t: &DVector<f64>) -> Result<()> {
    let k = factors.k();
    let t_pi = t_block(t, layout, BlockId::LogPi);
    let counts: Vec<f64> = (0..k).map(|c| factors.z.column(c).sum()).collect();
    check_counts(&counts)?;
    let conc = DVector::from_fn(k, |c, _| counts[c] + t_pi[c] + 1.0);
    if conc.iter().any(|&a| !(a > 0.0)) {
        return Err(LrvbError::NonInterior {
            factor: "pi".into(),
            detail: "Dirichlet concentration not positive".into(),
        });
    }
    factors.pi = DirichletFactor { concentration: conc };
    Ok(())
}

/// Replaces one factor with its conditional optimum given the others.
pub fn coordinate_step(state: &VariationalState, data: &Dataset, factor: FactorName) -> Result<VariationalState> {
    let mut next = state.clone();
    step_in_place(&mut next, data, factor)?;
    next.refresh_m();
    Ok(next)
}

fn step_in_place(state: &mut VariationalState, data: &Dataset, factor: FactorName) -> Result<()> {
    check_data(&state.layout, data)?;
    let layout = state.layout;
    match factor {
        FactorName::Z => z_update(&mut state.factors, data),
        FactorName::Mu => mu_update(&mut state.factors, data, &layout, &state.t)?,
        FactorName::Lambda => lambda_update(&mut state.factors, data, &layout, &state.t)?,
        FactorName::Pi => pi_update(&mut state.factors, &layout, &state.t)?,
    }
    Ok(())
}

/// One full sweep in the documented order; returns the max change of `m`.
pub fn sweep(state: &mut VariationalState, data: &Dataset) -> Result<f64> {
    for f in FactorName::SWEEP {
        step_in_place(state, data, f)?;
    }
    state.iterations += 1;
    let change = state.refresh_m();
    state.max_change = change;
    Ok(change)
}

/// Runs sweeps until the max change of `m` drops below `tol`.
pub fn run_to_convergence(state: &mut VariationalState, data: &Dataset, tol: f64, max_iter: usize) -> Result<()> {
    state.converged = false;
    for _ in 0..max_iter {
        if sweep(state, data)? < tol {
            state.converged = true;
            break;
        }
    }
    Ok(())
}

/// Fits the mixture from the configured initialization.
pub fn fit(data: &Dataset, cfg: &SolverConfig) -> Result<VariationalState> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg.k, data.p(), data.n(), false)?;
    let t = cfg.t_vector(&layout)?;
    let start = match &cfg.init {
        Init::Truth { truth } => {
            if truth.p() != data.p() {
                return Err(LrvbError::DimensionMismatch(format!(
                    "truth has P = {}, data has P = {}",
                    truth.p(),
                    data.p()
                )));
            }
            truth.clone()
        }
        Init::Kmeans => kmeans_init(data, cfg.k, cfg.seed)?,
        Init::Random => random_init(data, cfg.k, cfg.seed)?,
    };
    let mut factors = factors_near(&start, data.n())?;
    z_update(&mut factors, data);
    let mut state = VariationalState::from_factors(factors, layout, t)?;
    run_to_convergence(&mut state, data, cfg.tol, cfg.max_iter)?;
    Ok(state)
}

/// Refits from an existing state (a warm start), using `cfg`'s tolerance,
/// iteration limit and perturbation.
pub fn fit_from(state: &VariationalState, data: &Dataset, cfg: &SolverConfig) -> Result<VariationalState> {
    cfg.validate()?;
    let layout = state.layout.with_x(false);
    let t = cfg.t_vector(&layout)?;
    let mut factors = state.factors.clone();
    factors.x_star = None;
    let mut next = VariationalState::from_factors(factors, layout, t)?;
    next.iterations = 0;
    run_to_convergence(&mut next, data, cfg.tol, cfg.max_iter)?;
    Ok(next)
}

/// Factors concentrated around the given mixture parameters, as if fitted
/// to `n` points.
fn factors_near(truth: &GmmTruth, n: usize) -> Result<FactorParams> {
    truth.validate()?;
    let (k, p) = (truth.k(), truth.p());
    let n = n as f64;
    let mut mu = Vec::with_capacity(k);
    let mut lambda = Vec::with_capacity(k);
    for c in 0..k {
        let count = (n * truth.weights[c]).max(1.0);
        mu.push(MvnFactor {
            mean: truth.mean(c),
            cov: truth.covariance(c) / count,
        });
        let dof = count + p as f64 + 1.0;
        lambda.push(WishartFactor {
            dof,
            scale: truth.precision(c)? / dof,
        });
    }
    Ok(FactorParams {
        mu,
        lambda,
        pi: DirichletFactor {
            concentration: DVector::from_iterator(k, truth.weights.iter().map(|w| n * w + 1.0)),
        },
        z: DMatrix::from_element(n as usize, k, 1.0 / k as f64),
        x_star: None,
    })
}

/// Mixture parameters from soft assignments; covariances get a small ridge
/// so that tiny clusters stay positive definite.
fn moments_from_assignments(data: &Dataset, z: &DMatrix<f64>) -> GmmTruth {
    let (n, p, k) = (data.n(), data.p(), z.ncols());
    let sums = weighted_sums(z, data, true);
    let overall = {
        let mean = data.x.row_mean().transpose();
        let centered = &data.x - DMatrix::from_fn(n, p, |_, j| mean[j]);
        (centered.transpose() * centered) / n as f64
    };
    let ridge = 1e-6 * (overall.trace() / p as f64).max(1e-12);
    let total: f64 = sums.count.iter().sum();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let cnt = sums.count[c];
        weights.push((cnt / total).max(1e-6));
        if cnt < (p + 1) as f64 {
            let mean = if cnt > 0.0 {
                &sums.sx[c] / cnt
            } else {
                data.row(c % n)
            };
            means.push(mean.as_slice().to_vec());
            covs.push(matrix_rows(&(&overall + DMatrix::identity(p, p) * ridge)));
            continue;
        }
        let mean = &sums.sx[c] / cnt;
        let cov = &sums.sxx[c] / cnt - &mean * mean.transpose() + DMatrix::identity(p, p) * ridge;
        let cov = (&cov + cov.transpose()) * 0.5;
        means.push(mean.as_slice().to_vec());
        covs.push(matrix_rows(&cov));
    }
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    // Renormalize exactly so validation's 1e-12 tolerance holds.
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    GmmTruth {
        weights,
        means,
        covariances: covs,
        seed: 0,
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_PASSES: usize = 100;

/// Hard k-means labels: best of several seeded restarts of Lloyd's algorithm.
pub fn kmeans(data: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let (n, p) = (data.n(), data.p());
    if k == 0 || k > n {
        return Err(LrvbError::InvalidConfig(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let dist2 = |i: usize, c: &DVector<f64>| -> f64 { (0..p).map(|j| (data.x[(i, j)] - c[j]).powi(2)).sum() };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        // k-means++ seeding
        let mut centers = vec![data.row(rng.random_range(0..n))];
        let mut d2: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if u < d {
                        idx = i;
                        break;
                    }
                    u -= d;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centers.push(data.row(pick));
            for (i, d) in d2.iter_mut().enumerate() {
                *d = d.min(dist2(i, centers.last().unwrap()));
            }
        }
        let mut labels = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_PASSES {
            let mut changed = false;
            for (i, label) in labels.iter_mut().enumerate() {
                let nearest = (0..k)
                    .min_by(|&a, &b| dist2(i, &centers[a]).total_cmp(&dist2(i, &centers[b])))
                    .unwrap();
                if *label != nearest {
                    *label = nearest;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![DVector::zeros(p); k];
            let mut counts = vec![0usize; k];
            for (i, &l) in labels.iter().enumerate() {
                sums[l] += data.row(i);
                counts[l] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = &sums[c] / counts[c] as f64;
                }
            }
        }
        let cost: f64 = labels.iter().enumerate().map(|(i, &l)| dist2(i, &centers[l])).sum();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn kmeans_init(data: &Dataset, k: usize, seed: u64) -> Result<GmmTruth> {
    let labels = kmeans(data, k, seed)?;
    let z = DMatrix::from_fn(data.n(), k, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
    Ok(moments_from_assignments(data, &z))
}

fn random_init(data: &Dataset, k: usize, seed: u64) -> Result<GmmTruth> {
    let mut rng = StdRng::seed_from_u64(seed);
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let mut z = DMatrix::from_fn(data.n(), k, |_, _| gamma.sample(&mut rng));
    for i in 0..data.n() {
        let s = z.row(i).sum();
        z.row_mut(i).scale_mut(1.0 / s);
    }
    Ok(moments_from_assignments(data, &z))
}

/// Evidence lower bound up to a constant independent of the variational
/// parameters, including the `tᵀ m_α` perturbation term.
pub fn elbo(state: &VariationalState, data: &Dataset) -> Result<f64> {
    check_data(&state.layout, data)?;
    let f = &state.factors;
    let (k, p) = (f.k(), f.p());
    let elog_pi = f.pi.mean_params();
    let sums = weighted_sums(&f.z, data, true);
    let mut total = 0.0;
    for c in 0..k {
        let lam = f.lambda[c].mean();
        let mu = &f.mu[c];
        let outer = &mu.cov + &mu.mean * mu.mean.transpose();
        let cross = &sums.sx[c] * mu.mean.transpose();
        let scatter = &sums.sxx[c] - &cross - cross.transpose() + outer * sums.count[c];
        total += sums.count[c]
            * (elog_pi[c] + 0.5 * f.lambda[c].mean_log_det() - 0.5 * p as f64 * (2.0 * PI).ln())
            - 0.5 * lam.component_mul(&scatter).sum();
        total += mu.entropy() + f.lambda[c].entropy();
    }
    total += f.pi.entropy();
    total -= f.z.iter().filter(|&&r| r > 0.0).map(|&r| r * r.ln()).sum::<f64>();
    total += state.t.dot(&state.alpha_means());
    Ok(total)
}
