//! Conjugate Gibbs sampler for the Gaussian mixture, used as the reference
//! posterior, plus effective-sample-size accounting.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{ChiSquared, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LrvbError, Result};
use crate::gmm::{Dataset, GmmTruth};
use crate::layout::{sym_pairs, BlockId, ParamLayout};

/// Prior precision of each component mean, centred at the data mean.
pub const PRIOR_MEAN_PRECISION: f64 = 1e-6;
/// Diagonal of the inverse prior Wishart scale.
pub const PRIOR_SCALE_INV: f64 = 1e-6;
/// Symmetric Dirichlet prior on the weights.
pub const PRIOR_CONCENTRATION: f64 = 1.0;
/// Fraction of draws with reordered first-coordinate means that flags a run.
pub const LABEL_SWITCH_FRACTION: f64 = 0.1;
/// Minimum effective sample size for a summary to count as well sampled.
pub const MIN_ESS: f64 = 500.0;

/// Wishart draw by the Bartlett decomposition; `scale_l` is a Cholesky
/// factor of the scale matrix.
pub fn sample_wishart<R: Rng + ?Sized>(rng: &mut R, dof: f64, scale_l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = scale_l.nrows();
    if !(dof > p as f64 - 1.0) {
        return Err(LrvbError::NonInterior {
            factor: "Wishart".into(),
            detail: format!("dof {dof} must exceed P - 1 = {}", p as f64 - 1.0),
        });
    }
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).expect("positive degrees of freedom");
        a[(i, i)] = rng.sample(chi).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = scale_l * a;
    let w = &la * la.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// Log of a Dirichlet draw, computed from log-gamma variates.
fn sample_log_dirichlet<R: Rng + ?Sized>(rng: &mut R, conc: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = conc
        .iter()
        .map(|&a| rng.sample(Gamma::new(a, 1.0).expect("positive concentration")))
        .collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|v| (v / total).ln()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsChain {
    /// Layout of the recorded α statistics.
    pub layout: ParamLayout,
    pub labels: Vec<String>,
    /// Post-burn-in draws, one row per iteration, columns in α layout order.
    pub stats: DMatrix<f64>,
    pub seed: u64,
    pub iters: usize,
    pub burn: usize,
    pub label_switch_fraction: f64,
    pub label_switched: bool,
}

impl GibbsChain {
    pub fn draws(&self) -> usize {
        self.stats.nrows()
    }

    /// Draws of component means, as `(draw, k, p)`.
    pub fn mu(&self, draw: usize, k: usize) -> DVector<f64> {
        let r = self.layout.range(BlockId::Mu(k)).expect("component in layout");
        self.stats.row(draw).columns(r.start, r.len()).transpose()
    }
}

struct Current {
    mu: Vec<DVector<f64>>,
    lambda: Vec<DMatrix<f64>>,
    log_pi: Vec<f64>,
}

fn order_by_first_coordinate(mu: &[DVector<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..mu.len()).collect();
    idx.sort_by(|&a, &b| mu[a][0].total_cmp(&mu[b][0]));
    idx
}

fn write_stats(cur: &Current, layout: &ParamLayout, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + layout.alpha_dim(), 0.0);
    let row = &mut out[start..];
    let p = layout.p();
    for k in 0..layout.k() {
        let o = layout.range(BlockId::Mu(k)).expect("in layout").start;
        row[o..o + p].copy_from_slice(cur.mu[k].as_slice());
        let o = layout.range(BlockId::MuOuter(k)).expect("in layout").start;
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            row[o + i] = cur.mu[k][a] * cur.mu[k][b];
        }
        let o = layout.range(BlockId::Lambda(k)).expect("in layout").start;
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            row[o + i] = cur.lambda[k][(a, b)];
        }
        let o = layout.range(BlockId::LogDetLambda(k)).expect("in layout").start;
        row[o] = cur.lambda[k].clone().cholesky().expect("PD draw").ln_determinant();
    }
    let o = layout.range(BlockId::LogPi).expect("in layout").start;
    row[o..o + layout.k()].copy_from_slice(&cur.log_pi);
}

/// Runs `iters` sweeps from `init`, discarding the first `burn`.
pub fn gibbs_run(data: &Dataset, init: &GmmTruth, iters: usize, burn: usize, seed: u64) -> Result<GibbsChain> {
    init.validate()?;
    if iters <= burn {
        return Err(LrvbError::InvalidConfig(format!("iters ({iters}) must exceed burn ({burn})")));
    }
    let (n, p, kk) = (data.n(), data.p(), init.k());
    if init.p() != p {
        return Err(LrvbError::DimensionMismatch(format!(
            "initial values have P = {}, data has P = {p}",
            init.p()
        )));
    }
    let layout = ParamLayout::new(kk, p, n, false)?;
    let mut rng = StdRng::seed_from_u64(seed);

    let prior_mean: DVector<f64> = data.x.row_mean().transpose();
    let prior_dof = p as f64 + 1.0;
    let prior_scale_inv = DMatrix::identity(p, p) * PRIOR_SCALE_INV;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.x.row(i).iter().copied().collect()).collect();

    let mut cur = Current {
        mu: (0..kk).map(|k| init.mean(k)).collect(),
        lambda: (0..kk).map(|k| init.precision(k)).collect::<Result<_>>()?,
        log_pi: init.weights.iter().map(|w| w.ln()).collect(),
    };
    let reference = order_by_first_coordinate(&cur.mu);

    let mut stats = Vec::with_capacity((iters - burn) * layout.alpha_dim());
    let mut switched = 0usize;
    let mut logits = vec![0.0; kk];
    let mut diff = vec![0.0; p];
    for it in 0..iters {
        // z | μ, Λ, π, accumulating per-component sums.
        let consts: Vec<f64> = (0..kk)
            .map(|k| cur.log_pi[k] + 0.5 * cur.lambda[k].clone().cholesky().expect("PD draw").ln_determinant())
            .collect();
        let mut count = vec![0usize; kk];
        let mut sx = vec![DVector::<f64>::zeros(p); kk];
        let mut sxx = vec![DMatrix::<f64>::zeros(p, p); kk];
        for x in &rows {
            for k in 0..kk {
                for j in 0..p {
                    diff[j] = x[j] - cur.mu[k][j];
                }
                let lam = &cur.lambda[k];
                let mut q = 0.0;
                for a in 0..p {
                    let mut s = 0.0;
                    for b in 0..p {
                        s += lam[(a, b)] * diff[b];
                    }
                    q += diff[a] * s;
                }
                logits[k] = consts[k] - 0.5 * q;
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - top).exp();
                total += *l;
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut z = kk - 1;
            for (k, &w) in logits.iter().enumerate() {
                acc += w;
                if u < acc {
                    z = k;
                    break;
                }
            }
            count[z] += 1;
            for a in 0..p {
                sx[z][a] += x[a];
                for b in a..p {
                    sxx[z][(a, b)] += x[a] * x[b];
                }
            }
        }
        for s in sxx.iter_mut() {
            for a in 0..p {
                for b in 0..a {
                    s[(a, b)] = s[(b, a)];
                }
            }
        }

        for k in 0..kk {
            let nk = count[k] as f64;
            // μ_k | Λ_k, z
            let prec = &cur.lambda[k] * nk + DMatrix::identity(p, p) * PRIOR_MEAN_PRECISION;
            let rhs = &cur.lambda[k] * &sx[k] + &prior_mean * PRIOR_MEAN_PRECISION;
            let chol = prec.cholesky().ok_or_else(|| LrvbError::NonInterior {
                factor: "Gibbs μ conditional".into(),
                detail: format!("precision of component {k} is not positive definite"),
            })?;
            let mean = chol.solve(&rhs);
            let eps = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&eps)
                .expect("nonsingular Cholesky factor");
            cur.mu[k] = mean + noise;

            // Λ_k | μ_k, z
            let m = &cur.mu[k];
            let scatter = &sxx[k] - &sx[k] * m.transpose() - m * sx[k].transpose() + m * m.transpose() * nk;
            let post_inv = &prior_scale_inv + (&scatter + scatter.transpose()) * 0.5;
            let scale = post_inv
                .cholesky()
                .ok_or_else(|| LrvbError::NonInterior {
                    factor: "Gibbs Λ conditional".into(),
                    detail: format!("scatter of component {k} is not positive definite"),
                })?
                .inverse();
            let scale_l = scale.cholesky().expect("inverse of a PD matrix").l();
            cur.lambda[k] = sample_wishart(&mut rng, prior_dof + nk, &scale_l)?;
        }

        // π | z
        let conc: Vec<f64> = count.iter().map(|&c| PRIOR_CONCENTRATION + c as f64).collect();
        cur.log_pi = sample_log_dirichlet(&mut rng, &conc);

        if it >= burn {
            write_stats(&cur, &layout, &mut stats);
            if order_by_first_coordinate(&cur.mu) != reference {
                switched += 1;
            }
        }
    }
    let draws = iters - burn;
    let fraction = switched as f64 / draws as f64;
    Ok(GibbsChain {
        labels: layout.alpha_labels(),
        stats: DMatrix::from_row_slice(draws, layout.alpha_dim(), &stats),
        layout,
        seed,
        iters,
        burn,
        label_switch_fraction: fraction,
        label_switched: fraction > LABEL_SWITCH_FRACTION,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// Set for constant series, where autocorrelations are undefined.
    pub degenerate: bool,
}

/// Effective sample size with Geyer's initial positive sequence truncation.
pub fn ess(series: &[f64]) -> Result<Ess> {
    let n = series.len();
    if n < 10 {
        return Err(LrvbError::InvalidDimension(format!("ESS needs at least 10 draws, got {n}")));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| dev[..n - lag].iter().zip(&dev[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf;
    let c0 = autocov(0);
    if !(c0 > f64::EPSILON * mean.abs().max(1.0).powi(2) * 1e-4) {
        return Ok(Ess {
            value: nf,
            degenerate: true,
        });
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    Ok(Ess {
        value: (nf / tau).clamp(1.0, nf),
        degenerate: false,
    })
}

/// Monte Carlo moments of the α statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub labels: Vec<String>,
    pub draws: usize,
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ess: DVector<f64>,
    /// `sd / sqrt(ess)` per statistic.
    pub mc_se: DVector<f64>,
    /// Statistics whose ESS is below [`MIN_ESS`].
    pub under_sampled: Vec<String>,
}

impl PosteriorSummary {
    pub fn min_ess(&self) -> f64 {
        self.ess.min()
    }

    pub fn well_sampled(&self) -> bool {
        self.under_sampled.is_empty()
    }
}

/// Summarizes draws stored one row per iteration.
pub fn summarize_draws(draws: &DMatrix<f64>, labels: &[String]) -> Result<PosteriorSummary> {
    if labels.len() != draws.ncols() {
        return Err(LrvbError::DimensionMismatch(format!(
            "{} labels for {} statistics",
            labels.len(),
            draws.ncols()
        )));
    }
    let n = draws.nrows();
    if n < 10 {
        return Err(LrvbError::InvalidDimension(format!("need at least 10 draws, got {n}")));
    }
    let mean: DVector<f64> = draws.row_mean().transpose();
    let centred = DMatrix::from_fn(n, draws.ncols(), |i, j| draws[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let sd = cov.diagonal().map(f64::sqrt);
    let mut ess_v = DVector::zeros(draws.ncols());
    for j in 0..draws.ncols() {
        let col: Vec<f64> = draws.column(j).iter().copied().collect();
        ess_v[j] = ess(&col)?.value;
    }
    let mc_se = sd.zip_map(&ess_v, |s, e| s / e.sqrt());
    let under_sampled = labels
        .iter()
        .zip(ess_v.iter())
        .filter(|(_, &e)| e < MIN_ESS)
        .map(|(l, _)| l.clone())
        .collect();
    Ok(PosteriorSummary {
        labels: labels.to_vec(),
        draws: n,
        mean,
        sd,
        cov,
        ess: ess_v,
        mc_se,
        under_sampled,
    })
}

pub fn posterior_summary(chain: &GibbsChain) -> Result<PosteriorSummary> {
    summarize_draws(&chain.stats, &chain.labels)
}
