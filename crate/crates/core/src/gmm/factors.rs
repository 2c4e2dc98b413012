//! Variational factor families and their sufficient-statistic moments.
//!
//! Each factor is a regular exponential family in the statistics stored in
//! the layout, so its mean parameters fill one slice of `m` and the
//! covariance of its statistics is one diagonal block of `V`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{LrvbError, Result};
use crate::layout::{sym_pairs, tri_len, BlockId, ParamLayout};
use crate::special::{digamma, multi_digamma, multi_trigamma, trigamma};

/// Smallest admissible excess of Wishart degrees of freedom over `P − 1`.
pub const WISHART_DOF_GUARD: f64 = 1e-8;

/// Tolerance for responsibilities summing to one.
pub const SIMPLEX_TOL: f64 = 1e-8;

/// Multivariate normal over a `P`-vector, with statistics `(v, packed v vᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvnFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Wishart over a `P × P` precision, with statistics `(packed Λ, log|Λ|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishartFactor {
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

/// Dirichlet over mixture weights, with statistics `log π_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletFactor {
    pub concentration: DVector<f64>,
}

impl MvnFactor {
    pub fn p(&self) -> usize {
        self.mean.len()
    }

    /// Whether the covariance is PSD; a zero covariance is the point-mass limit.
    fn validate(&self, name: &str) -> Result<()> {
        let p = self.p();
        if self.cov.shape() != (p, p) {
            return Err(LrvbError::DimensionMismatch(format!(
                "{name}: covariance shape {:?} for mean of length {p}",
                self.cov.shape()
            )));
        }
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(non_interior(name, "non-finite parameters"));
        }
        crate::layout::pack_symmetric(&self.cov)?;
        Ok(())
    }

    fn validate_pd(&self, name: &str) -> Result<()> {
        self.validate(name)?;
        if self.cov.clone().cholesky().is_none() {
            return Err(non_interior(name, "covariance is not positive definite"));
        }
        Ok(())
    }

    /// `E v` followed by packed `E v vᵀ`.
    pub fn mean_params(&self) -> DVector<f64> {
        let p = self.p();
        let mut out = DVector::zeros(p + tri_len(p));
        out.rows_mut(0, p).copy_from(&self.mean);
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            out[p + i] = self.cov[(a, b)] + self.mean[a] * self.mean[b];
        }
        out
    }

    /// Covariance of `(v, packed v vᵀ)` using Gaussian third and fourth
    /// moment identities.
    pub fn stat_cov(&self) -> DMatrix<f64> {
        let p = self.p();
        let (m, s) = (&self.mean, &self.cov);
        let d = p + tri_len(p);
        let mut out = DMatrix::zeros(d, d);
        out.view_mut((0, 0), (p, p)).copy_from(s);
        for (j, (b, c)) in sym_pairs(p).enumerate() {
            for a in 0..p {
                // Cov(v_a, v_b v_c) = m_b S_ac + m_c S_ab
                let v = m[b] * s[(a, c)] + m[c] * s[(a, b)];
                out[(a, p + j)] = v;
                out[(p + j, a)] = v;
            }
        }
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            for (j, (c, e)) in sym_pairs(p).enumerate().skip(i) {
                let v = s[(a, c)] * s[(b, e)]
                    + s[(a, e)] * s[(b, c)]
                    + m[a] * m[c] * s[(b, e)]
                    + m[a] * m[e] * s[(b, c)]
                    + m[b] * m[c] * s[(a, e)]
                    + m[b] * m[e] * s[(a, c)];
                out[(p + i, p + j)] = v;
                out[(p + j, p + i)] = v;
            }
        }
        out
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        let p = self.p() as f64;
        let log_det = self
            .cov
            .clone()
            .cholesky()
            .map(|c| 2.0 * c.l().diagonal().map(f64::ln).sum())
            .unwrap_or(f64::NEG_INFINITY);
        0.5 * (p * (1.0 + (2.0 * std::f64::consts::PI).ln()) + log_det)
    }
}

impl WishartFactor {
    pub fn p(&self) -> usize {
        self.scale.nrows()
    }

    fn validate(&self, name: &str) -> Result<()> {
        let p = self.p();
        if self.scale.ncols() != p {
            return Err(LrvbError::DimensionMismatch(format!("{name}: non-square scale")));
        }
        if !(self.dof > p as f64 - 1.0 + WISHART_DOF_GUARD) {
            return Err(non_interior(
                name,
                &format!("degrees of freedom {} must exceed P - 1 = {}", self.dof, p - 1),
            ));
        }
        crate::layout::pack_symmetric(&self.scale)?;
        if self.scale.clone().cholesky().is_none() {
            return Err(non_interior(name, "scale matrix is not positive definite"));
        }
        Ok(())
    }

    pub fn mean(&self) -> DMatrix<f64> {
        &self.scale * self.dof
    }

    pub fn log_det_scale(&self) -> f64 {
        let c = self.scale.clone().cholesky().expect("validated scale");
        2.0 * c.l().diagonal().map(f64::ln).sum()
    }

    /// `E log|Λ| = ψ_P(ν/2) + P log 2 + log|W|`.
    pub fn mean_log_det(&self) -> f64 {
        let p = self.p();
        multi_digamma(self.dof / 2.0, p) + p as f64 * std::f64::consts::LN_2 + self.log_det_scale()
    }

    /// Packed `E Λ` followed by `E log|Λ|`.
    pub fn mean_params(&self) -> DVector<f64> {
        let p = self.p();
        let mut out = DVector::zeros(tri_len(p) + 1);
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            out[i] = self.dof * self.scale[(a, b)];
        }
        out[tri_len(p)] = self.mean_log_det();
        out
    }

    /// Covariance of `(packed Λ, log|Λ|)`.
    pub fn stat_cov(&self) -> DMatrix<f64> {
        let p = self.p();
        let t = tri_len(p);
        let (nu, w) = (self.dof, &self.scale);
        let mut out = DMatrix::zeros(t + 1, t + 1);
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            for (j, (c, d)) in sym_pairs(p).enumerate() {
                out[(i, j)] = nu * (w[(a, c)] * w[(b, d)] + w[(a, d)] * w[(b, c)]);
            }
            // d E[Λ_ab] / d η_logdet with η_logdet = (ν − P − 1)/2
            out[(i, t)] = 2.0 * w[(a, b)];
            out[(t, i)] = 2.0 * w[(a, b)];
        }
        out[(t, t)] = multi_trigamma(nu / 2.0, p);
        out
    }

    pub fn entropy(&self) -> f64 {
        let p = self.p();
        let pf = p as f64;
        let nu = self.dof;
        let log_z = 0.5 * nu * pf * std::f64::consts::LN_2
            + 0.5 * nu * self.log_det_scale()
            + crate::special::ln_multi_gamma(nu / 2.0, p);
        log_z - 0.5 * (nu - pf - 1.0) * self.mean_log_det() + 0.5 * nu * pf
    }
}

impl DirichletFactor {
    pub fn k(&self) -> usize {
        self.concentration.len()
    }

    fn validate(&self) -> Result<()> {
        if self.concentration.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(non_interior("pi", "concentrations must be positive"));
        }
        Ok(())
    }

    /// `E log π_k = ψ(a_k) − ψ(Σ a)`.
    pub fn mean_params(&self) -> DVector<f64> {
        let total = digamma(self.concentration.sum());
        self.concentration.map(|a| digamma(a) - total)
    }

    pub fn stat_cov(&self) -> DMatrix<f64> {
        let k = self.k();
        let shared = trigamma(self.concentration.sum());
        DMatrix::from_fn(k, k, |i, j| {
            let diag = if i == j { trigamma(self.concentration[i]) } else { 0.0 };
            diag - shared
        })
    }

    pub fn entropy(&self) -> f64 {
        use crate::special::ln_gamma;
        let a0: f64 = self.concentration.sum();
        let log_b: f64 =
            self.concentration.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0);
        let elog = self.mean_params();
        log_b - self.concentration.iter().zip(elog.iter()).map(|(a, e)| (a - 1.0) * e).sum::<f64>()
    }
}

/// Covariance of a one-hot draw with probabilities `r`.
pub fn multinoulli_cov(r: &[f64]) -> DMatrix<f64> {
    let k = r.len();
    DMatrix::from_fn(k, k, |i, j| if i == j { r[i] - r[i] * r[i] } else { -r[i] * r[j] })
}

/// All variational factors of the mixture model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub mu: Vec<MvnFactor>,
    pub lambda: Vec<WishartFactor>,
    pub pi: DirichletFactor,
    /// Responsibilities, `N × K`, each row on the simplex.
    pub z: DMatrix<f64>,
    /// Perturbed-data factors; covariances may be zero (the ε → 0 limit).
    #[serde(default)]
    pub x_star: Option<Vec<MvnFactor>>,
}

impl FactorParams {
    pub fn k(&self) -> usize {
        self.mu.len()
    }
    pub fn p(&self) -> usize {
        self.mu.first().map(MvnFactor::p).unwrap_or(0)
    }
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, p, n) = (self.k(), self.p(), self.n());
        if k == 0 || p == 0 || n == 0 {
            return Err(LrvbError::InvalidDimension("empty factor set".into()));
        }
        if self.lambda.len() != k || self.pi.k() != k || self.z.ncols() != k {
            return Err(LrvbError::DimensionMismatch(format!(
                "inconsistent component counts: mu {k}, lambda {}, pi {}, z {}",
                self.lambda.len(),
                self.pi.k(),
                self.z.ncols()
            )));
        }
        for (c, f) in self.mu.iter().enumerate() {
            if f.p() != p {
                return Err(LrvbError::DimensionMismatch(format!("mu[{c}] has wrong dimension")));
            }
            f.validate_pd(&format!("mu[{c}]"))?;
        }
        for (c, f) in self.lambda.iter().enumerate() {
            if f.p() != p {
                return Err(LrvbError::DimensionMismatch(format!("lambda[{c}] has wrong dimension")));
            }
            f.validate(&format!("lambda[{c}]"))?;
        }
        self.pi.validate()?;
        for i in 0..n {
            let row = self.z.row(i);
            if row.iter().any(|&r| !(r >= 0.0)) || (row.sum() - 1.0).abs() > SIMPLEX_TOL {
                return Err(non_interior(&format!("z[{i}]"), "responsibilities off the simplex"));
            }
        }
        if let Some(xs) = &self.x_star {
            if xs.len() != n {
                return Err(LrvbError::DimensionMismatch(format!(
                    "{} x* factors for {n} points",
                    xs.len()
                )));
            }
            for (i, f) in xs.iter().enumerate() {
                if f.p() != p {
                    return Err(LrvbError::DimensionMismatch(format!("x[{i}] has wrong dimension")));
                }
                f.validate(&format!("x[{i}]"))?;
            }
        }
        Ok(())
    }

    fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        if (layout.k(), layout.p(), layout.n()) != (self.k(), self.p(), self.n()) {
            return Err(LrvbError::DimensionMismatch(format!(
                "factors have (K, P, N) = ({}, {}, {}), layout has ({}, {}, {})",
                self.k(),
                self.p(),
                self.n(),
                layout.k(),
                layout.p(),
                layout.n()
            )));
        }
        if layout.include_x() && self.x_star.is_none() {
            return Err(LrvbError::InvalidConfig(
                "layout includes x* blocks but no x* factors are present".into(),
            ));
        }
        Ok(())
    }

    /// Point-mass x* factors centred on the observed data.
    pub fn with_point_x_star(mut self, data: &crate::gmm::Dataset) -> Self {
        let p = data.p();
        self.x_star = Some(
            (0..data.n())
                .map(|i| MvnFactor {
                    mean: data.row(i),
                    cov: DMatrix::zeros(p, p),
                })
                .collect(),
        );
        self
    }
}

fn non_interior(factor: &str, detail: &str) -> LrvbError {
    LrvbError::NonInterior {
        factor: factor.to_string(),
        detail: detail.to_string(),
    }
}

/// Writes the α mean parameters of the factors into `m`.
pub(crate) fn write_alpha_mean_params(factors: &FactorParams, layout: &ParamLayout, m: &mut DVector<f64>) {
    for c in 0..layout.k() {
        let mp = factors.mu[c].mean_params();
        m.rows_mut(layout.off(BlockId::Mu(c)), mp.len()).copy_from(&mp);
        let lp = factors.lambda[c].mean_params();
        m.rows_mut(layout.off(BlockId::Lambda(c)), lp.len()).copy_from(&lp);
    }
    let pp = factors.pi.mean_params();
    m.rows_mut(layout.off(BlockId::LogPi), pp.len()).copy_from(&pp);
}

/// Writes `E z` into `m`.
pub(crate) fn write_z_mean_params(factors: &FactorParams, layout: &ParamLayout, m: &mut DVector<f64>) {
    let (start, k) = (layout.z_range().start, layout.k());
    for i in 0..layout.n() {
        for c in 0..k {
            m[start + i * k + c] = factors.z[(i, c)];
        }
    }
}

/// Stacked mean parameters `m` of all factors in `layout`.
pub fn factor_mean_params(factors: &FactorParams, layout: &ParamLayout) -> Result<DVector<f64>> {
    factors.check_layout(layout)?;
    factors.validate()?;
    let mut m = DVector::zeros(layout.dim());
    write_alpha_mean_params(factors, layout, &mut m);
    write_z_mean_params(factors, layout, &mut m);
    if layout.include_x() {
        let xs = factors.x_star.as_ref().expect("checked by check_layout");
        for (i, f) in xs.iter().enumerate() {
            let mp = f.mean_params();
            m.rows_mut(layout.off(BlockId::X(i)), mp.len()).copy_from(&mp);
        }
    }
    Ok(m)
}

/// Dense `V_α` (block diagonal over the μ_k, Λ_k and π factors).
pub fn alpha_covariance(factors: &FactorParams, layout: &ParamLayout) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(layout.alpha_dim(), layout.alpha_dim());
    for c in 0..layout.k() {
        let b = factors.mu[c].stat_cov();
        let o = layout.off(BlockId::Mu(c));
        v.view_mut((o, o), b.shape()).copy_from(&b);
        let b = factors.lambda[c].stat_cov();
        let o = layout.off(BlockId::Lambda(c));
        v.view_mut((o, o), b.shape()).copy_from(&b);
    }
    let b = factors.pi.stat_cov();
    let o = layout.off(BlockId::LogPi);
    v.view_mut((o, o), b.shape()).copy_from(&b);
    v
}

fn add_split(v: &mut BlockMatrix, first: BlockId, second: BlockId, cov: &DMatrix<f64>) -> Result<()> {
    let l1 = v.layout().range(first)?.len();
    let l2 = cov.nrows() - l1;
    v.add_block(first, first, cov.view((0, 0), (l1, l1)).into_owned())?;
    v.add_block(first, second, cov.view((0, l1), (l1, l2)).into_owned())?;
    v.add_block(second, second, cov.view((l1, l1), (l2, l2)).into_owned())?;
    Ok(())
}

/// The block-diagonal covariance `V` of all sufficient statistics under
/// the factorized variational distribution.
pub fn factor_covariance_blocks(factors: &FactorParams, layout: &ParamLayout) -> Result<BlockMatrix> {
    factors.check_layout(layout)?;
    factors.validate()?;
    let mut v = BlockMatrix::zeros(*layout);
    for c in 0..layout.k() {
        add_split(&mut v, BlockId::Mu(c), BlockId::MuOuter(c), &factors.mu[c].stat_cov())?;
        add_split(
            &mut v,
            BlockId::Lambda(c),
            BlockId::LogDetLambda(c),
            &factors.lambda[c].stat_cov(),
        )?;
    }
    v.add_block(BlockId::LogPi, BlockId::LogPi, factors.pi.stat_cov())?;
    let mut r = vec![0.0; layout.k()];
    for i in 0..layout.n() {
        for (c, rc) in r.iter_mut().enumerate() {
            *rc = factors.z[(i, c)];
        }
        v.add_block(BlockId::Z(i), BlockId::Z(i), multinoulli_cov(&r))?;
    }
    if layout.include_x() {
        let xs = factors.x_star.as_ref().expect("checked by check_layout");
        for (i, f) in xs.iter().enumerate() {
            add_split(&mut v, BlockId::X(i), BlockId::XOuter(i), &f.stat_cov())?;
        }
    }
    Ok(v)
}

/// Groups layout blocks by the variational factor that owns them.
pub fn factor_of(block: BlockId) -> usize {
    // Distinct small integers per factor; per-point factors are offset by
    // a large constant so they never collide with α factors.
    const POINT: usize = 1 << 32;
    match block {
        BlockId::Mu(k) | BlockId::MuOuter(k) => 3 * k,
        BlockId::Lambda(k) | BlockId::LogDetLambda(k) => 3 * k + 1,
        BlockId::LogPi => usize::MAX,
        BlockId::X(n) | BlockId::XOuter(n) => POINT + 2 * n,
        BlockId::Z(n) => POINT + 2 * n + 1,
    }
}
