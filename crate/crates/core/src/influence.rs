//! Influence of individual observations on posterior means, as the
//! ε → 0 limit of `Cov(α, x*_n) / ε` for an infinitesimally perturbed copy
//! `x*_n` of each data point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{LrvbError, Result};
use crate::gmm::{factor_covariance_blocks, hessian_blocks, Dataset};
use crate::layout::{sym_pairs, tri_len, BlockId, ParamLayout};
use crate::lrvb::lrvb_gmm;
use crate::mfvb::VariationalState;

/// Limiting covariance of `(x, packed x xᵀ)` under an isotropic
/// perturbation of `x` with covariance `ε I`, divided by `ε`.
pub fn s_x_limit(x: &DVector<f64>) -> DMatrix<f64> {
    let p = x.len();
    let d = p + tri_len(p);
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut s = DMatrix::zeros(d, d);
    for a in 0..p {
        s[(a, a)] = 1.0;
    }
    for (j, (b, c)) in sym_pairs(p).enumerate() {
        for a in 0..p {
            let v = delta(a, b) * x[c] + delta(a, c) * x[b];
            s[(a, p + j)] = v;
            s[(p + j, a)] = v;
        }
    }
    for (i, (a, b)) in sym_pairs(p).enumerate() {
        for (j, (c, e)) in sym_pairs(p).enumerate() {
            s[(p + i, p + j)] = delta(a, c) * x[b] * x[e]
                + delta(a, e) * x[b] * x[c]
                + delta(b, c) * x[a] * x[e]
                + delta(b, e) * x[a] * x[c];
        }
    }
    s
}

/// The factor applied on the left of the per-point cross terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prefactor {
    /// `Σ_α V_α⁻¹`, from eliminating x* and z from the linear-response
    /// system; reduces to `Σ_α (H_αx + H_αz V_z H_zx) S_x`.
    SigmaTimesVInverse,
    /// `Σ_α⁻¹`, the alternative candidate.
    SigmaInverse,
}

impl std::str::FromStr for Prefactor {
    type Err = LrvbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_times_v_inverse" => Ok(Prefactor::SigmaTimesVInverse),
            "sigma_inverse" => Ok(Prefactor::SigmaInverse),
            other => Err(LrvbError::InvalidConfig(format!(
                "unknown prefactor `{other}` (expected sigma_times_v_inverse or sigma_inverse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    pub layout: ParamLayout,
    pub prefactor: Prefactor,
    pub row_labels: Vec<String>,
    /// `n:p` for first-order columns, `n:a,b` for second-order ones.
    pub col_labels: Vec<String>,
    /// `alpha_dim × N·(P + P(P+1)/2)`, point-major.
    pub values: DMatrix<f64>,
}

impl InfluenceMatrix {
    fn stride(&self) -> usize {
        self.layout.x_stat_len()
    }

    /// Column of the first-order statistic `x_{n,p}`.
    pub fn first_order_col(&self, n: usize, p: usize) -> usize {
        n * self.stride() + p
    }

    /// Influence of `x_{n,p}` on α statistic `i`.
    pub fn get(&self, i: usize, n: usize, p: usize) -> f64 {
        self.values[(i, self.first_order_col(n, p))]
    }

    /// The `alpha_dim × N·P` sub-matrix of first-order columns.
    pub fn first_order(&self) -> DMatrix<f64> {
        let (n, p) = (self.layout.n(), self.layout.p());
        DMatrix::from_fn(self.values.nrows(), n * p, |i, j| self.values[(i, self.first_order_col(j / p, j % p))])
    }

    pub fn first_order_labels(&self) -> Vec<String> {
        let (n, p) = (self.layout.n(), self.layout.p());
        (0..n * p).map(|j| format!("{}:{}", j / p, j % p)).collect()
    }
}

fn column_labels(layout: &ParamLayout) -> Vec<String> {
    let p = layout.p();
    let mut out = Vec::with_capacity(layout.x_dim());
    for n in 0..layout.n() {
        out.extend((0..p).map(|a| format!("{n}:{a}")));
        out.extend(sym_pairs(p).map(|(a, b)| format!("{n}:{a},{b}")));
    }
    out
}

/// Rows `rows` of `H` restricted to the per-point statistics of point `n`.
fn gather(h: &BlockMatrix, layout: &ParamLayout, rows: &[BlockId], rows_dim: usize, n: usize) -> Result<DMatrix<f64>> {
    let p = layout.p();
    let mut out = DMatrix::zeros(rows_dim, layout.x_stat_len());
    let base = layout.range(rows[0])?.start;
    for &r in rows {
        let off = layout.range(r)?.start - base;
        if let Some(m) = h.get(r, BlockId::X(n)) {
            out.view_mut((off, 0), m.shape()).copy_from(m);
        }
        if let Some(m) = h.get(r, BlockId::XOuter(n)) {
            out.view_mut((off, p), m.shape()).copy_from(m);
        }
    }
    Ok(out)
}

/// Influence scores for every α statistic and every data statistic.
///
/// `state` must carry x* factors (see [`VariationalState::with_x`]), and `v`
/// and `h` must be built over its layout.
pub fn influence_matrix(
    state: &VariationalState,
    v: &BlockMatrix,
    h: &BlockMatrix,
    sigma_alpha: &DMatrix<f64>,
    prefactor: Prefactor,
) -> Result<InfluenceMatrix> {
    let layout = state.layout;
    if !layout.include_x() {
        return Err(LrvbError::InvalidConfig("influence needs a layout with x* blocks".into()));
    }
    if v.layout() != &layout || h.layout() != &layout {
        return Err(LrvbError::DimensionMismatch("V and H must share the state's layout".into()));
    }
    let xs = state
        .factors
        .x_star
        .as_ref()
        .ok_or_else(|| LrvbError::InvalidConfig("state has no x* factors".into()))?;
    let (ad, k, dx) = (layout.alpha_dim(), layout.k(), layout.x_stat_len());
    if sigma_alpha.shape() != (ad, ad) {
        return Err(LrvbError::DimensionMismatch(format!(
            "Σ_α is {:?}, expected {ad}x{ad}",
            sigma_alpha.shape()
        )));
    }
    let alpha_blocks = layout.alpha_blocks();
    let mut cross = DMatrix::zeros(ad, layout.n() * dx);
    let mut g = DMatrix::zeros(ad, k);
    for (n, xn) in xs.iter().enumerate().take(layout.n()) {
        let zn = BlockId::Z(n);
        for (r, c, _) in h.iter() {
            if r == zn && matches!(c, BlockId::Z(m) if m != n) {
                return Err(LrvbError::InvalidConfig("H couples nuisance blocks across points".into()));
            }
        }
        g.fill(0.0);
        for &b in &alpha_blocks {
            if let Some(m) = h.get(b, zn) {
                let off = layout.range(b)?.start;
                g.view_mut((off, 0), m.shape()).copy_from(m);
            }
        }
        let h_ax = gather(h, &layout, &alpha_blocks, ad, n)?;
        let h_zx = gather(h, &layout, &[zn], k, n)?;
        let vz = v.block_or_zero(zn, zn)?;
        let inner = match h.get(zn, zn) {
            None => vz,
            Some(hz) => (DMatrix::identity(k, k) - &vz * hz)
                .lu()
                .solve(&vz)
                .ok_or(LrvbError::Singular { smallest: 0.0, norm: 1.0 })?,
        };
        let j = h_ax + &g * inner * h_zx;
        let f = j * s_x_limit(&xn.mean);
        cross.view_mut((0, n * dx), (ad, dx)).copy_from(&f);
    }
    let values = match prefactor {
        Prefactor::SigmaTimesVInverse => sigma_alpha * cross,
        Prefactor::SigmaInverse => {
            let v_alpha = v.dense_range(layout.alpha_range());
            sigma_alpha
                .clone()
                .lu()
                .solve(&(v_alpha * cross))
                .ok_or(LrvbError::Singular { smallest: 0.0, norm: sigma_alpha.norm() })?
        }
    };
    Ok(InfluenceMatrix {
        layout,
        prefactor,
        row_labels: layout.alpha_labels(),
        col_labels: column_labels(&layout),
        values,
    })
}

/// Fits-to-influence convenience: LRVB covariance and influence scores for
/// a converged state without x* blocks.
pub fn influence_for_fit(state: &VariationalState, data: &Dataset, prefactor: Prefactor) -> Result<InfluenceMatrix> {
    let sigma = lrvb_gmm(state, data)?;
    let sx = state.with_x(data)?;
    let v = factor_covariance_blocks(&sx.factors, &sx.layout)?;
    let h = hessian_blocks(&sx.m, data, &sx.layout)?;
    influence_matrix(&sx, &v, &h, &sigma.sigma_alpha, prefactor)
}

/// Largest rate of change of `‖E μ_k‖²` over unit-length perturbations of
/// data point `n`.
pub fn directional_influence(influence: &InfluenceMatrix, state: &VariationalState, k: usize, n: usize) -> Result<f64> {
    let layout = influence.layout;
    if k >= layout.k() || n >= layout.n() {
        return Err(LrvbError::InvalidConfig(format!(
            "component {k} or point {n} out of range"
        )));
    }
    let mu = layout.range(BlockId::Mu(k))?;
    let means = state.m.rows(mu.start, mu.len());
    let g = DVector::from_fn(layout.p(), |p, _| {
        2.0 * (0..layout.p()).map(|c| means[c] * influence.get(mu.start + c, n, p)).sum::<f64>()
    });
    Ok(g.norm())
}
