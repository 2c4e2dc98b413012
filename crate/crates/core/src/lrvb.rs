//! Linear-response covariance correction `Σ̂ = (I − V H)⁻¹ V`.
//!
//! [`lrvb_full`] solves the whole system densely. [`lrvb_alpha`] keeps only
//! the α block, eliminating the per-point nuisance blocks one data point at
//! a time. [`lrvb_gmm`] is the mixture-specific form of the same reduction
//! in which the per-point sum is replaced by weighted monomial moments of
//! the data, so that no per-point α-sized products are ever formed.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{LrvbError, Result};
use crate::gmm::factors::alpha_covariance;
use crate::gmm::{half_trace_weight, mu_lambda_blocks, ComponentMeans, Dataset};
use crate::layout::{sym_pairs, tri_len, BlockId, ParamLayout, Partition};
use crate::mfvb::VariationalState;

/// Largest dimension [`lrvb_full`] will densify.
pub const MAX_DENSE_DIM: usize = 20_000;

/// Relative threshold on the smallest singular value of `I − V H`.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Systems up to this size get an exact SVD for the conditioning check;
/// larger ones use the LU pivots as an estimate.
const EXACT_SVD_DIM: usize = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrvbDiagnostics {
    /// Smallest singular value of the diagonally rescaled `I − V H` system
    /// (or its LU pivot estimate, see `conditioning_method`).
    pub smallest_singular: f64,
    pub largest_singular: f64,
    pub conditioning_method: String,
    /// `‖Σ̂ − Σ̂ᵀ‖_F / ‖Σ̂‖_F` before symmetrization.
    pub asymmetry: f64,
    /// Element count of the largest dense matrix allocated.
    pub largest_dense_elems: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrvbResult {
    pub layout: ParamLayout,
    pub labels: Vec<String>,
    pub sigma_alpha: DMatrix<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma_full: Option<DMatrix<f64>>,
    pub diagnostics: LrvbDiagnostics,
}

impl LrvbResult {
    pub fn marginal_sds(&self) -> DVector<f64> {
        self.sigma_alpha.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

fn conditioning(a: &DMatrix<f64>) -> (f64, f64, String) {
    if a.nrows() <= EXACT_SVD_DIM {
        let sv = a.clone().singular_values();
        (sv.min(), sv.max(), "svd".into())
    } else {
        let abs = a.clone().lu().u().diagonal().map(f64::abs);
        (abs.min(), abs.max(), "lu-pivots".into())
    }
}

/// Dense `(I − V H)⁻¹ V` with conditioning and symmetry diagnostics.
pub fn lrvb_dense(v: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<(DMatrix<f64>, LrvbDiagnostics)> {
    let d = v.nrows();
    if v.shape() != (d, d) || h.shape() != (d, d) {
        return Err(LrvbError::DimensionMismatch(format!(
            "V is {:?}, H is {:?}",
            v.shape(),
            h.shape()
        )));
    }
    let a = DMatrix::identity(d, d) - v * h;
    // Conditioning is judged on D⁻¹ (I − V H) D with D = diag(V)^½, which
    // has the same spectrum but does not depend on the units of each
    // statistic.
    let scale = v.diagonal().map(|x| if x > 0.0 { x.sqrt() } else { 1.0 });
    let scaled = DMatrix::from_fn(d, d, |i, j| a[(i, j)] * scale[j] / scale[i]);
    let (smallest, largest, method) = conditioning(&scaled);
    let lu = a.lu();
    if !(smallest >= SINGULAR_TOL * largest) {
        return Err(LrvbError::Singular {
            smallest,
            norm: largest,
        });
    }
    let sigma = lu.solve(v).ok_or(LrvbError::Singular {
        smallest: 0.0,
        norm: largest,
    })?;
    let norm = sigma.norm();
    let asymmetry = if norm > 0.0 { (&sigma - sigma.transpose()).norm() / norm } else { 0.0 };
    let sym = (&sigma + sigma.transpose()) * 0.5;
    Ok((
        sym,
        LrvbDiagnostics {
            smallest_singular: smallest,
            largest_singular: largest,
            conditioning_method: method,
            asymmetry,
            largest_dense_elems: d * d,
        },
    ))
}

fn check_pair(v: &BlockMatrix, h: &BlockMatrix) -> Result<()> {
    if v.layout() != h.layout() {
        return Err(LrvbError::DimensionMismatch("V and H have different layouts".into()));
    }
    Ok(())
}

/// LRVB over every statistic of the layout, solved densely.
pub fn lrvb_full(v: &BlockMatrix, h: &BlockMatrix) -> Result<LrvbResult> {
    check_pair(v, h)?;
    let layout = *v.layout();
    if layout.dim() > MAX_DENSE_DIM {
        return Err(LrvbError::InvalidDimension(format!(
            "dimension {} exceeds the dense limit {MAX_DENSE_DIM}; use lrvb_alpha",
            layout.dim()
        )));
    }
    let (sigma, diagnostics) = lrvb_dense(&v.to_dense(), &h.to_dense())?;
    let a = layout.alpha_dim();
    Ok(LrvbResult {
        layout,
        labels: layout.alpha_labels(),
        sigma_alpha: sigma.view((0, 0), (a, a)).into_owned(),
        sigma_full: Some(sigma),
        diagnostics,
    })
}

/// Solves `(I − V_α H̃) Σ = V_α` for the reduced α Hessian `H̃`.
fn solve_alpha(layout: ParamLayout, v_alpha: &DMatrix<f64>, h_tilde: &DMatrix<f64>, largest: usize) -> Result<LrvbResult> {
    let (sigma_alpha, mut diagnostics) = lrvb_dense(v_alpha, h_tilde)?;
    diagnostics.largest_dense_elems = diagnostics.largest_dense_elems.max(largest);
    Ok(LrvbResult {
        layout,
        labels: layout.alpha_labels(),
        sigma_alpha,
        sigma_full: None,
        diagnostics,
    })
}

/// The α block of the LRVB covariance via the nuisance Schur complement,
/// streaming over data points. Nuisance blocks may couple to themselves
/// within a point but not across points.
pub fn lrvb_alpha(v: &BlockMatrix, h: &BlockMatrix, layout: &ParamLayout) -> Result<LrvbResult> {
    check_pair(v, h)?;
    if v.layout() != layout {
        return Err(LrvbError::DimensionMismatch("layout differs from that of V and H".into()));
    }
    if layout.include_x() {
        return Err(LrvbError::InvalidConfig(
            "lrvb_alpha expects the (α, z) partition; drop the x* blocks first".into(),
        ));
    }
    for (r, c, _) in h.iter() {
        if let (BlockId::Z(a), BlockId::Z(b)) = (r, c) {
            if a != b {
                return Err(LrvbError::InvalidConfig(format!(
                    "H couples nuisance blocks of points {a} and {b}"
                )));
            }
        }
    }
    let (ad, k) = (layout.alpha_dim(), layout.k());
    let alpha = layout.alpha_range();
    let v_alpha = v.dense_range(alpha.clone());
    let mut h_tilde = h.dense_range(alpha);
    let blocks = layout.alpha_blocks();
    let mut g = DMatrix::zeros(ad, k);
    for n in 0..layout.n() {
        let zn = BlockId::Z(n);
        g.fill(0.0);
        for &b in &blocks {
            if let Some(m) = h.get(b, zn) {
                let off = layout.range(b)?.start;
                g.view_mut((off, 0), m.shape()).copy_from(m);
            }
        }
        let vz = v.block_or_zero(zn, zn)?;
        // (I − V_n H_nn)⁻¹ V_n, which is just V_n when H_zz = 0.
        let inner = match h.get(zn, zn) {
            None => vz,
            Some(hz) => {
                let a = DMatrix::identity(k, k) - &vz * hz;
                a.lu().solve(&vz).ok_or(LrvbError::Singular {
                    smallest: 0.0,
                    norm: 1.0,
                })?
            }
        };
        let gi = &g * inner;
        h_tilde.gemm(1.0, &gi, &g.transpose(), 1.0);
    }
    solve_alpha(*layout, &v_alpha, &h_tilde, ad * ad)
}

/// Monomials of degree ≤ 4 in `P` variables, built so that each one is a
/// previously listed monomial times a single variable.
struct Monomials {
    parent: Vec<usize>,
    var: Vec<usize>,
    index: HashMap<Vec<usize>, usize>,
}

impl Monomials {
    fn new(p: usize) -> Self {
        let mut parent = vec![0];
        let mut var = vec![0];
        let mut index = HashMap::new();
        index.insert(Vec::new(), 0);
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..4 {
            let mut next = Vec::new();
            for seq in &frontier {
                let from = seq.last().copied().unwrap_or(0);
                for v in from..p {
                    let mut s = seq.clone();
                    s.push(v);
                    index.insert(s.clone(), parent.len());
                    parent.push(index[seq]);
                    var.push(v);
                    next.push(s);
                }
            }
            frontier = next;
        }
        Self { parent, var, index }
    }

    fn len(&self) -> usize {
        self.parent.len()
    }

    fn fill(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for i in 1..out.len() {
            out[i] = out[self.parent[i]] * x[self.var[i]];
        }
    }

    fn of(&self, mut seq: Vec<usize>) -> usize {
        seq.sort_unstable();
        self.index[&seq]
    }
}

/// Variable multisets of the features `φ(x) = (1, x, packed x xᵀ)`.
fn feature_sets(p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    out.extend((0..p).map(|a| vec![a]));
    out.extend(sym_pairs(p).map(|(a, b)| vec![a, b]));
    out
}

/// `H_{α, z_n}` column `k` equals `A_k φ(x_n)`; this builds `A_k`.
fn feature_map(layout: &ParamLayout, k: usize, c: &ComponentMeans) -> DMatrix<f64> {
    let p = layout.p();
    let d = 1 + p + tri_len(p);
    let mut a = DMatrix::zeros(layout.alpha_dim(), d);
    let o_mu = layout.off(BlockId::Mu(k));
    for r in 0..p {
        for j in 0..p {
            a[(o_mu + r, 1 + j)] = c.lambda[(r, j)];
        }
    }
    let o_outer = layout.off(BlockId::MuOuter(k));
    let o_lam = layout.off(BlockId::Lambda(k));
    for (i, (x, y)) in sym_pairs(p).enumerate() {
        let w = half_trace_weight(x, y);
        a[(o_outer + i, 0)] = -w * c.lambda[(x, y)];
        a[(o_lam + i, 1 + p + i)] = -w;
        a[(o_lam + i, 1 + x)] += w * c.mu[y];
        a[(o_lam + i, 1 + y)] += w * c.mu[x];
        a[(o_lam + i, 0)] = -w * c.mu_outer[(x, y)];
    }
    a[(layout.off(BlockId::LogDetLambda(k)), 0)] = 0.5;
    a[(layout.off(BlockId::LogPi) + k, 0)] = 1.0;
    a
}

/// Mixture LRVB for the α statistics without forming per-point blocks.
///
/// `Σ_n H_{α z_n} V_{z_n} H_{z_n α}` is rewritten as
/// `Σ_{k,l} A_k Φ_{kl} A_lᵀ` where `Φ_{kl} = Σ_n (r_nk δ_kl − r_nk r_nl) φ_n φ_nᵀ`.
/// The entries of `φ φᵀ` are monomials of degree ≤ 4, so the data enter
/// only through `K(K+1)/2` weighted sums of those monomials.
pub fn lrvb_gmm(state: &VariationalState, data: &Dataset) -> Result<LrvbResult> {
    let layout = state.layout.with_x(false);
    if data.n() != layout.n() || data.p() != layout.p() {
        return Err(LrvbError::DimensionMismatch(format!(
            "data is {}x{}, state expects {}x{}",
            data.n(),
            data.p(),
            layout.n(),
            layout.p()
        )));
    }
    let (kc, p, ad) = (layout.k(), layout.p(), layout.alpha_dim());
    let z = &state.factors.z;
    let monos = Monomials::new(p);
    let nm = monos.len();
    let pairs: Vec<(usize, usize)> = (0..kc).flat_map(|k| (k..kc).map(move |l| (k, l))).collect();

    let mut moments = vec![0.0; pairs.len() * nm];
    let mut sx = vec![DVector::zeros(p); kc];
    let mut counts = vec![0.0; kc];
    let mut vals = vec![0.0; nm];
    let mut xbuf = vec![0.0; p];
    for n in 0..data.n() {
        for (j, xb) in xbuf.iter_mut().enumerate() {
            *xb = data.x[(n, j)];
        }
        monos.fill(&xbuf, &mut vals);
        for k in 0..kc {
            let r = z[(n, k)];
            counts[k] += r;
            for j in 0..p {
                sx[k][j] += r * xbuf[j];
            }
        }
        for (q, &(k, l)) in pairs.iter().enumerate() {
            let (rk, rl) = (z[(n, k)], z[(n, l)]);
            let w = if k == l { rk - rk * rk } else { -rk * rl };
            if w == 0.0 {
                continue;
            }
            let acc = &mut moments[q * nm..(q + 1) * nm];
            for (a, v) in acc.iter_mut().zip(&vals) {
                *a += w * v;
            }
        }
    }

    let feats = feature_sets(p);
    let d = feats.len();
    let table: Vec<usize> = (0..d * d)
        .map(|ij| {
            let (i, j) = (ij / d, ij % d);
            let mut s = feats[i].clone();
            s.extend_from_slice(&feats[j]);
            monos.of(s)
        })
        .collect();

    let comps: Vec<ComponentMeans> = (0..kc)
        .map(|k| ComponentMeans::from_m(&state.m, &state.layout, k))
        .collect::<Result<_>>()?;
    let maps: Vec<DMatrix<f64>> = comps.iter().enumerate().map(|(k, c)| feature_map(&layout, k, c)).collect();

    let mut h_tilde = DMatrix::zeros(ad, ad);
    for k in 0..kc {
        let (mu_lam, outer_lam) = mu_lambda_blocks(counts[k], &sx[k]);
        let (o_mu, o_outer, o_lam) = (
            layout.off(BlockId::Mu(k)),
            layout.off(BlockId::MuOuter(k)),
            layout.off(BlockId::Lambda(k)),
        );
        for (off, blk) in [(o_mu, &mu_lam), (o_outer, &outer_lam)] {
            h_tilde.view_mut((off, o_lam), blk.shape()).copy_from(blk);
            h_tilde.view_mut((o_lam, off), (blk.ncols(), blk.nrows())).copy_from(&blk.transpose());
        }
    }
    for (q, &(k, l)) in pairs.iter().enumerate() {
        let mom = &moments[q * nm..(q + 1) * nm];
        let phi = DMatrix::from_fn(d, d, |i, j| mom[table[i * d + j]]);
        let left = &maps[k] * phi;
        h_tilde.gemm(1.0, &left, &maps[l].transpose(), 1.0);
        if k != l {
            h_tilde.gemm(1.0, &maps[l], &left.transpose(), 1.0);
        }
    }

    let v_alpha = alpha_covariance(&state.factors, &layout);
    let largest = (ad * ad).max(pairs.len() * nm).max(ad * d);
    solve_alpha(layout, &v_alpha, &h_tilde, largest)
}

/// Which partition each coordinate of a layout belongs to; a convenience
/// for slicing full results.
pub fn partition_of(layout: &ParamLayout, i: usize) -> Result<Partition> {
    Ok(layout.locate(i)?.0.partition())
}
