//! Expected second derivatives of the mixture log posterior with respect to
//! the sufficient statistics.
//!
//! With flat priors the log joint is
//!
//! ```text
//! Σ_n Σ_k z_nk [ log π_k + ½ log|Λ_k| − ½ tr(Λ_k x_n x_nᵀ)
//!                + x_nᵀ Λ_k μ_k − ½ tr(Λ_k μ_k μ_kᵀ) ]
//! ```
//!
//! which is multilinear in statistics of distinct factors, so each nonzero
//! entry of `H` is a product of means of the remaining factors.

use nalgebra::{DMatrix, DVector};

use crate::block::BlockMatrix;
use crate::error::{LrvbError, Result};
use crate::gmm::Dataset;
use crate::layout::{sym_pairs, tri_len, unpack_symmetric, BlockId, ParamLayout};

/// Weight of the packed pair `(a, b)` in `½ tr(A B)`: off-diagonal pairs
/// appear twice in the trace.
#[inline]
pub(crate) fn half_trace_weight(a: usize, b: usize) -> f64 {
    if a == b {
        0.5
    } else {
        1.0
    }
}

/// Variational means of the α statistics of one component.
#[derive(Debug, Clone)]
pub(crate) struct ComponentMeans {
    pub mu: DVector<f64>,
    pub mu_outer: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

impl ComponentMeans {
    pub fn from_m(m: &DVector<f64>, layout: &ParamLayout, k: usize) -> Result<Self> {
        let p = layout.p();
        let slice = |b: BlockId| -> Result<&[f64]> {
            let r = layout.range(b)?;
            Ok(&m.as_slice()[r])
        };
        Ok(Self {
            mu: DVector::from_column_slice(slice(BlockId::Mu(k))?),
            mu_outer: unpack_symmetric(slice(BlockId::MuOuter(k))?, p)?,
            lambda: unpack_symmetric(slice(BlockId::Lambda(k))?, p)?,
        })
    }
}

/// First and packed second moment of data point `n`: taken from the x*
/// blocks of `m` when the layout has them, from the data otherwise.
pub(crate) fn point_moments(
    m: &DVector<f64>,
    data: &Dataset,
    layout: &ParamLayout,
    n: usize,
) -> (DVector<f64>, DVector<f64>) {
    if layout.include_x() {
        let rx = layout.range(BlockId::X(n)).expect("x block");
        let rxx = layout.range(BlockId::XOuter(n)).expect("x_outer block");
        (m.rows(rx.start, rx.len()).into_owned(), m.rows(rxx.start, rxx.len()).into_owned())
    } else {
        let x = data.row(n);
        let p = x.len();
        let xx = DVector::from_iterator(tri_len(p), sym_pairs(p).map(|(a, b)| x[a] * x[b]));
        (x, xx)
    }
}

fn check_inputs(m: &DVector<f64>, data: &Dataset, layout: &ParamLayout) -> Result<()> {
    if m.len() != layout.dim() {
        return Err(LrvbError::DimensionMismatch(format!(
            "m has length {}, layout dimension is {}",
            m.len(),
            layout.dim()
        )));
    }
    if data.n() != layout.n() || data.p() != layout.p() {
        return Err(LrvbError::DimensionMismatch(format!(
            "data is {}x{}, layout expects {}x{}",
            data.n(),
            data.p(),
            layout.n(),
            layout.p()
        )));
    }
    Ok(())
}

/// Column `k` of `H_{α, z_n}` restricted to component `k`'s blocks:
/// returns (mu, mu_outer, lambda) pieces; log|Λ| and log π entries are the
/// constants ½ and 1.
pub(crate) fn z_column(
    c: &ComponentMeans,
    x: &DVector<f64>,
    xx: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let p = x.len();
    let mu = &c.lambda * x;
    let mu_outer =
        DVector::from_iterator(tri_len(p), sym_pairs(p).map(|(a, b)| -half_trace_weight(a, b) * c.lambda[(a, b)]));
    let lambda = DVector::from_iterator(
        tri_len(p),
        sym_pairs(p).enumerate().map(|(i, (a, b))| {
            half_trace_weight(a, b) * (-xx[i] + x[a] * c.mu[b] + x[b] * c.mu[a] - c.mu_outer[(a, b)])
        }),
    );
    (mu, mu_outer, lambda)
}

/// The `(μ_k, Λ_k)` and `(μ_kμ_kᵀ, Λ_k)` blocks from the expected count
/// and the responsibility-weighted data sum of component `k`.
pub(crate) fn mu_lambda_blocks(count: f64, sx: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = sx.len();
    let tri = tri_len(p);
    let mut mu_lam = DMatrix::zeros(p, tri);
    let mut outer_lam = DMatrix::zeros(tri, tri);
    for (i, (a, b)) in sym_pairs(p).enumerate() {
        if a == b {
            mu_lam[(a, i)] = sx[a];
        } else {
            mu_lam[(a, i)] = sx[b];
            mu_lam[(b, i)] = sx[a];
        }
        outer_lam[(i, i)] = -half_trace_weight(a, b) * count;
    }
    (mu_lam, outer_lam)
}

/// Assembles the sparse Hessian at the mean parameters `m`.
pub fn hessian_blocks(m: &DVector<f64>, data: &Dataset, layout: &ParamLayout) -> Result<BlockMatrix> {
    check_inputs(m, data, layout)?;
    let (k_count, p, n_count) = (layout.k(), layout.p(), layout.n());
    let tri = tri_len(p);
    let comps: Vec<ComponentMeans> = (0..k_count)
        .map(|k| ComponentMeans::from_m(m, layout, k))
        .collect::<Result<_>>()?;
    let z0 = layout.z_range().start;
    let r = |n: usize, k: usize| m[z0 + n * k_count + k];

    let mut h = BlockMatrix::zeros(*layout);

    // α-α blocks: μ–Λ and μμᵀ–Λ.
    for k in 0..k_count {
        let mut sx = DVector::zeros(p);
        let mut count = 0.0;
        for n in 0..n_count {
            let (x, _) = point_moments(m, data, layout, n);
            sx.axpy(r(n, k), &x, 1.0);
            count += r(n, k);
        }
        let (mu_lam, outer_lam) = mu_lambda_blocks(count, &sx);
        h.add_block(BlockId::Mu(k), BlockId::Lambda(k), mu_lam)?;
        h.add_block(BlockId::MuOuter(k), BlockId::Lambda(k), outer_lam)?;
    }

    for n in 0..n_count {
        let (x, xx) = point_moments(m, data, layout, n);
        let zn = BlockId::Z(n);
        for (k, c) in comps.iter().enumerate() {
            let (mu_col, outer_col, lam_col) = z_column(c, &x, &xx);
            let mut put = |block: BlockId, col: DVector<f64>| -> Result<()> {
                let mut blk = DMatrix::zeros(col.len(), k_count);
                blk.set_column(k, &col);
                h.add_block(block, zn, blk)
            };
            put(BlockId::Mu(k), mu_col)?;
            put(BlockId::MuOuter(k), outer_col)?;
            put(BlockId::Lambda(k), lam_col)?;
            put(BlockId::LogDetLambda(k), DVector::from_element(1, 0.5))?;
        }
        h.add_block(BlockId::LogPi, zn, DMatrix::identity(k_count, k_count))?;

        if layout.include_x() {
            let (xb, xxb) = (BlockId::X(n), BlockId::XOuter(n));
            let mut x_z = DMatrix::zeros(p, k_count);
            let mut xx_z = DMatrix::zeros(tri, k_count);
            for (k, c) in comps.iter().enumerate() {
                let rk = r(n, k);
                h.add_block(xb, BlockId::Mu(k), &c.lambda * rk)?;
                let mut x_lam = DMatrix::zeros(p, tri);
                let mut xx_lam = DMatrix::zeros(tri, tri);
                for (i, (a, b)) in sym_pairs(p).enumerate() {
                    let w = half_trace_weight(a, b);
                    x_lam[(a, i)] += rk * w * c.mu[b];
                    x_lam[(b, i)] += rk * w * c.mu[a];
                    xx_lam[(i, i)] = -half_trace_weight(a, b) * rk;
                    xx_z[(i, k)] = -half_trace_weight(a, b) * c.lambda[(a, b)];
                }
                h.add_block(xb, BlockId::Lambda(k), x_lam)?;
                h.add_block(xxb, BlockId::Lambda(k), xx_lam)?;
                x_z.set_column(k, &(&c.lambda * &c.mu));
            }
            h.add_block(xb, zn, x_z)?;
            h.add_block(xxb, zn, xx_z)?;
        }
    }
    Ok(h)
}
