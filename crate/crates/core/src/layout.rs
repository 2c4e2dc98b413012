//! The stacked sufficient-statistic coordinate system.
//!
//! Every vector or matrix over model parameters (mean parameters `m`,
//! perturbations `t`, the covariance `V`, the Hessian `H`, corrected
//! covariances) is indexed through a [`ParamLayout`]. Blocks are laid out in
//! three contiguous partitions:
//!
//! ```text
//! alpha: mu[0], mu_outer[0], …, mu[K-1], mu_outer[K-1],
//!        lambda[0], log_det_lambda[0], …, lambda[K-1], log_det_lambda[K-1],
//!        log_pi
//! x:     x[0], x_outer[0], …, x[N-1], x_outer[N-1]      (only with include_x)
//! z:     z[0], …, z[N-1]
//! ```
//!
//! Symmetric matrices (`mu_outer`, `lambda`, `x_outer`) are packed as the
//! row-major upper triangle, i.e. `(0,0), (0,1), …, (0,P-1), (1,1), …`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LrvbError, Result};

/// Number of packed entries of a symmetric `p × p` matrix.
pub const fn tri_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Packed index of the unordered pair `(a, b)` in a `p × p` symmetric matrix.
#[inline]
pub fn sym_index(p: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * p - a * a.saturating_sub(1) / 2 + b - a
}

/// The unordered pairs `(a, b)`, `a ≤ b`, in packing order.
pub fn sym_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |a| (a..p).map(move |b| (a, b)))
}

/// Relative tolerance used when checking symmetry before packing.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Packs a symmetric matrix into its row-major upper triangle.
pub fn pack_symmetric(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() {
        return Err(LrvbError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let p = m.nrows();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for a in 0..p {
        for b in (a + 1)..p {
            let (u, l) = (m[(a, b)], m[(b, a)]);
            if !((u - l).abs() <= SYMMETRY_TOL * scale) {
                return Err(LrvbError::NonSymmetric {
                    row: a,
                    col: b,
                    upper: u,
                    lower: l,
                });
            }
        }
    }
    Ok(DVector::from_iterator(
        tri_len(p),
        sym_pairs(p).map(|(a, b)| m[(a, b)]),
    ))
}

/// Inverse of [`pack_symmetric`].
pub fn unpack_symmetric(v: &[f64], p: usize) -> Result<DMatrix<f64>> {
    if v.len() != tri_len(p) {
        return Err(LrvbError::DimensionMismatch(format!(
            "packed length {} does not match P = {p}",
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    for (i, (a, b)) in sym_pairs(p).enumerate() {
        m[(a, b)] = v[i];
        m[(b, a)] = v[i];
    }
    Ok(m)
}

/// A named block of the stacked parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Mu(usize),
    MuOuter(usize),
    Lambda(usize),
    LogDetLambda(usize),
    LogPi,
    X(usize),
    XOuter(usize),
    Z(usize),
}

/// Which partition of θ a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Alpha,
    X,
    Z,
}

impl BlockId {
    pub fn partition(self) -> Partition {
        match self {
            BlockId::X(_) | BlockId::XOuter(_) => Partition::X,
            BlockId::Z(_) => Partition::Z,
            _ => Partition::Alpha,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Mu(k) => write!(f, "mu[{k}]"),
            BlockId::MuOuter(k) => write!(f, "mu_outer[{k}]"),
            BlockId::Lambda(k) => write!(f, "lambda[{k}]"),
            BlockId::LogDetLambda(k) => write!(f, "log_det_lambda[{k}]"),
            BlockId::LogPi => write!(f, "log_pi"),
            BlockId::X(n) => write!(f, "x[{n}]"),
            BlockId::XOuter(n) => write!(f, "x_outer[{n}]"),
            BlockId::Z(n) => write!(f, "z[{n}]"),
        }
    }
}

impl FromStr for BlockId {
    type Err = LrvbError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "log_pi" {
            return Ok(BlockId::LogPi);
        }
        let unknown = || LrvbError::UnknownBlock(s.to_string());
        let (name, rest) = s.split_once('[').ok_or_else(unknown)?;
        let idx: usize = rest
            .strip_suffix(']')
            .and_then(|i| i.parse().ok())
            .ok_or_else(unknown)?;
        Ok(match name {
            "mu" => BlockId::Mu(idx),
            "mu_outer" => BlockId::MuOuter(idx),
            "lambda" => BlockId::Lambda(idx),
            "log_det_lambda" => BlockId::LogDetLambda(idx),
            "x" => BlockId::X(idx),
            "x_outer" => BlockId::XOuter(idx),
            "z" => BlockId::Z(idx),
            _ => return Err(unknown()),
        })
    }
}

/// Index map from named sufficient statistics to positions in `m`.
///
/// Offsets are computed arithmetically, so the layout is a handful of
/// integers regardless of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    k: usize,
    p: usize,
    n: usize,
    include_x: bool,
}

impl ParamLayout {
    pub fn new(k: usize, p: usize, n: usize, include_x: bool) -> Result<Self> {
        if k == 0 || p == 0 || n == 0 {
            return Err(LrvbError::InvalidDimension(format!(
                "K, P and N must be positive (got K={k}, P={p}, N={n})"
            )));
        }
        Ok(Self { k, p, n, include_x })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn include_x(&self) -> bool {
        self.include_x
    }
    pub fn tri(&self) -> usize {
        tri_len(self.p)
    }

    /// The same model without (or with) the perturbed-data blocks.
    pub fn with_x(&self, include_x: bool) -> Self {
        Self { include_x, ..*self }
    }

    fn mu_stride(&self) -> usize {
        self.p + self.tri()
    }
    fn lambda_start(&self) -> usize {
        self.k * self.mu_stride()
    }
    fn lambda_stride(&self) -> usize {
        self.tri() + 1
    }
    fn log_pi_start(&self) -> usize {
        self.lambda_start() + self.k * self.lambda_stride()
    }
    /// Length of the per-point perturbed-data statistics `(x, packed x xᵀ)`.
    pub fn x_stat_len(&self) -> usize {
        self.p + self.tri()
    }

    pub fn alpha_dim(&self) -> usize {
        self.log_pi_start() + self.k
    }
    pub fn x_dim(&self) -> usize {
        if self.include_x {
            self.n * self.x_stat_len()
        } else {
            0
        }
    }
    pub fn z_dim(&self) -> usize {
        self.n * self.k
    }
    pub fn dim(&self) -> usize {
        self.alpha_dim() + self.x_dim() + self.z_dim()
    }

    pub fn alpha_range(&self) -> Range<usize> {
        0..self.alpha_dim()
    }
    pub fn x_range(&self) -> Range<usize> {
        self.alpha_dim()..self.alpha_dim() + self.x_dim()
    }
    pub fn z_range(&self) -> Range<usize> {
        let s = self.alpha_dim() + self.x_dim();
        s..s + self.z_dim()
    }

    fn check_component(&self, block: BlockId, k: usize) -> Result<()> {
        if k < self.k {
            Ok(())
        } else {
            Err(LrvbError::UnknownBlock(block.to_string()))
        }
    }

    fn check_point(&self, block: BlockId, n: usize, needs_x: bool) -> Result<()> {
        if n < self.n && (!needs_x || self.include_x) {
            Ok(())
        } else {
            Err(LrvbError::UnknownBlock(block.to_string()))
        }
    }

    /// Index range of a block. Fails for blocks outside this layout.
    pub fn range(&self, block: BlockId) -> Result<Range<usize>> {
        let (start, len) = match block {
            BlockId::Mu(k) => {
                self.check_component(block, k)?;
                (k * self.mu_stride(), self.p)
            }
            BlockId::MuOuter(k) => {
                self.check_component(block, k)?;
                (k * self.mu_stride() + self.p, self.tri())
            }
            BlockId::Lambda(k) => {
                self.check_component(block, k)?;
                (self.lambda_start() + k * self.lambda_stride(), self.tri())
            }
            BlockId::LogDetLambda(k) => {
                self.check_component(block, k)?;
                (
                    self.lambda_start() + k * self.lambda_stride() + self.tri(),
                    1,
                )
            }
            BlockId::LogPi => (self.log_pi_start(), self.k),
            BlockId::X(n) => {
                self.check_point(block, n, true)?;
                (self.alpha_dim() + n * self.x_stat_len(), self.p)
            }
            BlockId::XOuter(n) => {
                self.check_point(block, n, true)?;
                (self.alpha_dim() + n * self.x_stat_len() + self.p, self.tri())
            }
            BlockId::Z(n) => {
                self.check_point(block, n, false)?;
                (self.z_range().start + n * self.k, self.k)
            }
        };
        Ok(start..start + len)
    }

    /// Offset of a block; panics on blocks outside the layout. Internal use
    /// where the block was produced by this layout.
    #[inline]
    pub(crate) fn off(&self, block: BlockId) -> usize {
        self.range(block).expect("block belongs to layout").start
    }

    /// Looks a block up by its display name, e.g. `"lambda[1]"`.
    pub fn range_by_name(&self, name: &str) -> Result<Range<usize>> {
        self.range(name.parse()?)
    }

    /// The α blocks in layout order.
    pub fn alpha_blocks(&self) -> Vec<BlockId> {
        let mut out = Vec::with_capacity(4 * self.k + 1);
        for k in 0..self.k {
            out.push(BlockId::Mu(k));
            out.push(BlockId::MuOuter(k));
        }
        for k in 0..self.k {
            out.push(BlockId::Lambda(k));
            out.push(BlockId::LogDetLambda(k));
        }
        out.push(BlockId::LogPi);
        out
    }

    /// Every block in layout order.
    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        let xs = (0..self.n)
            .filter(move |_| self.include_x)
            .flat_map(|n| [BlockId::X(n), BlockId::XOuter(n)]);
        self.alpha_blocks()
            .into_iter()
            .chain(xs)
            .chain((0..self.n).map(BlockId::Z))
    }

    /// The block containing index `i` and the position within it.
    pub fn locate(&self, i: usize) -> Result<(BlockId, usize)> {
        if i >= self.dim() {
            return Err(LrvbError::DimensionMismatch(format!(
                "index {i} outside layout of dimension {}",
                self.dim()
            )));
        }
        if i < self.alpha_dim() {
            for b in self.alpha_blocks() {
                let r = self.range(b)?;
                if r.contains(&i) {
                    return Ok((b, i - r.start));
                }
            }
            unreachable!("alpha blocks cover the alpha range")
        } else if i < self.z_range().start {
            let j = i - self.alpha_dim();
            let (n, rem) = (j / self.x_stat_len(), j % self.x_stat_len());
            if rem < self.p {
                Ok((BlockId::X(n), rem))
            } else {
                Ok((BlockId::XOuter(n), rem - self.p))
            }
        } else {
            let j = i - self.z_range().start;
            Ok((BlockId::Z(j / self.k), j % self.k))
        }
    }

    /// Human-readable label of a scalar coordinate, e.g. `lambda[0][0,1]`.
    pub fn label(&self, i: usize) -> Result<String> {
        let (block, pos) = self.locate(i)?;
        Ok(match block {
            BlockId::MuOuter(_) | BlockId::Lambda(_) | BlockId::XOuter(_) => {
                let (a, b) = sym_pairs(self.p).nth(pos).expect("pos < tri");
                format!("{block}[{a},{b}]")
            }
            BlockId::LogDetLambda(_) => block.to_string(),
            _ => format!("{block}[{pos}]"),
        })
    }

    /// Labels of all α coordinates in order.
    pub fn alpha_labels(&self) -> Vec<String> {
        (0..self.alpha_dim())
            .map(|i| self.label(i).expect("alpha index in range"))
            .collect()
    }

    /// A serializable description of the block structure.
    pub fn summary(&self) -> LayoutSummary {
        let mut blocks: Vec<BlockSummary> = self
            .alpha_blocks()
            .into_iter()
            .map(|b| {
                let r = self.range(b).expect("alpha block");
                BlockSummary {
                    name: b.to_string(),
                    offset: r.start,
                    length: r.len(),
                    count: 1,
                    stride: 0,
                }
            })
            .collect();
        if self.include_x {
            blocks.push(BlockSummary {
                name: "x[n]".into(),
                offset: self.x_range().start,
                length: self.p,
                count: self.n,
                stride: self.x_stat_len(),
            });
            blocks.push(BlockSummary {
                name: "x_outer[n]".into(),
                offset: self.x_range().start + self.p,
                length: self.tri(),
                count: self.n,
                stride: self.x_stat_len(),
            });
        }
        blocks.push(BlockSummary {
            name: "z[n]".into(),
            offset: self.z_range().start,
            length: self.k,
            count: self.n,
            stride: self.k,
        });
        LayoutSummary {
            k: self.k,
            p: self.p,
            n: self.n,
            include_x: self.include_x,
            alpha_dim: self.alpha_dim(),
            x_dim: self.x_dim(),
            z_dim: self.z_dim(),
            symmetric_packing: "row-major upper triangle".into(),
            blocks,
        }
    }
}

/// One block (or a strided family of per-point blocks) in a [`LayoutSummary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub name: String,
    pub offset: usize,
    pub length: usize,
    /// Number of repetitions; per-point families use `count = N`.
    pub count: usize,
    /// Distance between consecutive repetitions (0 for single blocks).
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSummary {
    pub k: usize,
    pub p: usize,
    pub n: usize,
    pub include_x: bool,
    pub alpha_dim: usize,
    pub x_dim: usize,
    pub z_dim: usize,
    pub symmetric_packing: String,
    pub blocks: Vec<BlockSummary>,
}

impl LayoutSummary {
    pub fn to_layout(&self) -> Result<ParamLayout> {
        ParamLayout::new(self.k, self.p, self.n, self.include_x)
    }
}

impl Serialize for ParamLayout {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.summary().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamLayout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let summary = LayoutSummary::deserialize(d)?;
        summary.to_layout().map_err(serde::de::Error::custom)
    }
}
