//! Sparse symmetric matrices addressed by named parameter blocks.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{LrvbError, Result};
use crate::layout::{BlockId, ParamLayout};

/// A symmetric matrix over a [`ParamLayout`] stored as a map of dense
/// sub-blocks. Both `(row, col)` and `(col, row)` orientations are stored
/// for off-diagonal blocks so lookups never need a transpose. Blocks that
/// are absent are exactly zero.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    layout: ParamLayout,
    blocks: HashMap<(BlockId, BlockId), DMatrix<f64>>,
}

impl BlockMatrix {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            blocks: HashMap::new(),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn check_shape(&self, row: BlockId, col: BlockId, m: &DMatrix<f64>) -> Result<()> {
        let (r, c) = (self.layout.range(row)?, self.layout.range(col)?);
        if m.shape() != (r.len(), c.len()) {
            return Err(LrvbError::DimensionMismatch(format!(
                "block ({row}, {col}) expects {}x{}, got {}x{}",
                r.len(),
                c.len(),
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    }

    /// Adds `m` into block `(row, col)` and its transpose into `(col, row)`.
    /// A diagonal block (`row == col`) must itself be symmetric.
    pub fn add_block(&mut self, row: BlockId, col: BlockId, m: DMatrix<f64>) -> Result<()> {
        self.check_shape(row, col, &m)?;
        if row != col {
            let t = m.transpose();
            accumulate(&mut self.blocks, (col, row), t);
        }
        accumulate(&mut self.blocks, (row, col), m);
        Ok(())
    }

    pub fn get(&self, row: BlockId, col: BlockId) -> Option<&DMatrix<f64>> {
        self.blocks.get(&(row, col))
    }

    /// Block `(row, col)`, or a zero matrix of the right shape.
    pub fn block_or_zero(&self, row: BlockId, col: BlockId) -> Result<DMatrix<f64>> {
        match self.get(row, col) {
            Some(m) => Ok(m.clone()),
            None => {
                let (r, c) = (self.layout.range(row)?, self.layout.range(col)?);
                Ok(DMatrix::zeros(r.len(), c.len()))
            }
        }
    }

    /// Iterates over every stored `(row, col, block)` (both orientations).
    pub fn iter(&self) -> impl Iterator<Item = (BlockId, BlockId, &DMatrix<f64>)> {
        self.blocks.iter().map(|(&(r, c), m)| (r, c, m))
    }

    pub fn stored_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Dense materialization. Only sensible for small layouts.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for (&(r, c), m) in &self.blocks {
            let (rr, cr) = (self.layout.off(r), self.layout.off(c));
            out.view_mut((rr, cr), m.shape()).copy_from(m);
        }
        out
    }

    /// Dense sub-matrix over a contiguous index range (e.g. the α partition).
    pub fn dense_range(&self, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(range.len(), range.len());
        for (&(r, c), m) in &self.blocks {
            let (rr, cr) = (self.layout.off(r), self.layout.off(c));
            if range.contains(&rr) && range.contains(&cr) {
                out.view_mut((rr - range.start, cr - range.start), m.shape())
                    .copy_from(m);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(LrvbError::DimensionMismatch(format!(
                "vector of length {} against matrix of dimension {}",
                v.len(),
                self.dim()
            )));
        }
        let mut out = DVector::zeros(self.dim());
        for (&(r, c), m) in &self.blocks {
            let (rr, cr) = (self.layout.off(r), self.layout.off(c));
            let x = v.rows(cr, m.ncols());
            let mut y = out.rows_mut(rr, m.nrows());
            y.gemv(1.0, m, &x, 1.0);
        }
        Ok(out)
    }

    /// Largest `|A_ij − A_ji|` over stored blocks.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for (&(r, c), m) in &self.blocks {
            match self.blocks.get(&(c, r)) {
                Some(t) => worst = worst.max((m - t.transpose()).amax()),
                None => worst = worst.max(m.amax()),
            }
        }
        worst
    }

    /// True if every stored block couples only blocks of one factor, as
    /// grouped by `factor_of`.
    pub fn is_block_diagonal_by<F: Fn(BlockId) -> usize>(&self, factor_of: F) -> bool {
        self.blocks
            .keys()
            .all(|&(r, c)| factor_of(r) == factor_of(c))
    }
}

fn accumulate(
    map: &mut HashMap<(BlockId, BlockId), DMatrix<f64>>,
    key: (BlockId, BlockId),
    m: DMatrix<f64>,
) {
    match map.get_mut(&key) {
        Some(existing) => *existing += m,
        None => {
            map.insert(key, m);
        }
    }
}
