//! Block-average projection of a control path onto piecewise-constant,
//! one-block-delayed controls.
//!
//! With `δ = T/j`, the projection is `ν` on the first block and, on each
//! later block, the average of `v` over the previous block. The result is
//! adapted whenever `v` is, and converges to `v` in L² as `j` grows.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Precomputed overlap weights between grid steps and `j` blocks, so the
/// projection of a flat step path costs one pass and no allocation.
#[derive(Debug, Clone)]
pub struct BlockProjector {
    steps: usize,
    blocks: usize,
    /// `(block, step, |step ∩ block| / δ)`.
    weights: Vec<(usize, usize, f64)>,
    /// Block containing each step's midpoint.
    step_block: Vec<usize>,
}

impl BlockProjector {
    pub fn new(grid: &TimeGrid, blocks: usize) -> Result<Self> {
        let steps = grid.steps();
        if blocks == 0 || blocks > steps {
            return Err(Error::Domain(alloc::format!("block count {blocks} must be in 1..={steps}")));
        }
        let dt = grid.step();
        let delta = grid.horizon() / blocks as f64;
        let mut weights = Vec::new();
        for b in 0..blocks {
            let (lo, hi) = (b as f64 * delta, (b + 1) as f64 * delta);
            let first = (libm::floor(lo / dt) as usize).min(steps - 1);
            for s in first..steps {
                if grid.time(s) >= hi {
                    break;
                }
                let a = grid.time(s).max(lo);
                let e = grid.time(s + 1).min(hi);
                if e > a {
                    weights.push((b, s, (e - a) / delta));
                }
            }
        }
        let step_block = (0..steps)
            .map(|s| (libm::floor((s as f64 + 0.5) * dt / delta) as usize).min(blocks - 1))
            .collect();
        Ok(Self { steps, blocks, weights, step_block })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    /// Projects `v` (`steps × dim`, one row per step) into `out`, using
    /// `avg` (`blocks × dim`) as scratch. `nu` fills the first block.
    pub fn project(&self, v: &[f64], dim: usize, nu: &[f64], avg: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.steps * dim);
        avg.iter_mut().for_each(|a| *a = 0.0);
        for &(b, s, w) in &self.weights {
            for c in 0..dim {
                avg[b * dim + c] += w * v[s * dim + c];
            }
        }
        for (s, &b) in self.step_block.iter().enumerate() {
            let dst = &mut out[s * dim..(s + 1) * dim];
            if b == 0 {
                dst.copy_from_slice(nu);
            } else {
                dst.copy_from_slice(&avg[(b - 1) * dim..b * dim]);
            }
        }
    }
}

/// `v[s]` is the value on step `s` (piecewise constant). Returns the
/// projection on every step, evaluating block membership at step midpoints.
pub fn piecewise_projection(
    grid: &TimeGrid,
    v: &[DMatrix<f64>],
    blocks: usize,
    nu: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let proj = BlockProjector::new(grid, blocks)?;
    let steps = grid.steps();
    if v.len() != steps {
        return Err(Error::GridMismatch { expected: steps, got: v.len() });
    }
    let dim = nu.len();
    if let Some(bad) = v.iter().find(|m| m.len() != dim) {
        return Err(Error::Domain(alloc::format!("path entry has {} values, expected {dim}", bad.len())));
    }
    let flat: Vec<f64> = v.iter().flat_map(|m| m.iter().copied()).collect();
    let mut avg = alloc::vec![0.0; blocks * dim];
    let mut out = alloc::vec![0.0; steps * dim];
    proj.project(&flat, dim, nu.as_slice(), &mut avg, &mut out);
    Ok(out.chunks(dim).map(|c| DMatrix::from_column_slice(nu.nrows(), nu.ncols(), c)).collect())
}
