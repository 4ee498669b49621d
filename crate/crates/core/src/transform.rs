//! Graph views for the node-level contrast.
//!
//! The positive view applies inverted dropout to every attribute entry and to
//! every stored value of the normalized adjacency (the sparsity pattern is kept;
//! dropped values become stored zeros). The negative view shuffles attribute rows
//! and leaves the adjacency alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, Rng, SparseMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub p_drop: f64,
    pub seed: u64,
}

impl TransformConfig {
    pub fn new(p_drop: f64, seed: u64) -> Result<Self> {
        let cfg = Self { p_drop, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_drop > 0.0 && self.p_drop < 1.0) {
            return Err(Error::contract(format!(
                "p_drop must lie in (0, 1), got {}",
                self.p_drop
            )));
        }
        Ok(())
    }
}

/// Keep/drop decisions for one positive view plus the survivor scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub keep_x: Vec<bool>,
    pub keep_a: Vec<bool>,
    pub scale: f64,
}

impl DropoutMask {
    /// Draws attribute decisions first (row-major), then adjacency values in CSR order.
    pub fn draw(p_drop: f64, x_len: usize, a_nnz: usize, rng: &mut Rng) -> Self {
        let keep_x = (0..x_len).map(|_| !rng.bernoulli(p_drop)).collect();
        let keep_a = (0..a_nnz).map(|_| !rng.bernoulli(p_drop)).collect();
        Self {
            keep_x,
            keep_a,
            scale: 1.0 / (1.0 - p_drop),
        }
    }

    /// Keeps everything with scale 1: the `p_drop → 0` limit.
    pub fn keep_all(x_len: usize, a_nnz: usize) -> Self {
        Self {
            keep_x: vec![true; x_len],
            keep_a: vec![true; a_nnz],
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: &DenseMatrix, a: &SparseMatrix) -> Result<(DenseMatrix, SparseMatrix)> {
        if self.keep_x.len() != x.data().len() || self.keep_a.len() != a.nnz() {
            return Err(Error::contract("dropout mask does not match the inputs"));
        }
        let mut x_out = x.clone();
        for (v, &keep) in x_out.data_mut().iter_mut().zip(&self.keep_x) {
            *v = if keep { *v * self.scale } else { 0.0 };
        }
        let values = a
            .values()
            .iter()
            .zip(&self.keep_a)
            .map(|(&v, &keep)| if keep { v * self.scale } else { 0.0 })
            .collect();
        Ok((x_out, a.with_values(values)?))
    }
}

/// Positive view: a fresh dropout mask over `x` and the stored values of `a`.
pub fn positive_transform(
    x: &DenseMatrix,
    a: &SparseMatrix,
    cfg: &TransformConfig,
    rng: &mut Rng,
) -> Result<(DenseMatrix, SparseMatrix)> {
    cfg.validate()?;
    DropoutMask::draw(cfg.p_drop, x.data().len(), a.nnz(), rng).apply(x, a)
}

/// Output row `i` is input row `perm[i]`.
pub fn permute_rows(x: &DenseMatrix, perm: &[usize]) -> Result<DenseMatrix> {
    let mut seen = vec![false; x.rows()];
    if perm.len() != x.rows()
        || perm
            .iter()
            .any(|&p| p >= x.rows() || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::contract("not a permutation of the matrix rows"));
    }
    Ok(x.select_rows(perm))
}

/// Negative view: rows of `x` under a uniform permutation ([`Rng::permutation`]).
pub fn negative_transform(x: &DenseMatrix, rng: &mut Rng) -> Result<DenseMatrix> {
    if x.rows() < 2 {
        return Err(Error::contract("row shuffle needs at least two rows"));
    }
    let perm = rng.permutation(x.rows());
    permute_rows(x, &perm)
}
