//! One-layer first-order GCN: `H = tanh(Â X W + X W' + b)`.

use crate::error::{Error, Result};
use crate::numkit::{spmm, DenseMatrix, Rng, SparseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub w: DenseMatrix,
    pub w_self: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Gradient of a scalar loss with respect to [`EncoderParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrad {
    pub gw: DenseMatrix,
    pub gw_self: DenseMatrix,
    pub gbias: Vec<f64>,
}

impl EncoderParams {
    /// Glorot-style uniform init in `±sqrt(6 / (d_x + d))`; zero bias.
    /// Draws all of `w` then all of `w_self`, row-major.
    pub fn init(attr_dim: usize, dim: usize, rng: &mut Rng) -> Self {
        let s = (6.0 / (attr_dim + dim) as f64).sqrt();
        let w = DenseMatrix::from_fn(attr_dim, dim, |_, _| rng.uniform_range(-s, s));
        let w_self = DenseMatrix::from_fn(attr_dim, dim, |_, _| rng.uniform_range(-s, s));
        Self {
            w,
            w_self,
            bias: vec![0.0; dim],
        }
    }

    pub fn zeros(attr_dim: usize, dim: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(attr_dim, dim),
            w_self: DenseMatrix::zeros(attr_dim, dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn attr_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.shape() != self.w_self.shape() || self.bias.len() != self.w.cols() {
            return Err(Error::contract("encoder parameter shapes disagree"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.w.data().len() + self.w_self.data().len() + self.bias.len()
    }

    /// Flat view order: `w`, then `w_self`, then `bias`.
    pub fn flat_get(&self, i: usize) -> f64 {
        let (a, b) = (self.w.data().len(), self.w_self.data().len());
        if i < a {
            self.w.data()[i]
        } else if i < a + b {
            self.w_self.data()[i - a]
        } else {
            self.bias[i - a - b]
        }
    }

    pub fn flat_set(&mut self, i: usize, v: f64) {
        let (a, b) = (self.w.data().len(), self.w_self.data().len());
        if i < a {
            self.w.data_mut()[i] = v;
        } else if i < a + b {
            self.w_self.data_mut()[i - a] = v;
        } else {
            self.bias[i - a - b] = v;
        }
    }

    /// Stable content fingerprint over the exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        (0..self.n_params()).fold(0xcbf2_9ce4_8422_2325u64, |h, i| {
            (h ^ self.flat_get(i).to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

impl EncoderGrad {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            gw: DenseMatrix::zeros(params.w.rows(), params.w.cols()),
            gw_self: DenseMatrix::zeros(params.w_self.rows(), params.w_self.cols()),
            gbias: vec![0.0; params.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGrad) -> Result<()> {
        self.gw.add_assign(&other.gw)?;
        self.gw_self.add_assign(&other.gw_self)?;
        if self.gbias.len() != other.gbias.len() {
            return Err(Error::contract("bias gradient length mismatch"));
        }
        for (a, b) in self.gbias.iter_mut().zip(&other.gbias) {
            *a += b;
        }
        Ok(())
    }

    /// Same flat order as [`EncoderParams::flat_get`].
    pub fn flat_get(&self, i: usize) -> f64 {
        let (a, b) = (self.gw.data().len(), self.gw_self.data().len());
        if i < a {
            self.gw.data()[i]
        } else if i < a + b {
            self.gw_self.data()[i - a]
        } else {
            self.gbias[i - a - b]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.gw
            .max_abs()
            .max(self.gw_self.max_abs())
            .max(self.gbias.iter().fold(0.0, |m, v| m.max(v.abs())))
    }
}

/// Forward intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Activation {
    /// `Â X`
    pub ax: DenseMatrix,
    /// `tanh(·)` output
    pub h: DenseMatrix,
}

fn check_inputs(params: &EncoderParams, a_norm: &SparseMatrix, x: &DenseMatrix) -> Result<()> {
    params.validate()?;
    if a_norm.rows() != a_norm.cols() || a_norm.rows() != x.rows() {
        return Err(Error::contract(format!(
            "adjacency {}x{} does not match {} attribute rows",
            a_norm.rows(),
            a_norm.cols(),
            x.rows()
        )));
    }
    if x.cols() != params.attr_dim() {
        return Err(Error::contract(format!(
            "attribute dim {} vs encoder input dim {}",
            x.cols(),
            params.attr_dim()
        )));
    }
    Ok(())
}

pub fn forward_cached(params: &EncoderParams, a_norm: &SparseMatrix, x: &DenseMatrix) -> Result<Activation> {
    check_inputs(params, a_norm, x)?;
    let ax = spmm(a_norm, x)?;
    let mut pre = ax.matmul(&params.w)?;
    pre.add_assign(&x.matmul(&params.w_self)?)?;
    pre.add_row_broadcast(&params.bias)?;
    let h = pre.map(f64::tanh);
    Ok(Activation { ax, h })
}

pub fn forward(params: &EncoderParams, a_norm: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    forward_cached(params, a_norm, x).map(|act| act.h)
}

/// Backward from cached activations; `upstream` is `∂L/∂H`.
pub fn backward_cached(act: &Activation, x: &DenseMatrix, upstream: &DenseMatrix) -> Result<EncoderGrad> {
    if upstream.shape() != act.h.shape() {
        return Err(Error::contract(format!(
            "upstream gradient {:?} vs embeddings {:?}",
            upstream.shape(),
            act.h.shape()
        )));
    }
    let mut g = upstream.clone();
    for (gv, hv) in g.data_mut().iter_mut().zip(act.h.data()) {
        *gv *= 1.0 - hv * hv;
    }
    Ok(EncoderGrad {
        gw: act.ax.matmul_tn(&g)?,
        gw_self: x.matmul_tn(&g)?,
        gbias: g.column_sums(),
    })
}

pub fn backward(
    params: &EncoderParams,
    a_norm: &SparseMatrix,
    x: &DenseMatrix,
    upstream: &DenseMatrix,
) -> Result<EncoderGrad> {
    let act = forward_cached(params, a_norm, x)?;
    backward_cached(&act, x, upstream)
}
