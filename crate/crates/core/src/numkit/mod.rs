//! Dense/sparse linear algebra, deterministic randomness and the small
//! probability helpers (softmax, KL divergence, cosine) shared by the rest of
//! the crate. Everything trains in `f64`.

mod binfmt;
mod dense;
mod rng;
mod sparse;

pub use binfmt::{read_dense, read_dense_from, write_dense, write_dense_to, Precision};
pub use dense::DenseMatrix;
pub use rng::{mix64, Rng};
pub use sparse::{spmm, SparseMatrix};

use crate::error::{Error, Result};

/// Floor applied to norms and probabilities to keep degenerate inputs finite.
pub const FLOOR: f64 = 1e-12;

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; each norm is floored at [`FLOOR`], so a zero vector yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    dot(u, v) / (norm(u).max(FLOOR) * norm(v).max(FLOOR))
}

/// Softmax of `logits / tau`, shifted by the row maximum.
pub fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out: Vec<f64> = logits.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Log-softmax of `logits / tau`; exact in the tails where `softmax` underflows.
pub fn log_softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| ((v - max) / tau).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| (v - max) / tau - lse).collect()
}

/// Row-wise [`softmax`] of a matrix at temperature `tau`.
pub fn softmax_rows(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!(
            "softmax temperature must be positive, got {tau}"
        )));
    }
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&softmax(m.row(i), tau));
    }
    Ok(out)
}

/// `KL(p ‖ q) = Σ p_k ln(p_k / q_k)`. Terms with `p_k = 0` contribute nothing and
/// `q_k` is floored at [`FLOOR`] where `p_k > 0`.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!("KL of lengths {} and {}", p.len(), q.len())));
    }
    for (name, d) in [("p", p), ("q", q)] {
        if d.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::contract(format!("{name} has negative or NaN entries")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("{name} sums to {s}, not 1")));
        }
    }
    let kl = p
        .iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / qk.max(FLOOR)).ln())
        .sum::<f64>();
    // rounding can push identical distributions a hair below zero
    Ok(kl.max(0.0))
}

/// Element-wise mean of equally shaped matrices.
pub fn mean_of(mats: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::contract("mean of an empty matrix list"))?;
    let mut acc = first.clone();
    for m in &mats[1..] {
        acc.add_assign(m)?;
    }
    acc.scale(1.0 / mats.len() as f64);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&DenseMatrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap(), 0.7).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[0.0, 3f64.ln()], 1.0);
        assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
        assert!(softmax_rows(&DenseMatrix::zeros(1, 2), 0.0).is_err());
        assert!(softmax_rows(&DenseMatrix::zeros(1, 2), -1.0).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_div(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_div(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        // q_k = 0 under p_k > 0 is floored rather than infinite
        let v = kl_div(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - (0.5 * 0.5f64.ln() + 0.5 * (0.5 / FLOOR).ln())).abs() < 1e-12);
        assert!(kl_div(&[0.5, 0.5], &[1.0]).is_err());
        assert!(kl_div(&[0.6, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let x = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine(&x, &x) - 1.0).abs() < 1e-15);
        assert!((cosine(&x, &neg) + 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn log_softmax_agrees_with_softmax() {
        let l = [2.0, -1.0, 0.5];
        let p = softmax(&l, 0.3);
        let lp = log_softmax(&l, 0.3);
        for (a, b) in p.iter().zip(lp) {
            assert!((a.ln() - b).abs() < 1e-13);
        }
    }
}
