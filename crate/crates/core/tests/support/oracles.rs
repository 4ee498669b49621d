//! Direct-summation oracles for the loss terms and the random instances they
//! are checked on. Shared by the objective tests and the acceptance suite.
#![allow(dead_code)]

use xgoal_core::cluster::ClusterModel;
use xgoal_core::numkit::{DenseMatrix, Rng};
use xgoal_core::objective::{
    align_cluster, align_node, cluster_loss, node_loss, total_loss, LayerEmbeddings, LossWeights,
};

pub const LO: f64 = 0.126_928_011_042_972_1 - 1e-12;
pub const HI: f64 = 2.126_928_011_042_972_5 + 1e-12;

// ---- independent oracles, written straight from the definitions ----

pub fn o_cos(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for k in 0..u.len() {
        uv += u[k] * v[k];
        uu += u[k] * u[k];
        vv += v[k] * v[k];
    }
    uv / (uu.sqrt().max(1e-12) * vv.sqrt().max(1e-12))
}

pub fn o_contrast(h: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
    let a = o_cos(h, pos).exp();
    let b = o_cos(h, neg).exp();
    -(a / (a + b)).ln()
}

pub fn o_probs(m: &ClusterModel, h: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = (0..m.k())
        .map(|k| {
            let c = m.centers().row(k);
            let dot: f64 = (0..h.len()).map(|j| c[j] * h[j]).sum();
            (dot / m.tau()).exp()
        })
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn o_node(h: &DenseMatrix, p: &DenseMatrix, n: &DenseMatrix) -> (f64, Vec<f64>) {
    let terms: Vec<f64> = (0..h.rows())
        .map(|i| o_contrast(h.row(i), p.row(i), n.row(i)))
        .collect();
    (terms.iter().sum::<f64>() / h.rows() as f64, terms)
}

pub fn o_cluster(h: &DenseMatrix, m: &ClusterModel) -> f64 {
    let mut s = 0.0;
    for i in 0..h.rows() {
        s -= o_probs(m, h.row(i))[m.assignments()[i]].ln();
    }
    s / h.rows() as f64
}

pub fn o_align_node(h: &[DenseMatrix], neg: &[DenseMatrix]) -> (f64, Vec<f64>) {
    let (v_count, n) = (h.len(), h[0].rows());
    let mut terms = Vec::new();
    for i in 0..n {
        for v in 0..v_count {
            for w in 0..v_count {
                if w != v {
                    terms.push(o_contrast(h[v].row(i), h[w].row(i), neg[v].row(i)));
                }
            }
        }
    }
    let z = (n * v_count * (v_count - 1)) as f64;
    (terms.iter().sum::<f64>() / z, terms)
}

pub fn o_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn o_align_cluster(h: &[DenseMatrix], models: &[ClusterModel]) -> f64 {
    let (v_count, n) = (h.len(), h[0].rows());
    let mut total = 0.0;
    for v in 0..v_count {
        let mut r = 0.0;
        for i in 0..n {
            let p = o_probs(&models[v], h[v].row(i));
            for w in (0..v_count).filter(|&w| w != v) {
                r += o_kl(&p, &o_probs(&models[v], h[w].row(i)));
            }
        }
        total += r / (n * (v_count - 1)) as f64;
    }
    total / v_count as f64
}

// ---- random instances ----

pub struct Inst {
    pub layers: Vec<LayerEmbeddings>,
    pub models: Vec<ClusterModel>,
}

pub fn tanh_matrix(n: usize, d: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(n, d, |_, _| (1.5 * rng.normal()).tanh())
}

pub fn instance(seed: u64, n: usize, v_count: usize, d: usize) -> Inst {
    let mut rng = Rng::new(seed);
    let layers = (0..v_count)
        .map(|_| LayerEmbeddings {
            h: tanh_matrix(n, d, &mut rng),
            h_pos: tanh_matrix(n, d, &mut rng),
            h_neg: tanh_matrix(n, d, &mut rng),
        })
        .collect();
    let models = (0..v_count)
        .map(|_| {
            let k = 1 + rng.below(5);
            let centers = DenseMatrix::from_fn(k, d, |_, _| rng.normal());
            let assign = (0..n).map(|_| rng.below(k)).collect();
            ClusterModel::new(centers, assign, rng.uniform_range(0.2, 1.0)).unwrap()
        })
        .collect();
    Inst { layers, models }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

/// Compares every term and the weighted total against the oracles at `tol`.
pub fn oracle_mismatch(inst: &Inst, tol: f64) -> Result<(), String> {
    let h: Vec<DenseMatrix> = inst.layers.iter().map(|l| l.h.clone()).collect();
    let neg: Vec<DenseMatrix> = inst.layers.iter().map(|l| l.h_neg.clone()).collect();
    let mut want_total = 0.0;
    for (v, (l, m)) in inst.layers.iter().zip(&inst.models).enumerate() {
        let got = node_loss(&l.h, &l.h_pos, &l.h_neg).map_err(|e| e.to_string())?;
        let (want, terms) = o_node(&l.h, &l.h_pos, &l.h_neg);
        check(close(got.loss, want, tol), || {
            format!("L_N layer {v}: {} vs {want}", got.loss)
        })?;
        for (i, (g, w)) in got.per_node.iter().zip(&terms).enumerate() {
            check(close(*g, *w, tol), || format!("L_N layer {v} node {i}: {g} vs {w}"))?;
        }
        let lc = cluster_loss(&l.h, m).map_err(|e| e.to_string())?.loss;
        let want_c = o_cluster(&l.h, m);
        check(close(lc, want_c, tol), || format!("L_C layer {v}: {lc} vs {want_c}"))?;
        want_total += want + want_c;
    }
    if h.len() >= 2 {
        let rn = align_node(&h, &neg).map_err(|e| e.to_string())?;
        let (want, terms) = o_align_node(&h, &neg);
        check(close(rn.loss, want, tol), || format!("R_N: {} vs {want}", rn.loss))?;
        check(rn.terms.len() == terms.len(), || "R_N term count".into())?;
        let rc = align_cluster(&h, &inst.models).map_err(|e| e.to_string())?.loss;
        let want_c = o_align_cluster(&h, &inst.models);
        check(close(rc, want_c, tol), || format!("R_C: {rc} vs {want_c}"))?;
        want_total += want + want_c;
    }
    let (report, _) =
        total_loss(&inst.layers, Some(&inst.models), &LossWeights::default()).map_err(|e| e.to_string())?;
    check(close(report.total, want_total, tol), || {
        format!("total: {} vs {want_total}", report.total)
    })
}

/// Range and sign invariants of every term.
pub fn bound_violation(inst: &Inst) -> Result<(), String> {
    let h: Vec<DenseMatrix> = inst.layers.iter().map(|l| l.h.clone()).collect();
    let neg: Vec<DenseMatrix> = inst.layers.iter().map(|l| l.h_neg.clone()).collect();
    for (v, (l, m)) in inst.layers.iter().zip(&inst.models).enumerate() {
        let ln = node_loss(&l.h, &l.h_pos, &l.h_neg).map_err(|e| e.to_string())?;
        for t in &ln.per_node {
            check((LO..=HI).contains(t), || {
                format!("L_N term {t} out of range on layer {v}")
            })?;
        }
        let lc = cluster_loss(&l.h, m).map_err(|e| e.to_string())?.loss;
        check(lc >= 0.0, || format!("L_C = {lc} on layer {v}"))?;
        if m.k() == 1 {
            check(lc == 0.0, || format!("L_C = {lc} with K = 1"))?;
        }
        let self_pair =
            align_cluster(&[l.h.clone(), l.h.clone()], &[m.clone(), m.clone()]).map_err(|e| e.to_string())?;
        check(self_pair.loss == 0.0, || format!("KL(p||p) = {}", self_pair.loss))?;
    }
    let rn = align_node(&h, &neg).map_err(|e| e.to_string())?;
    for t in &rn.terms {
        check((LO..=HI).contains(t), || format!("R_N term {t} out of range"))?;
    }
    let rc = align_cluster(&h, &inst.models).map_err(|e| e.to_string())?.loss;
    check(rc >= 0.0, || format!("R_C = {rc}"))
}
