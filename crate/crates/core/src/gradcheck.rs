//! Finite-difference certification of every closed-form gradient.
//!
//! A small fixed instance (N=12, V=2, d_x=7, d=5, K=(3,4)) is built from a
//! seed with dropout masks, permutations, cluster assignments and alignment
//! anchors frozen, so the objective is a deterministic function of its inputs.
//! Each term's analytic gradient is compared entry by entry with a central
//! difference.

use std::fmt;
use std::str::FromStr;

use crate::cluster::{ClusterModel, DEFAULT_TAU};
use crate::encoder::{backward, forward, EncoderParams};
use crate::error::{Error, Result};
use crate::graphdata::normalize_adjacency;
use crate::numkit::{DenseMatrix, Rng, SparseMatrix};
use crate::objective::{
    align_cluster_with_anchors, align_node, anchor_log_distributions, cluster_loss, evaluate_with_anchors, node_loss,
    LayerViews, LossWeights,
};
use crate::transform::{negative_transform, DropoutMask};

pub const N: usize = 12;
pub const ATTR_DIM: usize = 7;
pub const DIM: usize = 5;
pub const KS: [usize; 2] = [3, 4];
pub const STEP: f64 = 1e-4;
pub const THRESHOLD: f64 = 1e-4;
/// Absolute floor in the relative-error denominator, so entries whose true
/// gradient is zero are judged on absolute error.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Encoder,
    NodeLoss,
    ClusterLoss,
    AlignNode,
    AlignCluster,
    Total,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::Encoder,
        Term::NodeLoss,
        Term::ClusterLoss,
        Term::AlignNode,
        Term::AlignCluster,
        Term::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Encoder => "encoder",
            Term::NodeLoss => "L_N",
            Term::ClusterLoss => "L_C",
            Term::AlignNode => "R_N",
            Term::AlignCluster => "R_C",
            Term::Total => "L_X",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown gradient term {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct TermResult {
    pub term: Term,
    pub max_rel_error: f64,
    /// Location of the worst entry with its analytic and numeric values.
    pub worst: String,
    pub entries: usize,
}

impl TermResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < THRESHOLD
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub seed: u64,
    pub results: Vec<TermResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(TermResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TermResult> {
        self.results.iter().filter(|r| !r.passed())
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Frozen gradient-check instance.
pub struct Instance {
    pub a: Vec<SparseMatrix>,
    pub x: DenseMatrix,
    pub a_pos: Vec<SparseMatrix>,
    pub x_pos: Vec<DenseMatrix>,
    pub x_neg: Vec<DenseMatrix>,
    pub params: Vec<EncoderParams>,
    pub models: Vec<ClusterModel>,
    pub weights: LossWeights,
}

impl Instance {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let x = DenseMatrix::from_fn(N, ATTR_DIM, |_, _| rng.normal());
        let mut a = Vec::new();
        let mut a_pos = Vec::new();
        let mut x_pos = Vec::new();
        let mut x_neg = Vec::new();
        let mut params = Vec::new();
        let mut models = Vec::new();
        for &k in &KS {
            let mut trip = Vec::new();
            for i in 0..N {
                for j in i + 1..N {
                    if rng.bernoulli(0.35) {
                        let w = rng.uniform_range(0.5, 1.5);
                        trip.push((i, j, w));
                        trip.push((j, i, w));
                    }
                }
            }
            let norm = normalize_adjacency(&SparseMatrix::from_triplets(N, N, &trip)?)?;
            let (xp, ap) = DropoutMask::draw(0.5, N * ATTR_DIM, norm.nnz(), &mut rng).apply(&x, &norm)?;
            x_neg.push(negative_transform(&x, &mut rng)?);
            a.push(norm);
            a_pos.push(ap);
            x_pos.push(xp);
            let mut p = EncoderParams::init(ATTR_DIM, DIM, &mut rng);
            p.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
            params.push(p);
            let centers = DenseMatrix::from_fn(k, DIM, |_, _| 0.5 * rng.normal());
            let assignments = (0..N).map(|_| rng.below(k)).collect();
            models.push(ClusterModel::new(centers, assignments, DEFAULT_TAU)?);
        }
        Ok(Self {
            a,
            x,
            a_pos,
            x_pos,
            x_neg,
            params,
            models,
            weights: LossWeights {
                lambda_n: 0.7,
                lambda_c: 1.3,
                mu_n: 0.9,
                mu_c: 1.1,
            },
        })
    }

    fn views(&self) -> Vec<LayerViews<'_>> {
        (0..KS.len())
            .map(|v| LayerViews {
                a: &self.a[v],
                x: &self.x,
                a_pos: self.a_pos[v].clone(),
                x_pos: self.x_pos[v].clone(),
                x_neg: self.x_neg[v].clone(),
            })
            .collect()
    }

    /// Clean, positive and negative embeddings per layer.
    fn embeddings(&self) -> Result<Vec<[DenseMatrix; 3]>> {
        (0..KS.len())
            .map(|v| {
                let p = &self.params[v];
                Ok([
                    forward(p, &self.a[v], &self.x)?,
                    forward(p, &self.a_pos[v], &self.x_pos[v])?,
                    forward(p, &self.a[v], &self.x_neg[v])?,
                ])
            })
            .collect()
    }
}

/// Flat vector over several matrices plus a label for every entry.
struct Packed {
    values: Vec<f64>,
    shapes: Vec<(usize, usize)>,
    labels: Vec<String>,
}

impl Packed {
    fn new(named: &[(String, &DenseMatrix)]) -> Self {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (name, m) in named {
            values.extend_from_slice(m.data());
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    labels.push(format!("{name}[{i},{j}]"));
                }
            }
        }
        Self {
            values,
            shapes: named.iter().map(|(_, m)| m.shape()).collect(),
            labels,
        }
    }

    fn unpack(&self, flat: &[f64]) -> Vec<DenseMatrix> {
        let mut off = 0;
        self.shapes
            .iter()
            .map(|&(r, c)| {
                let m = DenseMatrix::from_vec(r, c, flat[off..off + r * c].to_vec()).expect("finite perturbation");
                off += r * c;
                m
            })
            .collect()
    }
}

fn flat_params(params: &[EncoderParams]) -> (Vec<f64>, Vec<String>) {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (v, p) in params.iter().enumerate() {
        for i in 0..p.n_params() {
            values.push(p.flat_get(i));
            let (a, b) = (p.w.data().len(), p.w_self.data().len());
            labels.push(match i {
                i if i < a => format!("layer {v} w[{},{}]", i / p.dim(), i % p.dim()),
                i if i < a + b => format!("layer {v} w_self[{},{}]", (i - a) / p.dim(), (i - a) % p.dim()),
                i => format!("layer {v} bias[{}]", i - a - b),
            });
        }
    }
    (values, labels)
}

fn unflat_params(template: &[EncoderParams], flat: &[f64]) -> Vec<EncoderParams> {
    let mut off = 0;
    template
        .iter()
        .map(|p| {
            let mut q = p.clone();
            for i in 0..q.n_params() {
                q.flat_set(i, flat[off + i]);
            }
            off += q.n_params();
            q
        })
        .collect()
}

fn compare(
    term: Term,
    base: &[f64],
    analytic: &[f64],
    labels: &[String],
    fault: Option<Term>,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<TermResult> {
    assert_eq!(base.len(), analytic.len());
    let sign = if fault == Some(term) { -1.0 } else { 1.0 };
    let mut x = base.to_vec();
    let mut worst = (0.0, String::from("none"));
    for i in 0..x.len() {
        x[i] = base[i] + STEP;
        let up = f(&x)?;
        x[i] = base[i] - STEP;
        let down = f(&x)?;
        x[i] = base[i];
        let numeric = (up - down) / (2.0 * STEP);
        let a = sign * analytic[i];
        let err = rel_error(a, numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, format!("{} analytic {a:.6e} numeric {numeric:.6e}", labels[i]));
        }
    }
    Ok(TermResult {
        term,
        max_rel_error: worst.0,
        worst: worst.1,
        entries: base.len(),
    })
}

fn check_encoder(inst: &Instance, rng: &mut Rng, fault: Option<Term>) -> Result<TermResult> {
    let upstream: Vec<DenseMatrix> = (0..KS.len())
        .map(|_| DenseMatrix::from_fn(N, DIM, |_, _| rng.normal()))
        .collect();
    let analytic: Vec<f64> = (0..KS.len())
        .map(|v| backward(&inst.params[v], &inst.a[v], &inst.x, &upstream[v]))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .zip(&inst.params)
        .flat_map(|(g, p)| (0..p.n_params()).map(move |i| g.flat_get(i)))
        .collect();
    let (base, labels) = flat_params(&inst.params);
    compare(Term::Encoder, &base, &analytic, &labels, fault, |flat| {
        let params = unflat_params(&inst.params, flat);
        let mut s = 0.0;
        for v in 0..KS.len() {
            let h = forward(&params[v], &inst.a[v], &inst.x)?;
            s += h.data().iter().zip(upstream[v].data()).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(s)
    })
}

fn check_node_loss(emb: &[[DenseMatrix; 3]], fault: Option<Term>) -> Result<TermResult> {
    let mut named = Vec::new();
    let mut analytic = Vec::new();
    for (v, [h, hp, hn]) in emb.iter().enumerate() {
        let out = node_loss(h, hp, hn)?;
        for (name, m, g) in [
            ("h", h, &out.grad_h),
            ("h_pos", hp, &out.grad_pos),
            ("h_neg", hn, &out.grad_neg),
        ] {
            named.push((format!("layer {v} {name}"), m));
            analytic.extend_from_slice(g.data());
        }
    }
    let packed = Packed::new(&named);
    compare(
        Term::NodeLoss,
        &packed.values,
        &analytic,
        &packed.labels,
        fault,
        |flat| {
            let m = packed.unpack(flat);
            let mut s = 0.0;
            for t in m.chunks(3) {
                s += node_loss(&t[0], &t[1], &t[2])?.loss;
            }
            Ok(s)
        },
    )
}

fn check_cluster_loss(inst: &Instance, emb: &[[DenseMatrix; 3]], fault: Option<Term>) -> Result<TermResult> {
    let mut named = Vec::new();
    let mut analytic = Vec::new();
    for (v, e) in emb.iter().enumerate() {
        analytic.extend_from_slice(cluster_loss(&e[0], &inst.models[v])?.grad_h.data());
        named.push((format!("layer {v} h"), &e[0]));
    }
    let packed = Packed::new(&named);
    compare(
        Term::ClusterLoss,
        &packed.values,
        &analytic,
        &packed.labels,
        fault,
        |flat| {
            let m = packed.unpack(flat);
            let mut s = 0.0;
            for (v, h) in m.iter().enumerate() {
                s += cluster_loss(h, &inst.models[v])?.loss;
            }
            Ok(s)
        },
    )
}

fn check_align_node(emb: &[[DenseMatrix; 3]], fault: Option<Term>) -> Result<TermResult> {
    let h: Vec<DenseMatrix> = emb.iter().map(|e| e[0].clone()).collect();
    let hn: Vec<DenseMatrix> = emb.iter().map(|e| e[2].clone()).collect();
    let out = align_node(&h, &hn)?;
    let mut named = Vec::new();
    let mut analytic = Vec::new();
    for (v, hv) in h.iter().enumerate() {
        named.push((format!("layer {v} h"), hv));
        analytic.extend_from_slice(out.grad_h[v].data());
    }
    for (v, hv) in hn.iter().enumerate() {
        named.push((format!("layer {v} h_neg"), hv));
        analytic.extend_from_slice(out.grad_neg[v].data());
    }
    let packed = Packed::new(&named);
    let v_count = h.len();
    compare(
        Term::AlignNode,
        &packed.values,
        &analytic,
        &packed.labels,
        fault,
        |flat| {
            let m = packed.unpack(flat);
            Ok(align_node(&m[..v_count], &m[v_count..])?.loss)
        },
    )
}

fn check_align_cluster(inst: &Instance, emb: &[[DenseMatrix; 3]], fault: Option<Term>) -> Result<TermResult> {
    let h: Vec<DenseMatrix> = emb.iter().map(|e| e[0].clone()).collect();
    let anchors = anchor_log_distributions(&h, &inst.models)?;
    let out = align_cluster_with_anchors(&h, &inst.models, &anchors)?;
    let named: Vec<(String, &DenseMatrix)> = h.iter().enumerate().map(|(v, m)| (format!("layer {v} h"), m)).collect();
    let analytic: Vec<f64> = out.grad_h.iter().flat_map(|g| g.data().iter().copied()).collect();
    let packed = Packed::new(&named);
    compare(
        Term::AlignCluster,
        &packed.values,
        &analytic,
        &packed.labels,
        fault,
        |flat| Ok(align_cluster_with_anchors(&packed.unpack(flat), &inst.models, &anchors)?.loss),
    )
}

fn check_total(inst: &Instance, emb: &[[DenseMatrix; 3]], fault: Option<Term>) -> Result<TermResult> {
    let h: Vec<DenseMatrix> = emb.iter().map(|e| e[0].clone()).collect();
    let anchors = anchor_log_distributions(&h, &inst.models)?;
    let views = inst.views();
    let eval = evaluate_with_anchors(
        &inst.params,
        &views,
        Some(&inst.models),
        &inst.weights,
        1,
        Some(&anchors),
    )?;
    let analytic: Vec<f64> = eval
        .grads
        .iter()
        .zip(&inst.params)
        .flat_map(|(g, p)| (0..p.n_params()).map(move |i| g.flat_get(i)))
        .collect();
    let (base, labels) = flat_params(&inst.params);
    compare(Term::Total, &base, &analytic, &labels, fault, |flat| {
        let params = unflat_params(&inst.params, flat);
        Ok(
            evaluate_with_anchors(&params, &views, Some(&inst.models), &inst.weights, 1, Some(&anchors))?
                .report
                .total,
        )
    })
}

pub fn run(seed: u64) -> Result<GradcheckReport> {
    run_with_fault(seed, None)
}

/// Like [`run`], with the analytic gradient of `fault` sign-flipped to prove
/// the harness can fail.
pub fn run_with_fault(seed: u64, fault: Option<Term>) -> Result<GradcheckReport> {
    let inst = Instance::new(seed)?;
    let emb = inst.embeddings()?;
    let mut rng = Rng::new(seed).derive(0x6772_6164);
    let results = vec![
        check_encoder(&inst, &mut rng, fault)?,
        check_node_loss(&emb, fault)?,
        check_cluster_loss(&inst, &emb, fault)?,
        check_align_node(&emb, fault)?,
        check_align_cluster(&inst, &emb, fault)?,
        check_total(&inst, &emb, fault)?,
    ];
    Ok(GradcheckReport { seed, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let report = run(0).unwrap();
        for r in &report.results {
            println!(
                "{:<8} {:.3e} ({} entries) {}",
                r.term.name(),
                r.max_rel_error,
                r.entries,
                r.worst
            );
        }
        assert!(report.passed());
    }

    #[test]
    fn injected_fault_is_caught() {
        for term in Term::ALL {
            let report = run_with_fault(1, Some(term)).unwrap();
            let failed: Vec<Term> = report.failures().map(|r| r.term).collect();
            assert_eq!(failed, vec![term]);
        }
    }

    #[test]
    fn term_names_parse() {
        for term in Term::ALL {
            assert_eq!(term.name().parse::<Term>().unwrap(), term);
        }
        assert!("bogus".parse::<Term>().is_err());
    }
}
