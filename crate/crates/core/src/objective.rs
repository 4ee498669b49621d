//! Loss terms and their gradients with respect to embeddings.
//!
//! Every term has a closed-form backward pass. Cluster centers and the anchor
//! distributions of the cluster-level alignment are constants; gradients flow
//! into the clean, positive and negative embeddings of every layer.
//!
//! Per-node contrast terms have the form `softplus(cos(h, neg) - cos(h, pos))`,
//! which equals `-log(e^{cos(h,pos)} / (e^{cos(h,pos)} + e^{cos(h,neg)}))`.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::encoder::{backward_cached, forward_cached, EncoderGrad, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{dot, log_softmax, norm, DenseMatrix, SparseMatrix, FLOOR};
use crate::parallel::map_ordered;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_n: f64,
    pub lambda_c: f64,
    pub mu_n: f64,
    pub mu_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_n: 1.0,
            lambda_c: 1.0,
            mu_n: 1.0,
            mu_c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_n, self.lambda_c, self.mu_n, self.mu_c];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    /// The node-level part only (warm-up objective).
    pub fn node_level(&self) -> Self {
        Self {
            lambda_c: 0.0,
            mu_c: 0.0,
            ..self.clone()
        }
    }

    pub fn zero() -> Self {
        Self {
            lambda_n: 0.0,
            lambda_c: 0.0,
            mu_n: 0.0,
            mu_c: 0.0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `cos(u, v)` and its partial derivatives. Norms below [`FLOOR`] are treated as
/// the constant floor.
fn cosine_with_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nu_raw, nv_raw) = (norm(u), norm(v));
    let (nu, nv) = (nu_raw.max(FLOOR), nv_raw.max(FLOOR));
    let c = dot(u, v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let cu = if nu_raw >= FLOOR { c / (nu * nu) } else { 0.0 };
    let cv = if nv_raw >= FLOOR { c / (nv * nv) } else { 0.0 };
    let du = u.iter().zip(v).map(|(&a, &b)| b * inv - cu * a).collect();
    let dv = u.iter().zip(v).map(|(&a, &b)| a * inv - cv * b).collect();
    (c, du, dv)
}

fn axpy_row(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn check_shapes(what: &str, mats: &[&DenseMatrix]) -> Result<()> {
    let shape = mats[0].shape();
    if mats.iter().any(|m| m.shape() != shape) {
        return Err(Error::contract(format!("{what}: embedding shapes differ")));
    }
    Ok(())
}

/// Node-level contrastive loss with gradients for all three embedding matrices.
#[derive(Clone, Debug)]
pub struct NodeLoss {
    pub loss: f64,
    /// Un-normalized per-node terms; `loss` is their mean.
    pub per_node: Vec<f64>,
    pub grad_h: DenseMatrix,
    pub grad_pos: DenseMatrix,
    pub grad_neg: DenseMatrix,
}

pub fn node_loss(h: &DenseMatrix, h_pos: &DenseMatrix, h_neg: &DenseMatrix) -> Result<NodeLoss> {
    check_shapes("node loss", &[h, h_pos, h_neg])?;
    let (n, d) = h.shape();
    let mut out = NodeLoss {
        loss: 0.0,
        per_node: Vec::with_capacity(n),
        grad_h: DenseMatrix::zeros(n, d),
        grad_pos: DenseMatrix::zeros(n, d),
        grad_neg: DenseMatrix::zeros(n, d),
    };
    if n == 0 {
        return Ok(out);
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let (a, da_h, da_pos) = cosine_with_grad(h.row(i), h_pos.row(i));
        let (b, db_h, db_neg) = cosine_with_grad(h.row(i), h_neg.row(i));
        let term = softplus(b - a);
        out.per_node.push(term);
        out.loss += term;
        // ∂term/∂b = σ(b - a) = -∂term/∂a
        let s = sigmoid(b - a) * inv_n;
        axpy_row(out.grad_h.row_mut(i), -s, &da_h);
        axpy_row(out.grad_h.row_mut(i), s, &db_h);
        axpy_row(out.grad_pos.row_mut(i), -s, &da_pos);
        axpy_row(out.grad_neg.row_mut(i), s, &db_neg);
    }
    out.loss *= inv_n;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ClusterLoss {
    pub loss: f64,
    pub per_node: Vec<f64>,
    pub grad_h: DenseMatrix,
}

/// Negative log-likelihood of each node's assigned prototype.
pub fn cluster_loss(h: &DenseMatrix, model: &ClusterModel) -> Result<ClusterLoss> {
    let (n, d) = h.shape();
    if model.assignments().len() != n {
        return Err(Error::contract(format!(
            "cluster model covers {} nodes, embeddings have {n}",
            model.assignments().len()
        )));
    }
    if model.dim() != d {
        return Err(Error::contract(format!(
            "center dim {} vs embedding dim {d}",
            model.dim()
        )));
    }
    let mut out = ClusterLoss {
        loss: 0.0,
        per_node: Vec::with_capacity(n),
        grad_h: DenseMatrix::zeros(n, d),
    };
    if n == 0 {
        return Ok(out);
    }
    let inv_n = 1.0 / n as f64;
    let tau = model.tau();
    for i in 0..n {
        let k_n = model.assignments()[i];
        if k_n >= model.k() {
            return Err(Error::contract(format!("assignment {k_n} out of range")));
        }
        let logp = log_softmax(&model.logits(h.row(i)), 1.0);
        let term = -logp[k_n];
        out.per_node.push(term);
        out.loss += term;
        // ∂/∂h = (Σ_k p_k c_k - c_{k_n}) / τ
        let g = out.grad_h.row_mut(i);
        for (k, c) in model.centers().row_iter().enumerate() {
            let coeff = logp[k].exp() - if k == k_n { 1.0 } else { 0.0 };
            axpy_row(g, coeff * inv_n / tau, c);
        }
    }
    out.loss *= inv_n;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct AlignNode {
    pub loss: f64,
    /// Every `(n, v, v')` term, un-normalized.
    pub terms: Vec<f64>,
    pub grad_h: Vec<DenseMatrix>,
    pub grad_neg: Vec<DenseMatrix>,
}

/// Node-level alignment across layers. With fewer than two layers the term is
/// zero and the gradient lists are empty.
pub fn align_node(h_all: &[DenseMatrix], h_neg_all: &[DenseMatrix]) -> Result<AlignNode> {
    let v_count = h_all.len();
    if h_neg_all.len() != v_count {
        return Err(Error::contract("align_node: layer counts differ"));
    }
    if v_count < 2 {
        return Ok(AlignNode {
            loss: 0.0,
            terms: Vec::new(),
            grad_h: Vec::new(),
            grad_neg: Vec::new(),
        });
    }
    let refs: Vec<&DenseMatrix> = h_all.iter().chain(h_neg_all).collect();
    check_shapes("align_node", &refs)?;
    let (n, d) = h_all[0].shape();
    let mut grad_h = vec![DenseMatrix::zeros(n, d); v_count];
    let mut grad_neg = vec![DenseMatrix::zeros(n, d); v_count];
    let mut terms = Vec::with_capacity(n * v_count * (v_count - 1));
    if n == 0 {
        return Ok(AlignNode {
            loss: 0.0,
            terms,
            grad_h,
            grad_neg,
        });
    }
    let inv_z = 1.0 / (n * v_count * (v_count - 1)) as f64;
    let mut loss = 0.0;
    for i in 0..n {
        for v in 0..v_count {
            let anchor = h_all[v].row(i);
            let (b, db_anchor, db_neg) = cosine_with_grad(anchor, h_neg_all[v].row(i));
            for w in (0..v_count).filter(|&w| w != v) {
                let (a, da_anchor, da_other) = cosine_with_grad(anchor, h_all[w].row(i));
                let term = softplus(b - a);
                terms.push(term);
                loss += term;
                let s = sigmoid(b - a) * inv_z;
                axpy_row(grad_h[v].row_mut(i), -s, &da_anchor);
                axpy_row(grad_h[v].row_mut(i), s, &db_anchor);
                axpy_row(grad_h[w].row_mut(i), -s, &da_other);
                axpy_row(grad_neg[v].row_mut(i), s, &db_neg);
            }
        }
    }
    Ok(AlignNode {
        loss: loss * inv_z,
        terms,
        grad_h,
        grad_neg,
    })
}

#[derive(Clone, Debug)]
pub struct AlignCluster {
    pub loss: f64,
    /// Per-anchor regularizer before the `1/V` average.
    pub per_anchor: Vec<f64>,
    pub grad_h: Vec<DenseMatrix>,
}

/// Anchor log-distributions `log p(·|h^v)` under each layer's own centers,
/// one `N × K_v` matrix per layer.
pub fn anchor_log_distributions(h_all: &[DenseMatrix], models: &[ClusterModel]) -> Result<Vec<DenseMatrix>> {
    if models.len() != h_all.len() {
        return Err(Error::contract(
            "anchor_distributions: one cluster model per layer required",
        ));
    }
    h_all
        .iter()
        .zip(models)
        .map(|(h, m)| {
            if m.dim() != h.cols() {
                return Err(Error::contract(format!(
                    "center dim {} vs embedding dim {}",
                    m.dim(),
                    h.cols()
                )));
            }
            let mut p = DenseMatrix::zeros(h.rows(), m.k());
            for i in 0..h.rows() {
                let lp = log_softmax(&m.logits(h.row(i)), 1.0);
                p.row_mut(i).copy_from_slice(&lp);
            }
            Ok(p)
        })
        .collect()
}

/// Cluster-level alignment. For each anchor layer `v`, the anchor distribution
/// `p = p(·|h^v)` under centers `C^v` is a constant target; the recovered
/// distributions `q = p(·|h^{v'})` under the same centers are pulled toward it by
/// `KL(p ‖ q)`. KL is evaluated through log-softmax, so it stays exact where `q`
/// underflows.
pub fn align_cluster(h_all: &[DenseMatrix], models: &[ClusterModel]) -> Result<AlignCluster> {
    let anchors = anchor_log_distributions(h_all, models)?;
    align_cluster_with_anchors(h_all, models, &anchors)
}

/// [`align_cluster`] against fixed anchor log-distributions.
pub fn align_cluster_with_anchors(
    h_all: &[DenseMatrix],
    models: &[ClusterModel],
    anchors: &[DenseMatrix],
) -> Result<AlignCluster> {
    let v_count = h_all.len();
    if models.len() != v_count || anchors.len() != v_count {
        return Err(Error::contract(
            "align_cluster: one cluster model and anchor set per layer required",
        ));
    }
    if v_count < 2 {
        return Ok(AlignCluster {
            loss: 0.0,
            per_anchor: Vec::new(),
            grad_h: Vec::new(),
        });
    }
    let refs: Vec<&DenseMatrix> = h_all.iter().collect();
    check_shapes("align_cluster", &refs)?;
    let (n, d) = h_all[0].shape();
    if let Some(m) = models.iter().find(|m| m.dim() != d) {
        return Err(Error::contract(format!("center dim {} vs embedding dim {d}", m.dim())));
    }
    if let Some(a) = anchors.iter().zip(models).find(|(a, m)| a.shape() != (n, m.k())) {
        return Err(Error::contract(format!(
            "anchor shape {:?} does not match the layer",
            a.0.shape()
        )));
    }
    let mut grad_h = vec![DenseMatrix::zeros(n, d); v_count];
    let mut per_anchor = vec![0.0; v_count];
    if n == 0 {
        return Ok(AlignCluster {
            loss: 0.0,
            per_anchor,
            grad_h,
        });
    }
    let inv_anchor = 1.0 / (n * (v_count - 1)) as f64;
    let inv_v = 1.0 / v_count as f64;
    for v in 0..v_count {
        let model = &models[v];
        let tau = model.tau();
        let mut r_v = 0.0;
        for i in 0..n {
            let logp = anchors[v].row(i);
            let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            for w in (0..v_count).filter(|&w| w != v) {
                let logq = log_softmax(&model.logits(h_all[w].row(i)), 1.0);
                r_v += p
                    .iter()
                    .zip(logp.iter().zip(&logq))
                    .filter(|(&pk, _)| pk > 0.0)
                    .map(|(&pk, (&lp, &lq))| pk * (lp - lq))
                    .sum::<f64>();
                // ∂KL/∂h^{v'} = (Σ_k q_k c_k - Σ_k p_k c_k) / τ
                let g = grad_h[w].row_mut(i);
                for (k, c) in model.centers().row_iter().enumerate() {
                    let coeff = logq[k].exp() - p[k];
                    axpy_row(g, coeff * inv_anchor * inv_v / tau, c);
                }
            }
        }
        per_anchor[v] = r_v * inv_anchor;
    }
    let loss = per_anchor.iter().sum::<f64>() * inv_v;
    Ok(AlignCluster {
        loss,
        per_anchor,
        grad_h,
    })
}

/// Clean, positive and negative embeddings of one layer.
#[derive(Clone, Debug)]
pub struct LayerEmbeddings {
    pub h: DenseMatrix,
    pub h_pos: DenseMatrix,
    pub h_neg: DenseMatrix,
}

/// Weighted gradient of the total loss with respect to one layer's embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingGrads {
    pub h: DenseMatrix,
    pub h_pos: DenseMatrix,
    pub h_neg: DenseMatrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerLoss {
    pub l_node: f64,
    pub l_cluster: f64,
}

/// All loss terms of one evaluation. `l_node` and `l_cluster` are unweighted
/// sums over layers; `total` applies the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_node: f64,
    pub l_cluster: f64,
    pub r_node: f64,
    pub r_cluster: f64,
    pub total: f64,
    pub per_layer: Vec<LayerLoss>,
    pub r_cluster_per_anchor: Vec<f64>,
}

impl LossReport {
    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("l_node", self.l_node),
            ("l_cluster", self.l_cluster),
            ("r_node", self.r_node),
            ("r_cluster", self.r_cluster),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }

    /// One metrics-log line.
    pub fn to_json_line(&self, epoch: usize, phase: &str) -> String {
        serde_json::json!({
            "epoch": epoch,
            "phase": phase,
            "l_node": self.l_node,
            "l_cluster": self.l_cluster,
            "r_node": self.r_node,
            "r_cluster": self.r_cluster,
            "total": self.total,
        })
        .to_string()
    }
}

/// Combined objective over all layers and the gradient of `total` with respect
/// to every embedding matrix. Cluster models may be omitted only when both
/// cluster-level weights are zero.
pub fn total_loss(
    layers: &[LayerEmbeddings],
    models: Option<&[ClusterModel]>,
    weights: &LossWeights,
) -> Result<(LossReport, Vec<EmbeddingGrads>)> {
    total_loss_with_anchors(layers, models, weights, None)
}

/// [`total_loss`] with the cluster-alignment anchors optionally held fixed
/// instead of recomputed from the clean embeddings.
pub fn total_loss_with_anchors(
    layers: &[LayerEmbeddings],
    models: Option<&[ClusterModel]>,
    weights: &LossWeights,
    anchors: Option<&[DenseMatrix]>,
) -> Result<(LossReport, Vec<EmbeddingGrads>)> {
    weights.validate().map_err(|e| Error::contract(e.to_string()))?;
    if layers.is_empty() {
        return Err(Error::contract("total loss over zero layers"));
    }
    if models.is_none() && (weights.lambda_c > 0.0 || weights.mu_c > 0.0) {
        return Err(Error::contract(
            "cluster-level weights are set but no cluster models were given",
        ));
    }
    if let Some(m) = models {
        if m.len() != layers.len() {
            return Err(Error::contract("one cluster model per layer required"));
        }
    }
    let mut report = LossReport::default();
    let mut grads = Vec::with_capacity(layers.len());
    for (v, layer) in layers.iter().enumerate() {
        let node = node_loss(&layer.h, &layer.h_pos, &layer.h_neg)?;
        let mut g = EmbeddingGrads {
            h: node.grad_h.scaled(weights.lambda_n),
            h_pos: node.grad_pos.scaled(weights.lambda_n),
            h_neg: node.grad_neg.scaled(weights.lambda_n),
        };
        let mut layer_loss = LayerLoss {
            l_node: node.loss,
            l_cluster: 0.0,
        };
        if let Some(models) = models {
            let cl = cluster_loss(&layer.h, &models[v])?;
            g.h.axpy(weights.lambda_c, &cl.grad_h)?;
            layer_loss.l_cluster = cl.loss;
        }
        report.l_node += layer_loss.l_node;
        report.l_cluster += layer_loss.l_cluster;
        report.total += weights.lambda_n * layer_loss.l_node + weights.lambda_c * layer_loss.l_cluster;
        report.per_layer.push(layer_loss);
        grads.push(g);
    }

    let h_all: Vec<DenseMatrix> = layers.iter().map(|l| l.h.clone()).collect();
    let h_neg_all: Vec<DenseMatrix> = layers.iter().map(|l| l.h_neg.clone()).collect();
    let rn = align_node(&h_all, &h_neg_all)?;
    report.r_node = rn.loss;
    for (v, g) in grads.iter_mut().enumerate().take(rn.grad_h.len()) {
        g.h.axpy(weights.mu_n, &rn.grad_h[v])?;
        g.h_neg.axpy(weights.mu_n, &rn.grad_neg[v])?;
    }
    if let Some(models) = models {
        let rc = match anchors {
            Some(a) => align_cluster_with_anchors(&h_all, models, a)?,
            None => align_cluster(&h_all, models)?,
        };
        report.r_cluster = rc.loss;
        report.r_cluster_per_anchor = rc.per_anchor;
        for (v, g) in grads.iter_mut().enumerate().take(rc.grad_h.len()) {
            g.h.axpy(weights.mu_c, &rc.grad_h[v])?;
        }
    }
    report.total += weights.mu_n * report.r_node + weights.mu_c * report.r_cluster;
    Ok((report, grads))
}

/// Encoder inputs for one layer in one update: the clean graph, the positive
/// (dropout) view and the shuffled attributes of the negative view, which
/// shares the clean adjacency.
#[derive(Clone, Debug)]
pub struct LayerViews<'a> {
    pub a: &'a SparseMatrix,
    pub x: &'a DenseMatrix,
    pub a_pos: SparseMatrix,
    pub x_pos: DenseMatrix,
    pub x_neg: DenseMatrix,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: LossReport,
    pub grads: Vec<EncoderGrad>,
    /// Clean-graph embeddings at the evaluated parameters.
    pub embeddings: Vec<DenseMatrix>,
}

/// Forward all views, evaluate [`total_loss`] and back-propagate into every
/// encoder. Layers fan out over `threads` workers; the result does not depend
/// on the worker count.
pub fn evaluate(
    params: &[EncoderParams],
    views: &[LayerViews<'_>],
    models: Option<&[ClusterModel]>,
    weights: &LossWeights,
    threads: usize,
) -> Result<Evaluation> {
    evaluate_with_anchors(params, views, models, weights, threads, None)
}

/// [`evaluate`] with optionally fixed cluster-alignment anchors.
pub fn evaluate_with_anchors(
    params: &[EncoderParams],
    views: &[LayerViews<'_>],
    models: Option<&[ClusterModel]>,
    weights: &LossWeights,
    threads: usize,
    anchors: Option<&[DenseMatrix]>,
) -> Result<Evaluation> {
    if params.len() != views.len() {
        return Err(Error::contract("one encoder per layer required"));
    }
    let jobs: Vec<(&EncoderParams, &LayerViews<'_>)> = params.iter().zip(views).collect();
    let forwards = map_ordered(&jobs, threads, |_, (p, view)| -> Result<_> {
        Ok((
            forward_cached(p, view.a, view.x)?,
            forward_cached(p, &view.a_pos, &view.x_pos)?,
            forward_cached(p, view.a, &view.x_neg)?,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let layers: Vec<LayerEmbeddings> = forwards
        .iter()
        .map(|(c, p, n)| LayerEmbeddings {
            h: c.h.clone(),
            h_pos: p.h.clone(),
            h_neg: n.h.clone(),
        })
        .collect();
    let (report, emb_grads) = total_loss_with_anchors(&layers, models, weights, anchors)?;

    let back_jobs: Vec<usize> = (0..views.len()).collect();
    let grads = map_ordered(&back_jobs, threads, |_, &v| -> Result<EncoderGrad> {
        let (clean, pos, neg) = &forwards[v];
        let view = &views[v];
        let g = &emb_grads[v];
        let mut total = backward_cached(clean, view.x, &g.h)?;
        total.add_assign(&backward_cached(pos, &view.x_pos, &g.h_pos)?)?;
        total.add_assign(&backward_cached(neg, &view.x_neg, &g.h_neg)?)?;
        Ok(total)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let embeddings = forwards.into_iter().map(|(c, _, _)| c.h).collect();
    Ok(Evaluation {
        report,
        grads,
        embeddings,
    })
}
