//! Downstream evaluation of frozen embeddings: node classification (softmax
//! regression, Macro/Micro-F1), node clustering (K-means, NMI) and similarity
//! search (Sim@5).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::graphdata::Split;
use crate::numkit::{cosine, softmax, DenseMatrix, Rng};

pub const CLASSIFY_ITERS: usize = 300;
pub const CLASSIFY_STEP: f64 = 0.1;
pub const CLASSIFY_L2: f64 = 1e-4;
pub const SIM_TOP: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<f64>,
}

/// F1 from a square confusion matrix (rows = true class, columns = predicted).
/// A class with no support and no predictions scores 0.
pub fn f1_from_confusion(confusion: &[Vec<usize>]) -> Result<F1Scores> {
    let c = confusion.len();
    if c == 0 || confusion.iter().any(|r| r.len() != c) {
        return Err(Error::Eval("confusion matrix must be square and non-empty".into()));
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let per_class: Vec<f64> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let fn_ = confusion[k].iter().sum::<usize>() - tp;
            let fp = (0..c).map(|r| confusion[r][k]).sum::<usize>() - tp;
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect();
    Ok(F1Scores {
        macro_f1: per_class.iter().sum::<f64>() / c as f64,
        micro_f1: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class,
    })
}

/// Multinomial logistic regression on the train split, F1 on the test split.
/// The returned per-class scores are indexed by the sorted class labels.
pub fn classify(h: &DenseMatrix, labels: &[Option<usize>], split: &Split) -> Result<(F1Scores, Vec<usize>)> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Eval(
            "classification needs non-empty train and test splits".into(),
        ));
    }
    let label_of = |i: usize| -> Result<usize> {
        labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Eval(format!("split node {i} has no label")))
    };
    let train_y = split.train.iter().map(|&i| label_of(i)).collect::<Result<Vec<_>>>()?;
    let test_y = split.test.iter().map(|&i| label_of(i)).collect::<Result<Vec<_>>>()?;
    let train_classes: BTreeSet<usize> = train_y.iter().copied().collect();
    if let Some(c) = test_y.iter().find(|c| !train_classes.contains(c)) {
        return Err(Error::Eval(format!("class {c} has no training nodes")));
    }
    let classes: Vec<usize> = train_classes.into_iter().collect();
    let index = |y: usize| classes.binary_search(&y).unwrap();

    let x_train = h.select_rows(&split.train);
    let weights = fit_softmax_regression(
        &x_train,
        &train_y.iter().map(|&y| index(y)).collect::<Vec<_>>(),
        classes.len(),
    );

    let c = classes.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&i, &y) in split.test.iter().zip(&test_y) {
        let scores = predict_scores(&weights, h.row(i));
        // first maximum wins, so exact ties go to the smallest class index
        let pred = scores
            .iter()
            .enumerate()
            .fold(0, |best, (k, &s)| if s > scores[best] { k } else { best });
        confusion[index(y)][pred] += 1;
    }
    Ok((f1_from_confusion(&confusion)?, classes))
}

struct Softmax {
    w: DenseMatrix,
    b: Vec<f64>,
}

fn predict_scores(m: &Softmax, x: &[f64]) -> Vec<f64> {
    (0..m.w.cols())
        .map(|k| m.b[k] + x.iter().enumerate().map(|(j, xj)| xj * m.w.get(j, k)).sum::<f64>())
        .collect()
}

/// Full-batch gradient descent on mean cross-entropy plus `λ/2 ‖W‖²`; the bias
/// is not penalized. Zero initialization keeps the fit deterministic.
fn fit_softmax_regression(x: &DenseMatrix, y: &[usize], c: usize) -> Softmax {
    let (n, d) = x.shape();
    let mut m = Softmax {
        w: DenseMatrix::zeros(d, c),
        b: vec![0.0; c],
    };
    for _ in 0..CLASSIFY_ITERS {
        let mut gw = m.w.scaled(CLASSIFY_L2);
        let mut gb = vec![0.0; c];
        for i in 0..n {
            let xi = x.row(i);
            let mut p = softmax(&predict_scores(&m, xi), 1.0);
            p[y[i]] -= 1.0;
            for k in 0..c {
                gb[k] += p[k] / n as f64;
            }
            for (j, &xj) in xi.iter().enumerate() {
                let row = gw.row_mut(j);
                for k in 0..c {
                    row[k] += p[k] * xj / n as f64;
                }
            }
        }
        m.w.axpy(-CLASSIFY_STEP, &gw).expect("same shape");
        for (b, g) in m.b.iter_mut().zip(&gb) {
            *b -= CLASSIFY_STEP * g;
        }
    }
    m
}

/// `I(a; b) / sqrt(H(a) H(b))` with natural logs; 0 when either side has zero entropy.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Eval("partitions differ in length".into()));
    }
    let n = pred.len();
    if n == 0 {
        return Ok(0.0);
    }
    let ka = pred.iter().max().unwrap() + 1;
    let kb = truth.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0usize; kb]; ka];
    for (&a, &b) in pred.iter().zip(truth) {
        joint[a][b] += 1;
    }
    let nf = n as f64;
    let ra: Vec<usize> = joint.iter().map(|r| r.iter().sum()).collect();
    let rb: Vec<usize> = (0..kb).map(|b| joint.iter().map(|r| r[b]).sum()).collect();
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (entropy(&ra), entropy(&rb));
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for a in 0..ka {
        for b in 0..kb {
            let c = joint[a][b];
            if c > 0 {
                let pab = c as f64 / nf;
                mi += pab * (pab * nf * nf / (ra[a] as f64 * rb[b] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn labeled(labels: &[Option<usize>]) -> (Vec<usize>, Vec<usize>) {
    labels.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).unzip()
}

/// K-means over the labeled nodes' embeddings, scored by NMI against their labels.
pub fn cluster_eval(h: &DenseMatrix, labels: &[Option<usize>], k: usize, rng: &mut Rng) -> Result<f64> {
    if k == 0 {
        return Err(Error::Eval("k must be at least 1".into()));
    }
    let (nodes, truth) = labeled(labels);
    if nodes.is_empty() {
        return Err(Error::Eval("clustering evaluation needs labels".into()));
    }
    let model = kmeans(&h.select_rows(&nodes), k, rng)?;
    nmi(model.assignments(), &truth)
}

/// Mean fraction of each labeled node's top-5 cosine neighbours (among labeled
/// nodes, self excluded, ties to the smaller id) that share its label.
pub fn sim_search(h: &DenseMatrix, labels: &[Option<usize>]) -> Result<f64> {
    let (nodes, truth) = labeled(labels);
    if nodes.len() <= SIM_TOP {
        return Err(Error::Eval(format!(
            "similarity search needs at least {} labeled nodes",
            SIM_TOP + 1
        )));
    }
    let mut total = 0.0;
    for (a, &i) in nodes.iter().enumerate() {
        let mut ranked: Vec<(f64, usize)> = nodes
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .map(|(b, &j)| (cosine(h.row(i), h.row(j)), b))
            .collect();
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(nodes[x.1].cmp(&nodes[y.1])));
        let hits = ranked[..SIM_TOP].iter().filter(|(_, b)| truth[*b] == truth[a]).count();
        total += hits as f64 / SIM_TOP as f64;
    }
    Ok(total / nodes.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Cluster,
    Simsearch,
    All,
}

impl Task {
    fn includes(self, other: Task) -> bool {
        self == Task::All || self == other
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub class: usize,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: Option<f64>,
    pub micro_f1: Option<f64>,
    pub nmi: Option<f64>,
    pub sim_at_5: Option<f64>,
    pub per_class_f1: Vec<ClassF1>,
    pub seed: u64,
    pub k: Option<usize>,
    pub n_labeled: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Runs the requested tasks. `k` defaults to the number of distinct labels.
pub fn evaluate(
    h: &DenseMatrix,
    labels: &[Option<usize>],
    split: Option<&Split>,
    task: Task,
    k: Option<usize>,
    seed: u64,
) -> Result<EvalReport> {
    if labels.len() != h.rows() {
        return Err(Error::Eval(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            h.rows()
        )));
    }
    let n_labeled = labels.iter().flatten().count();
    if n_labeled == 0 {
        return Err(Error::Eval("evaluation needs labels".into()));
    }
    let mut report = EvalReport {
        macro_f1: None,
        micro_f1: None,
        nmi: None,
        sim_at_5: None,
        per_class_f1: Vec::new(),
        seed,
        k: None,
        n_labeled,
        n_train: split.map_or(0, |s| s.train.len()),
        n_val: split.map_or(0, |s| s.val.len()),
        n_test: split.map_or(0, |s| s.test.len()),
    };
    if task.includes(Task::Classify) {
        let split = split.ok_or_else(|| Error::Eval("classification needs a train/test split".into()))?;
        let (f1, classes) = classify(h, labels, split)?;
        report.macro_f1 = Some(f1.macro_f1);
        report.micro_f1 = Some(f1.micro_f1);
        report.per_class_f1 = classes
            .into_iter()
            .zip(f1.per_class)
            .map(|(class, f1)| ClassF1 { class, f1 })
            .collect();
    }
    if task.includes(Task::Cluster) {
        let k = k.unwrap_or_else(|| labels.iter().flatten().collect::<BTreeSet<_>>().len());
        report.k = Some(k);
        report.nmi = Some(cluster_eval(h, labels, k, &mut Rng::new(seed))?);
    }
    if task.includes(Task::Simsearch) {
        report.sim_at_5 = Some(sim_search(h, labels)?);
    }
    Ok(report)
}

impl EvalReport {
    /// Fixed-width metric table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:<10}{:>8}", "Task", "Metric", "Value");
        let rows = [
            ("classification", "Macro-F1", self.macro_f1),
            ("classification", "Micro-F1", self.micro_f1),
            ("clustering", "NMI", self.nmi),
            ("similarity", "Sim@5", self.sim_at_5),
        ];
        for (task, metric, value) in rows {
            if let Some(v) = value {
                let _ = writeln!(out, "{task:<16}{metric:<10}{v:>8.4}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_computed() {
        let s = f1_from_confusion(&[vec![5, 1], vec![2, 4]]).unwrap();
        assert!((s.per_class[0] - 10.0 / 13.0).abs() < 1e-15);
        assert!((s.per_class[1] - 8.0 / 11.0).abs() < 1e-15);
        assert!((s.macro_f1 - 0.748_251_748).abs() < 1e-8);
        assert!((s.micro_f1 - 9.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn nmi_edge_cases() {
        let t = [0, 0, 1, 1, 2, 2];
        assert!((nmi(&[2, 2, 0, 0, 1, 1], &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0; 6], &t).unwrap(), 0.0);
    }

    #[test]
    fn separable_two_class() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| if i % 2 == 0 { vec![1.0, 1.0] } else { vec![-1.0, -1.0] })
            .collect();
        let h = DenseMatrix::from_rows(&rows).unwrap();
        let labels: Vec<Option<usize>> = (0..20).map(|i| Some(i % 2)).collect();
        let split = Split {
            train: (0..6).collect(),
            val: vec![],
            test: (6..20).collect(),
        };
        let (f1, classes) = classify(&h, &labels, &split).unwrap();
        assert_eq!(classes, vec![0, 1]);
        assert_eq!((f1.macro_f1, f1.micro_f1), (1.0, 1.0));
    }

    #[test]
    fn missing_train_class_is_named() {
        let h = DenseMatrix::zeros(4, 2);
        let labels = vec![Some(0), Some(0), Some(1), Some(7)];
        let split = Split {
            train: vec![0, 2],
            val: vec![],
            test: vec![1, 3],
        };
        let err = classify(&h, &labels, &split).unwrap_err().to_string();
        assert!(err.contains("class 7"), "{err}");
    }

    #[test]
    fn sim_search_single_class() {
        let h = DenseMatrix::from_fn(7, 3, |i, j| (i * 3 + j) as f64 + 1.0);
        assert_eq!(sim_search(&h, &[Some(4); 7]).unwrap(), 1.0);
        assert!(sim_search(
            &h,
            &[Some(4); 5].iter().copied().chain([None, None]).collect::<Vec<_>>()
        )
        .is_err());
    }
}
