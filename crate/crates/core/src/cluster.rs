//! K-means over layer embeddings and the prototype distribution
//! `p(k | h) = softmax_k(c_kᵀ h / τ)`.
//!
//! Lloyd's algorithm with k-means++ seeding on raw (unnormalized) embeddings.
//! A run stops at an assignment fixpoint or after `max_iter` updates; the best
//! of `restarts` runs by inertia is kept. An empty cluster takes the point that
//! lies farthest from its current center (among clusters with more than one
//! member). On return every center is the mean of its assigned rows.

use crate::error::{Error, Result};
use crate::numkit::{dot, softmax, DenseMatrix, Rng};

pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    centers: DenseMatrix,
    assignments: Vec<usize>,
    tau: f64,
    inertia: f64,
}

impl ClusterModel {
    /// Hand-built model; inertia is reported as 0.
    pub fn new(centers: DenseMatrix, assignments: Vec<usize>, tau: f64) -> Result<Self> {
        if centers.rows() == 0 {
            return Err(Error::contract("a cluster model needs at least one center"));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= centers.rows()) {
            return Err(Error::contract(format!(
                "assignment {bad} out of range for {} clusters",
                centers.rows()
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::contract(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            centers,
            assignments,
            tau,
            inertia: 0.0,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::contract(format!("tau must be positive, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn centers(&self) -> &DenseMatrix {
        &self.centers
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    /// Logits `c_kᵀ h / τ` for one embedding row.
    pub fn logits(&self, h_row: &[f64]) -> Vec<f64> {
        self.centers.row_iter().map(|c| dot(c, h_row) / self.tau).collect()
    }
}

/// `p(k | h)` over the model's centers.
pub fn assign_distribution(h_row: &[f64], model: &ClusterModel) -> Vec<f64> {
    assert_eq!(h_row.len(), model.dim(), "embedding and center dims differ");
    softmax(&model.logits(h_row), 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tau: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iter: 300,
            tau: DEFAULT_TAU,
        }
    }
}

/// One Lloyd run, with the inertia measured after each assignment step.
#[derive(Clone, Debug)]
pub struct LloydRun {
    pub centers: DenseMatrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.row_iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn kmeans_pp(h: &DenseMatrix, k: usize, rng: &mut Rng) -> DenseMatrix {
    let n = h.rows();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = h.row_iter().map(|r| sq_dist(r, h.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(h.row(i), h.row(next)));
        }
    }
    h.select_rows(&chosen)
}

/// Recomputes centers as means; empty clusters steal the farthest point first.
fn update_centers(h: &DenseMatrix, k: usize, centers: &mut DenseMatrix, assignments: &mut [usize]) {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] > 1 {
                let d = sq_dist(h.row(i), centers.row(a));
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        if let Some(i) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
        }
    }
    let mut sums = DenseMatrix::zeros(k, h.cols());
    for (i, &a) in assignments.iter().enumerate() {
        for (s, v) in sums.row_mut(a).iter_mut().zip(h.row(i)) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let inv = 1.0 / count as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
}

fn inertia_of(h: &DenseMatrix, centers: &DenseMatrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(h.row(i), centers.row(a)))
        .sum()
}

/// A single seeded Lloyd run.
pub fn lloyd(h: &DenseMatrix, k: usize, max_iter: usize, rng: &mut Rng) -> Result<LloydRun> {
    if h.rows() == 0 {
        return Err(Error::contract("k-means needs at least one point"));
    }
    if k == 0 || k > h.rows() {
        return Err(Error::contract(format!("k = {k} must lie in [1, {}]", h.rows())));
    }
    let mut centers = kmeans_pp(h, k, rng);
    let mut assignments: Vec<usize> = h.row_iter().map(|r| nearest(r, &centers).0).collect();
    let mut trace = vec![inertia_of(h, &centers, &assignments)];
    let mut iterations = 0;
    while iterations < max_iter {
        update_centers(h, k, &mut centers, &mut assignments);
        iterations += 1;
        let next: Vec<usize> = h.row_iter().map(|r| nearest(r, &centers).0).collect();
        let changed = next != assignments;
        assignments = next;
        trace.push(inertia_of(h, &centers, &assignments));
        if !changed {
            break;
        }
    }
    // leave centers consistent with the final assignment
    update_centers(h, k, &mut centers, &mut assignments);
    let inertia = inertia_of(h, &centers, &assignments);
    Ok(LloydRun {
        centers,
        assignments,
        inertia,
        inertia_trace: trace,
        iterations,
    })
}

pub fn kmeans_with(h: &DenseMatrix, k: usize, opts: &KMeansOptions, rng: &mut Rng) -> Result<ClusterModel> {
    if opts.restarts == 0 {
        return Err(Error::contract("k-means needs at least one restart"));
    }
    let mut best: Option<LloydRun> = None;
    for _ in 0..opts.restarts {
        let run = lloyd(h, k, opts.max_iter, rng)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let mut model = ClusterModel::new(best.centers, best.assignments, opts.tau)?;
    model.inertia = best.inertia;
    Ok(model)
}

/// K-means with default options (3 restarts, 300 iterations, τ = 0.2).
pub fn kmeans(h: &DenseMatrix, k: usize, rng: &mut Rng) -> Result<ClusterModel> {
    kmeans_with(h, k, &KMeansOptions::default(), rng)
}
