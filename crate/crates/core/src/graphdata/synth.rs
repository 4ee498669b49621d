//! Planted-partition multiplex graphs.
//!
//! Nodes are split into contiguous equal-size communities shared by every
//! layer. Each layer is an independent stochastic block model draw. Node
//! attributes are a one-hot-like community centroid (dimension `j` is hot for
//! community `j % n_communities`) plus Gaussian noise. Draw order: attributes,
//! then layers in order, then the split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, Rng, SparseMatrix};

use super::{Layer, MultiplexGraph, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub n_layers: usize,
    pub n_communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub attr_dim: usize,
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_nodes: 200,
            n_layers: 2,
            n_communities: 3,
            p_in: 0.1,
            p_out: 0.01,
            attr_dim: 32,
            noise: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_in > 0.0 && self.p_in <= 1.0) || !(self.p_out >= 0.0 && self.p_out < 1.0) {
            return Err(Error::contract("p_in must lie in (0, 1] and p_out in [0, 1)"));
        }
        if self.p_in <= self.p_out {
            return Err(Error::contract(format!(
                "p_in ({}) must exceed p_out ({})",
                self.p_in, self.p_out
            )));
        }
        if self.n_communities == 0 || self.n_communities > self.n_nodes {
            return Err(Error::contract("need 1 <= n_communities <= n_nodes"));
        }
        if self.n_layers == 0 {
            return Err(Error::contract("need at least one layer"));
        }
        if self.attr_dim < self.n_communities {
            return Err(Error::contract("attr_dim must be at least n_communities"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::contract("noise must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn community_of(&self, node: usize) -> usize {
        node * self.n_communities / self.n_nodes
    }
}

pub fn generate_synthetic(spec: &SynthSpec, rng: &mut Rng) -> Result<MultiplexGraph> {
    spec.validate()?;
    let n = spec.n_nodes;
    let c = spec.n_communities;
    let community: Vec<usize> = (0..n).map(|i| spec.community_of(i)).collect();

    let attributes = DenseMatrix::from_fn(n, spec.attr_dim, |i, j| {
        let centroid = if j % c == community[i] { 1.0 } else { 0.0 };
        centroid + spec.noise * rng.normal()
    });

    let mut layers = Vec::with_capacity(spec.n_layers);
    for v in 0..spec.n_layers {
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if community[i] == community[j] {
                    spec.p_in
                } else {
                    spec.p_out
                };
                if rng.bernoulli(p) {
                    triplets.push((i, j, 1.0));
                    triplets.push((j, i, 1.0));
                }
            }
        }
        let adjacency = SparseMatrix::from_triplets(n, n, &triplets)?;
        layers.push(Layer::new(format!("layer{v}"), adjacency, c)?);
    }

    // stratified 10/10/80 so every community reaches the training set
    let mut split = Split::default();
    for k in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|&i| community[i] == k).collect();
        rng.shuffle(&mut members);
        let m = members.len();
        let n_train = ((m as f64 * 0.1).round() as usize).clamp(1, m);
        let n_val = ((m as f64 * 0.1).round() as usize).min(m - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();

    let labels = community.into_iter().map(Some).collect();
    MultiplexGraph::new(layers, attributes, Some(labels), Some(split))
}
