//! Multiplex graph data model.
//!
//! A [`MultiplexGraph`] is a set of relation layers over one shared node set
//! with one shared attribute matrix. Each [`Layer`] keeps its raw symmetric
//! adjacency and a cached normalized copy `D^{-1/2} A D^{-1/2}` (no self-loops
//! are added; zero-degree rows stay zero).

mod bundle;
mod synth;

pub use bundle::{load_bundle, save_bundle, AttrFormat, BundleMeta, LayerMeta};
pub use synth::{generate_synthetic, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, SparseMatrix};

/// Number of clusters used for a layer when neither the bundle nor labels say otherwise.
pub const DEFAULT_K: usize = 10;

/// Symmetric degree normalization `D^{-1/2} A D^{-1/2}`, D = row sums of `a`.
pub fn normalize_adjacency(a: &SparseMatrix) -> Result<SparseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::contract("adjacency must be square"));
    }
    if a.values().iter().any(|&v| v < 0.0) {
        return Err(Error::contract("adjacency has a negative weight"));
    }
    let inv_sqrt: Vec<f64> = a
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut values = Vec::with_capacity(a.nnz());
    for r in 0..a.rows() {
        for (c, v) in a.row(r) {
            values.push(v * inv_sqrt[r] * inv_sqrt[c]);
        }
    }
    a.with_values(values)
}

/// One homogeneous relation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    name: String,
    adjacency_raw: SparseMatrix,
    adjacency_norm: SparseMatrix,
    k_clusters: usize,
}

impl Layer {
    pub fn new(name: impl Into<String>, adjacency_raw: SparseMatrix, k_clusters: usize) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(['/', '\\', '\t', '\n', '=']) {
            return Err(Error::contract(format!("invalid layer name {name:?}")));
        }
        if k_clusters == 0 {
            return Err(Error::contract(format!("layer {name}: k_clusters must be at least 1")));
        }
        if !adjacency_raw.is_symmetric() {
            return Err(Error::contract(format!("layer {name}: adjacency is not symmetric")));
        }
        let adjacency_norm = normalize_adjacency(&adjacency_raw)?;
        Ok(Self {
            name,
            adjacency_raw,
            adjacency_norm,
            k_clusters,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn adjacency_raw(&self) -> &SparseMatrix {
        &self.adjacency_raw
    }

    pub fn adjacency_norm(&self) -> &SparseMatrix {
        &self.adjacency_norm
    }

    pub fn k_clusters(&self) -> usize {
        self.k_clusters
    }
}

/// Train/validation/test node ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.val).chain(&self.test).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiplexGraph {
    n_nodes: usize,
    layers: Vec<Layer>,
    attributes: DenseMatrix,
    labels: Option<Vec<Option<usize>>>,
    split: Option<Split>,
}

impl MultiplexGraph {
    pub fn new(
        layers: Vec<Layer>,
        attributes: DenseMatrix,
        labels: Option<Vec<Option<usize>>>,
        split: Option<Split>,
    ) -> Result<Self> {
        let n = attributes.rows();
        if layers.is_empty() {
            return Err(Error::contract("a multiplex graph needs at least one layer"));
        }
        for layer in &layers {
            if layer.adjacency_raw.rows() != n {
                return Err(Error::contract(format!(
                    "layer {} is {}x{}, expected {n}x{n}",
                    layer.name,
                    layer.adjacency_raw.rows(),
                    layer.adjacency_raw.cols()
                )));
            }
        }
        for (i, a) in layers.iter().enumerate() {
            if layers[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::contract(format!("duplicate layer name {}", a.name)));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::contract("labels must have one slot per node"));
            }
        }
        if let Some(split) = &split {
            let mut seen = vec![false; n];
            for id in split.all() {
                if id >= n {
                    return Err(Error::contract(format!("split node {id} out of range")));
                }
                if std::mem::replace(&mut seen[id], true) {
                    return Err(Error::contract(format!("node {id} appears in more than one split set")));
                }
                if let Some(labels) = &labels {
                    if labels[id].is_none() {
                        return Err(Error::contract(format!("split node {id} has no label")));
                    }
                }
            }
        }
        Ok(Self {
            n_nodes: n,
            layers,
            attributes,
            labels,
            split,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn attributes(&self) -> &DenseMatrix {
        &self.attributes
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    /// Number of classes (largest class id + 1), if labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().flatten().max().map(|m| m + 1))
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().flatten().count())
    }

    /// Default cluster count: the class count when labels exist, else [`DEFAULT_K`].
    pub fn default_k(&self) -> usize {
        self.n_classes().unwrap_or(DEFAULT_K)
    }

    /// Overrides the cluster count of the named layer.
    pub fn set_k_clusters(&mut self, layer: &str, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::contract(format!("layer {layer}: k_clusters must be at least 1")));
        }
        let l = self
            .layers
            .iter_mut()
            .find(|l| l.name == layer)
            .ok_or_else(|| Error::Config(format!("unknown layer {layer:?}")))?;
        l.k_clusters = k;
        Ok(())
    }
}
