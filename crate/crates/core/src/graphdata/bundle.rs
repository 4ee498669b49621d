//! Bundle directory I/O.
//!
//! ```text
//! meta.json          {"n_nodes": N, "attr_dim": d_x, "layers": [{"name": .., "k_clusters": ..}], "attr_format": "tsv"|"bin"}
//! attributes.tsv     N lines of d_x tab-separated floats   (or attributes.bin)
//! edges-<name>.tsv   "src<TAB>dst[<TAB>weight]", 0-based, weight defaults to 1
//! labels.tsv         optional "node<TAB>class"
//! split.json         optional {"train": [..], "val": [..], "test": [..]}
//! ```
//!
//! Edges are undirected. Repeats of the same directed pair collapse to their
//! maximum weight and the result is mirrored; a pair listed in both
//! directions with different weights is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{read_dense, write_dense, DenseMatrix, Precision, SparseMatrix};

use super::{Layer, MultiplexGraph, Split};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrFormat {
    #[default]
    Tsv,
    Bin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_clusters: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub n_nodes: usize,
    pub attr_dim: usize,
    pub layers: Vec<LayerMeta>,
    #[serde(default)]
    pub attr_format: AttrFormat,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::load(path, 0, format!("cannot read: {e}")))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_node(field: &str, n: usize, path: &Path, line: usize) -> Result<usize> {
    let id: usize = field
        .trim()
        .parse()
        .map_err(|_| Error::load(path, line, format!("invalid node id {field:?}")))?;
    if id >= n {
        return Err(Error::load(path, line, format!("node id {id} >= n_nodes {n}")));
    }
    Ok(id)
}

fn load_attributes_tsv(path: &Path, n: usize, d: usize) -> Result<DenseMatrix> {
    let text = read_text(path)?;
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (line, content) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))) {
        if content.is_empty() {
            continue;
        }
        if rows == n {
            return Err(Error::load(path, line, format!("more than {n} attribute rows")));
        }
        let before = data.len();
        for field in content.split('\t') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::load(path, line, format!("non-numeric attribute {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::load(path, line, format!("non-finite attribute {field:?}")));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::load(
                path,
                line,
                format!("expected {d} attributes, found {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::load(
            path,
            0,
            format!("expected {n} attribute rows, found {rows}"),
        ));
    }
    DenseMatrix::from_vec(n, d, data).map_err(|e| Error::load(path, 0, e.to_string()))
}

fn load_edges(path: &Path, n: usize) -> Result<SparseMatrix> {
    let text = read_text(path)?;
    // directed pair -> (max weight, first line seen)
    let mut directed: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for (line, content) in data_lines(&text) {
        let fields: Vec<&str> = content.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::load(path, line, "expected src<TAB>dst[<TAB>weight]"));
        }
        let src = parse_node(fields[0], n, path, line)?;
        let dst = parse_node(fields[1], n, path, line)?;
        let weight = match fields.get(2) {
            Some(w) => w
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::load(path, line, format!("non-numeric weight {w:?}")))?,
            None => 1.0,
        };
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::load(
                path,
                line,
                format!("weight must be finite and non-negative, got {weight}"),
            ));
        }
        directed
            .entry((src, dst))
            .and_modify(|(w, _)| *w = w.max(weight))
            .or_insert((weight, line));
    }
    let mut triplets = Vec::with_capacity(directed.len() * 2);
    for (&(i, j), &(w, line)) in &directed {
        if i == j {
            triplets.push((i, i, w));
            continue;
        }
        match directed.get(&(j, i)) {
            Some(&(w_rev, line_rev)) => {
                if w_rev != w {
                    return Err(Error::load(
                        path,
                        line.max(line_rev),
                        format!("asymmetric edge weight conflict for {i}-{j}: {w} vs {w_rev}"),
                    ));
                }
                triplets.push((i, j, w));
            }
            None => {
                triplets.push((i, j, w));
                triplets.push((j, i, w));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets).map_err(|e| Error::load(path, 0, e.to_string()))
}

fn load_labels(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let text = read_text(path)?;
    let mut labels = vec![None; n];
    for (line, content) in data_lines(&text) {
        let fields: Vec<&str> = content.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::load(path, line, "expected node<TAB>class"));
        }
        let node = parse_node(fields[0], n, path, line)?;
        let class: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::load(path, line, format!("invalid class {:?}", fields[1])))?;
        if labels[node].replace(class).is_some() {
            return Err(Error::load(path, line, format!("node {node} labeled twice")));
        }
    }
    Ok(labels)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.line(), e.to_string()))
}

pub fn edges_file_name(layer: &str) -> String {
    format!("edges-{layer}.tsv")
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<MultiplexGraph> {
    let meta_path = dir.join("meta.json");
    let meta: BundleMeta = parse_json(&meta_path)?;
    if meta.layers.is_empty() {
        return Err(Error::load(&meta_path, 0, "no layers listed"));
    }
    let n = meta.n_nodes;
    let attributes = match meta.attr_format {
        AttrFormat::Tsv => load_attributes_tsv(&dir.join("attributes.tsv"), n, meta.attr_dim)?,
        AttrFormat::Bin => {
            let path = dir.join("attributes.bin");
            let m = read_dense(&path).map_err(|e| match e {
                Error::Io { source, .. } => Error::load(&path, 0, format!("cannot read: {source}")),
                other => other,
            })?;
            if m.shape() != (n, meta.attr_dim) {
                return Err(Error::load(
                    &path,
                    0,
                    format!("shape {:?} does not match meta ({n}, {})", m.shape(), meta.attr_dim),
                ));
            }
            m
        }
    };
    let labels_path = dir.join("labels.tsv");
    let labels = labels_path.exists().then(|| load_labels(&labels_path, n)).transpose()?;
    let split_path = dir.join("split.json");
    let split: Option<Split> = split_path.exists().then(|| parse_json(&split_path)).transpose()?;

    let default_k = labels
        .as_ref()
        .and_then(|l| l.iter().flatten().max().map(|m| m + 1))
        .unwrap_or(super::DEFAULT_K);
    let mut layers = Vec::with_capacity(meta.layers.len());
    for lm in &meta.layers {
        let path = dir.join(edges_file_name(&lm.name));
        let adjacency = load_edges(&path, n)?;
        let k = lm.k_clusters.unwrap_or(default_k);
        layers.push(Layer::new(&lm.name, adjacency, k).map_err(|e| Error::load(&meta_path, 0, e.to_string()))?);
    }
    MultiplexGraph::new(layers, attributes, labels, split).map_err(|e| {
        let file: PathBuf = if split_path.exists() { split_path } else { meta_path };
        Error::load(file, 0, e.to_string())
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `graph` as a bundle directory (created if missing). Edges are written
/// once per undirected pair with explicit weights.
pub fn save_bundle(graph: &MultiplexGraph, dir: &Path, attr_format: AttrFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = BundleMeta {
        n_nodes: graph.n_nodes(),
        attr_dim: graph.attr_dim(),
        layers: graph
            .layers()
            .iter()
            .map(|l| LayerMeta {
                name: l.name().to_string(),
                k_clusters: Some(l.k_clusters()),
            })
            .collect(),
        attr_format,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_text(&dir.join("meta.json"), &(meta_json + "\n"))?;

    match attr_format {
        AttrFormat::Tsv => {
            let mut out = String::new();
            for row in graph.attributes().row_iter() {
                let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&fields.join("\t"));
                out.push('\n');
            }
            write_text(&dir.join("attributes.tsv"), &out)?;
        }
        AttrFormat::Bin => write_dense(&dir.join("attributes.bin"), graph.attributes(), Precision::F64)?,
    }

    for layer in graph.layers() {
        let a = layer.adjacency_raw();
        let mut out = String::new();
        for i in 0..a.rows() {
            for (j, w) in a.row(i).filter(|&(j, _)| j >= i) {
                out.push_str(&format!("{i}\t{j}\t{w}\n"));
            }
        }
        write_text(&dir.join(edges_file_name(layer.name())), &out)?;
    }

    if let Some(labels) = graph.labels() {
        let mut out = String::new();
        for (node, class) in labels.iter().enumerate() {
            if let Some(c) = class {
                out.push_str(&format!("{node}\t{c}\n"));
            }
        }
        write_text(&dir.join("labels.tsv"), &out)?;
    }
    if let Some(split) = graph.split() {
        let json = serde_json::to_string(split).expect("split serializes");
        write_text(&dir.join("split.json"), &(json + "\n"))?;
    }
    Ok(())
}
