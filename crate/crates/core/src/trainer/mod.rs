//! Training orchestration.
//!
//! Warm-up runs full-batch updates on the node-level terms only. Training then
//! alternates an E-step (K-means on clean-graph embeddings of every layer, every
//! `cluster_every` epochs) with an M-step each epoch (fresh positive/negative
//! views, total loss, one Adam step per encoder). Early stopping watches the
//! total training loss; the parameters that produced the best loss are kept.
//!
//! Randomness is split into named streams derived from the run seed and the
//! global epoch counter, so a run is a pure function of `(graph, config)`.

mod adam;
mod checkpoint;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_with, ClusterModel, KMeansOptions, DEFAULT_TAU};
use crate::encoder::{forward, EncoderParams};
use crate::error::{Error, Result};
use crate::graphdata::MultiplexGraph;
use crate::numkit::{mean_of, DenseMatrix, Rng};
use crate::objective::{evaluate, LayerViews, LossReport, LossWeights};
use crate::parallel::{map_ordered, threads_from_env};
use crate::transform::{negative_transform, positive_transform, TransformConfig};

const STREAM_INIT: u64 = 1;
const STREAM_POSITIVE: u64 = 2;
const STREAM_NEGATIVE: u64 = 3;
const STREAM_KMEANS: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Embedding dimension.
    pub d: usize,
    pub p_drop: f64,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    /// Epochs between K-means E-steps.
    pub cluster_every: usize,
    pub patience: usize,
    pub tau: f64,
    /// Per-layer cluster counts; layers not listed keep the bundle's value.
    pub k: BTreeMap<String, usize>,
    pub seed: u64,
    /// Forces single-threaded execution regardless of `XGOAL_THREADS`.
    pub deterministic: bool,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 128,
            p_drop: 0.5,
            learning_rate: 0.001,
            warmup_epochs: 500,
            max_epochs: 10_000,
            cluster_every: 5,
            patience: 100,
            tau: DEFAULT_TAU,
            k: BTreeMap::new(),
            seed: 0,
            deterministic: false,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.cluster_every == 0 {
            return Err(Error::Config("cluster_every must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        TransformConfig::new(self.p_drop, self.seed).map_err(|e| Error::Config(e.to_string()))?;
        if let Some((name, _)) = self.k.iter().find(|(_, &k)| k == 0) {
            return Err(Error::Config(format!("k for layer {name} must be at least 1")));
        }
        self.weights.validate()
    }

    fn threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            threads_from_env()
        }
    }

    /// Resolved per-layer cluster counts for `graph`.
    pub fn resolve_k(&self, graph: &MultiplexGraph) -> Result<Vec<usize>> {
        if let Some(name) = self.k.keys().find(|name| graph.layer(name).is_none()) {
            return Err(Error::Config(format!("--k names unknown layer {name:?}")));
        }
        let ks: Vec<usize> = graph
            .layers()
            .iter()
            .map(|l| self.k.get(l.name()).copied().unwrap_or(l.k_clusters()))
            .collect();
        if let Some(k) = ks.iter().find(|&&k| k > graph.n_nodes()) {
            return Err(Error::Config(format!("k = {k} exceeds the {} nodes", graph.n_nodes())));
        }
        Ok(ks)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Vec<EncoderParams>,
    pub optimizers: Vec<Adam>,
    pub models: Option<Vec<ClusterModel>>,
    /// Epochs run so far, warm-up included.
    pub epoch: usize,
    pub best_total: f64,
    pub epochs_since_best: usize,
}

/// Per-layer embeddings of the clean graph plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub names: Vec<String>,
    pub layers: Vec<DenseMatrix>,
    pub fused: DenseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Train,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Train => "train",
        }
    }
}

pub struct EpochLog<'a> {
    pub epoch: usize,
    pub phase: Phase,
    pub report: &'a LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub embeddings: EmbeddingSet,
    /// Training (post warm-up) epochs actually run.
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Mean of the layer embeddings.
pub fn fuse(embeddings: &[DenseMatrix]) -> Result<DenseMatrix> {
    mean_of(embeddings)
}

/// Clean-graph forward pass of every layer encoder.
pub fn embed(graph: &MultiplexGraph, params: &[EncoderParams], names: &[String]) -> Result<EmbeddingSet> {
    if params.len() != graph.n_layers() {
        return Err(Error::contract("one encoder per layer required"));
    }
    let layers = graph
        .layers()
        .iter()
        .zip(params)
        .map(|(l, p)| forward(p, l.adjacency_norm(), graph.attributes()))
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(&layers)?;
    Ok(EmbeddingSet {
        names: names.to_vec(),
        layers,
        fused,
    })
}

pub struct Trainer<'g> {
    graph: &'g MultiplexGraph,
    config: TrainConfig,
    ks: Vec<usize>,
    threads: usize,
    base: Rng,
    state: TrainState,
}

impl<'g> Trainer<'g> {
    /// Fresh encoders from the run seed (one independent stream per layer).
    pub fn new(graph: &'g MultiplexGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let base = Rng::new(config.seed);
        let params: Vec<EncoderParams> = (0..graph.n_layers())
            .map(|v| {
                EncoderParams::init(
                    graph.attr_dim(),
                    config.d,
                    &mut base.derive(STREAM_INIT).derive(v as u64),
                )
            })
            .collect();
        let optimizers = params
            .iter()
            .map(|p| Adam::new(config.learning_rate, p.n_params()))
            .collect();
        let state = TrainState {
            params,
            optimizers,
            models: None,
            epoch: 0,
            best_total: f64::INFINITY,
            epochs_since_best: 0,
        };
        Self::from_state(graph, config, state)
    }

    pub fn from_state(graph: &'g MultiplexGraph, config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if graph.n_nodes() < 2 {
            return Err(Error::contract("training needs at least two nodes"));
        }
        if state.params.len() != graph.n_layers() || state.optimizers.len() != graph.n_layers() {
            return Err(Error::contract("state does not match the graph's layer count"));
        }
        let ks = config.resolve_k(graph)?;
        Ok(Self {
            graph,
            threads: config.threads(),
            base: Rng::new(config.seed),
            ks,
            config,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn cluster_counts(&self) -> &[usize] {
        &self.ks
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.graph.layers().iter().map(|l| l.name().to_string()).collect()
    }

    fn stream(&self, kind: u64, layer: usize) -> Rng {
        self.base
            .derive(kind)
            .derive(self.state.epoch as u64)
            .derive(layer as u64)
    }

    /// Fresh positive and negative views of every layer for the current epoch.
    pub fn draw_views(&self) -> Result<Vec<LayerViews<'g>>> {
        let cfg = TransformConfig::new(self.config.p_drop, self.config.seed)?;
        let x = self.graph.attributes();
        self.graph
            .layers()
            .iter()
            .enumerate()
            .map(|(v, layer)| {
                let a = layer.adjacency_norm();
                let (x_pos, a_pos) = positive_transform(x, a, &cfg, &mut self.stream(STREAM_POSITIVE, v))?;
                let x_neg = negative_transform(x, &mut self.stream(STREAM_NEGATIVE, v))?;
                Ok(LayerViews {
                    a,
                    x,
                    a_pos,
                    x_pos,
                    x_neg,
                })
            })
            .collect()
    }

    pub fn embeddings(&self) -> Result<EmbeddingSet> {
        embed(self.graph, &self.state.params, &self.layer_names())
    }

    /// K-means on the clean-graph embeddings of every layer. Encoder parameters are untouched.
    pub fn e_step(&mut self) -> Result<()> {
        let emb = self.embeddings()?;
        let opts = KMeansOptions {
            tau: self.config.tau,
            ..KMeansOptions::default()
        };
        let rngs: Vec<Rng> = (0..self.graph.n_layers())
            .map(|v| self.stream(STREAM_KMEANS, v))
            .collect();
        let jobs: Vec<(usize, &DenseMatrix)> = emb.layers.iter().enumerate().collect();
        let models = map_ordered(&jobs, self.threads, |_, &(v, h)| {
            kmeans_with(h, self.ks[v], &opts, &mut rngs[v].clone())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        self.state.models = Some(models);
        Ok(())
    }

    fn uses_clusters(weights: &LossWeights) -> bool {
        weights.lambda_c > 0.0 || weights.mu_c > 0.0
    }

    /// Evaluates the objective at the current parameters and applies one Adam
    /// step per encoder. Cluster models are untouched.
    fn step(&mut self, weights: &LossWeights, use_models: bool) -> Result<LossReport> {
        let views = self.draw_views()?;
        let models = if use_models { self.state.models.as_deref() } else { None };
        let eval = evaluate(&self.state.params, &views, models, weights, self.threads)?;
        if let Some(term) = eval.report.non_finite_term() {
            return Err(Error::Divergence {
                epoch: self.state.epoch,
                term: term.to_string(),
            });
        }
        for ((p, opt), g) in self
            .state
            .params
            .iter_mut()
            .zip(self.state.optimizers.iter_mut())
            .zip(&eval.grads)
        {
            opt.step_encoder(p, g)?;
            if !(p.w.is_finite() && p.w_self.is_finite() && p.bias.iter().all(|b| b.is_finite())) {
                return Err(Error::Divergence {
                    epoch: self.state.epoch,
                    term: "encoder parameters".into(),
                });
            }
        }
        Ok(eval.report)
    }

    /// One M-step with the full objective; requires a prior E-step when
    /// cluster-level weights are non-zero.
    pub fn m_step(&mut self) -> Result<LossReport> {
        let weights = self.config.weights.clone();
        let use_models = Self::uses_clusters(&weights);
        if use_models && self.state.models.is_none() {
            return Err(Error::contract("M-step with cluster-level terms needs an E-step first"));
        }
        let report = self.step(&weights, use_models)?;
        self.state.epoch += 1;
        Ok(report)
    }

    /// Node-level updates only (`λ_N Σ L_N + μ_N R_N`), no clustering.
    pub fn warmup(&mut self, observer: &mut dyn FnMut(&EpochLog)) -> Result<()> {
        let weights = self.config.weights.node_level();
        for _ in 0..self.config.warmup_epochs {
            let report = self.step(&weights, false)?;
            observer(&EpochLog {
                epoch: self.state.epoch,
                phase: Phase::Warmup,
                report: &report,
            });
            self.state.epoch += 1;
        }
        Ok(())
    }

    /// The alternating E/M loop with early stopping. The returned state holds
    /// the parameters (and cluster models) that achieved the best total loss.
    pub fn train(mut self, observer: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
        let use_models = Self::uses_clusters(&self.config.weights);
        let mut best: Option<(Vec<EncoderParams>, Option<Vec<ClusterModel>>)> = None;
        let mut epochs_run = 0;
        let mut stopped_early = false;
        for t in 0..self.config.max_epochs {
            if use_models && t % self.config.cluster_every == 0 {
                self.e_step()?;
            }
            let snapshot = self.state.params.clone();
            let report = self.m_step()?;
            epochs_run += 1;
            observer(&EpochLog {
                epoch: self.state.epoch - 1,
                phase: Phase::Train,
                report: &report,
            });
            if report.total < self.state.best_total {
                self.state.best_total = report.total;
                self.state.epochs_since_best = 0;
                best = Some((snapshot, self.state.models.clone()));
            } else {
                self.state.epochs_since_best += 1;
            }
            if self.state.epochs_since_best >= self.config.patience {
                stopped_early = true;
                break;
            }
        }
        if let Some((params, models)) = best {
            self.state.params = params;
            self.state.models = models;
        }
        let embeddings = self.embeddings()?;
        Ok(TrainOutcome {
            state: self.state,
            embeddings,
            epochs_run,
            stopped_early,
        })
    }
}

/// Warm-up from freshly initialized encoders.
pub fn warmup(graph: &MultiplexGraph, config: &TrainConfig) -> Result<TrainState> {
    let mut trainer = Trainer::new(graph, config.clone())?;
    trainer.warmup(&mut |_| {})?;
    Ok(trainer.into_state())
}

/// Training from an existing (fresh or warmed-up) state.
pub fn train(graph: &MultiplexGraph, config: &TrainConfig, state: TrainState) -> Result<(TrainState, EmbeddingSet)> {
    let outcome = Trainer::from_state(graph, config.clone(), state)?.train(&mut |_| {})?;
    Ok((outcome.state, outcome.embeddings))
}

/// Warm-up followed by training.
pub fn run(graph: &MultiplexGraph, config: &TrainConfig, observer: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(graph, config.clone())?;
    trainer.warmup(observer)?;
    trainer.train(observer)
}
