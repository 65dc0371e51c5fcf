//! Pre-training on a multi-relational attribute graph.
//!
//! Every node aggregates composed `(neighbor, relation)` messages from a
//! filtered neighborhood, weighted by relation-level attention, through
//! `layers` stacked layers. Training minimizes a pairwise cross-entropy on
//! the distance projection of the final embeddings, plus the same loss on
//! the input embeddings while the neighbor filter is still adapting, plus an
//! L2 penalty.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::bandit::{self, BanditConfig, BanditState, TrajectoryPoint};
use crate::graph::{EntityId, GraphError, MultiRelGraph, RelTypeId};
use crate::optim::Adam;
use crate::rng;

mod embeddings;
mod model;

pub use embeddings::{
    read_embeddings, write_embeddings, EmbeddingIoError, EmbeddingKind, EmbeddingTable,
};
pub use model::{
    attention_weights, forward, loss, pair_loss, similarity_loss, Composition, DistanceMlp,
    LayerSlots, LossNodes, Neighborhoods, Objective, ParamLayout, Samples, Selection, ENTITY,
    REL_TYPE, REL_VALUE, SIM_CLAMP,
};

/// How neighborhoods are filtered before aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Top-k most similar neighbors per relation, k tuned by the bandit.
    Bandit,
    /// A fresh uniform sample of `bandit.initial_k` neighbors per relation
    /// each epoch; no similarity loss.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub layers: usize,
    pub dim: usize,
    pub composition: Composition,
    /// Non-neighbors sampled per node and epoch.
    pub negatives: usize,
    /// Neighbors sampled per node and epoch as positives.
    pub positives: usize,
    pub lambda_sim: f64,
    pub lambda_reg: f64,
    pub lr: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Relation-level attention; off means uniform weights.
    pub attention: bool,
    pub sampler: Sampler,
    pub bandit: BanditConfig,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            dim: 60,
            composition: Composition::Corr,
            negatives: 5,
            positives: 1,
            lambda_sim: 0.1,
            lambda_reg: 1e-5,
            lr: 1e-3,
            epochs: 200,
            steps_per_epoch: 1,
            attention: true,
            sampler: Sampler::Bandit,
            bandit: BanditConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("graph has no entities")]
    EmptyGraph,
    #[error("loss diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<EmbeddingTable>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let err = |m: &str| Err(PretrainError::Config(m.to_owned()));
        if self.layers == 0 {
            return err("layers must be at least 1");
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return err("dim must be a positive even number");
        }
        if self.negatives == 0 {
            return err("negatives must be at least 1");
        }
        if self.steps_per_epoch == 0 {
            return err("steps_per_epoch must be at least 1");
        }
        if !(self.lr > 0.0) || self.lambda_sim < 0.0 || self.lambda_reg < 0.0 {
            return err("lr must be positive and loss weights non-negative");
        }
        if self.bandit.initial_k == 0 || self.bandit.epsilon == 0 {
            return err("bandit initial_k and epsilon must be positive");
        }
        Ok(())
    }
}

/// Per-epoch loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub gnn: f64,
    pub sim: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub embeddings: EmbeddingTable,
    pub bandit: BanditState,
    pub losses: Vec<EpochLoss>,
    /// Last epoch in which the similarity loss was active.
    pub sim_epochs: usize,
}

impl PretrainOutcome {
    pub fn trajectory(&self) -> &[TrajectoryPoint] {
        self.bandit.trajectory()
    }
}

/// Trainable state of one pre-training run.
#[derive(Clone, Debug)]
pub struct Pretrainer<'g> {
    graph: &'g MultiRelGraph,
    cfg: PretrainConfig,
    layout: ParamLayout,
    params: Vec<Tensor>,
    all_neighbors: Vec<Vec<EntityId>>,
}

impl<'g> Pretrainer<'g> {
    pub fn new(graph: &'g MultiRelGraph, cfg: PretrainConfig) -> Result<Self, PretrainError> {
        cfg.validate()?;
        if graph.entity_count() == 0 {
            return Err(PretrainError::EmptyGraph);
        }
        let layout = ParamLayout::new(
            cfg.dim,
            cfg.layers,
            graph.entity_count(),
            graph.rel_type_count().max(1),
            graph.rel_value_count().max(1),
        );
        let params = layout.init(cfg.seed);
        let all_neighbors = (0..graph.entity_count() as EntityId)
            .map(|i| {
                let mut l: Vec<EntityId> = (0..graph.rel_type_count() as RelTypeId)
                    .flat_map(|t| {
                        graph
                            .neighbors_by_relation(i, t)
                            .unwrap()
                            .iter()
                            .map(|&(j, _)| j)
                    })
                    .collect();
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        Ok(Self {
            graph,
            cfg,
            layout,
            params,
            all_neighbors,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Distance projection of every input embedding.
    pub fn node_scores(&self) -> Vec<f64> {
        DistanceMlp::from_params(&self.layout, &self.params).project_rows(&self.params[ENTITY])
    }

    /// Top-k similar neighbors per relation under `thresholds`.
    pub fn select(&self, thresholds: &[usize], scores: &[f64]) -> Selection {
        let nt = self.graph.rel_type_count();
        let mut lists = Vec::with_capacity(self.graph.entity_count() * nt);
        for i in 0..self.graph.entity_count() as EntityId {
            for t in 0..nt {
                lists.push(bandit::select_neighbors(
                    self.graph,
                    i,
                    t as RelTypeId,
                    thresholds[t],
                    scores,
                ));
            }
        }
        Selection {
            rel_types: nt,
            lists,
        }
    }

    /// Uniform sample of at most `k` distinct neighbors per relation.
    pub fn random_selection(&self, k: usize, epoch: usize) -> Selection {
        let nt = self.graph.rel_type_count();
        let mut r = rng::stream(self.cfg.seed, rng::mix(&[0x52414E44, epoch as u64]));
        let mut lists = Vec::with_capacity(self.graph.entity_count() * nt);
        for i in 0..self.graph.entity_count() as EntityId {
            for t in 0..nt as RelTypeId {
                let mut all: Vec<EntityId> = self
                    .graph
                    .neighbors_by_relation(i, t)
                    .unwrap()
                    .iter()
                    .map(|&(j, _)| j)
                    .collect();
                all.dedup();
                let picked = if all.len() <= k {
                    all
                } else {
                    let mut p: Vec<EntityId> = index::sample(&mut r, all.len(), k)
                        .into_iter()
                        .map(|x| all[x])
                        .collect();
                    p.sort_unstable();
                    p
                };
                lists.push(picked);
            }
        }
        Selection {
            rel_types: nt,
            lists,
        }
    }

    /// Positive neighbors and negative non-neighbors for every node.
    pub fn sample(&self, epoch: usize) -> Result<Samples, PretrainError> {
        let mut r = rng::stream(self.cfg.seed, rng::mix(&[0x504F53, epoch as u64]));
        let neg_seed = rng::mix(&[self.cfg.seed, 0x4E4547, epoch as u64]);
        let n = self.graph.entity_count();
        let mut s = Samples::default();
        for i in 0..n as EntityId {
            let nbrs = &self.all_neighbors[i as usize];
            if !nbrs.is_empty() {
                let k = self.cfg.positives.min(nbrs.len());
                let mut picked: Vec<usize> = index::sample(&mut r, nbrs.len(), k).into_vec();
                picked.sort_unstable();
                s.positives.extend(picked.into_iter().map(|x| (i, nbrs[x])));
            }
            let available = n - 1 - nbrs.len();
            let m = self.cfg.negatives.min(available);
            if m > 0 {
                for j in self.graph.sample_negative_nodes(i, m, neg_seed)? {
                    s.negatives.push((i, j));
                }
            }
        }
        Ok(s)
    }

    fn leaf_graph(params: &[Tensor]) -> (Graph, Vec<NodeId>) {
        let mut g = Graph::new();
        let ids = params.iter().map(|t| g.param(t.clone())).collect();
        (g, ids)
    }

    /// Embedding table from the current parameters under `sel`.
    pub fn embed(&self, sel: &Selection) -> Result<EmbeddingTable, PretrainError> {
        Self::embed_with(self.graph, &self.layout, &self.cfg, &self.params, sel)
    }

    fn embed_with(
        graph: &MultiRelGraph,
        layout: &ParamLayout,
        cfg: &PretrainConfig,
        params: &[Tensor],
        sel: &Selection,
    ) -> Result<EmbeddingTable, PretrainError> {
        let nb = Neighborhoods::build(graph, sel);
        let (mut g, ids) = Self::leaf_graph(params);
        let h = forward(&mut g, layout, &ids, &nb, cfg.composition, cfg.attention)?;
        Ok(EmbeddingTable {
            entities: g.value(h).clone(),
            rel_types: params[REL_TYPE].clone(),
            rel_values: params[REL_VALUE].clone(),
        })
    }

    /// One gradient step on the joint objective. Returns the loss parts.
    pub fn step(
        &mut self,
        adam: &mut Adam,
        nb: &Neighborhoods,
        samples: &Samples,
        lambda_sim: f64,
    ) -> Result<EpochLoss, PretrainError> {
        let obj = Objective {
            composition: self.cfg.composition,
            attention: self.cfg.attention,
            lambda_sim,
            lambda_reg: self.cfg.lambda_reg,
        };
        let (mut g, ids) = Self::leaf_graph(&self.params);
        let nodes = loss(&mut g, &self.layout, &ids, nb, samples, &obj)?;
        let out = EpochLoss {
            epoch: 0,
            total: g.scalar(nodes.total),
            gnn: g.scalar(nodes.gnn),
            sim: nodes.sim.map_or(0.0, |s| g.scalar(s)),
        };
        if !out.total.is_finite() {
            return Ok(out);
        }
        let grads = g.backward(nodes.total)?;
        let refs: Vec<Option<&[f64]>> = ids
            .iter()
            .map(|id| grads.get(id).map(Vec::as_slice))
            .collect();
        adam.step(&mut self.params, &refs);
        Ok(out)
    }

    /// One epoch: select neighborhoods (feeding the bandit when it drives
    /// selection), sample pairs, take `steps_per_epoch` gradient steps.
    /// Returns the epoch's mean losses and the selection it trained on.
    pub fn train_epoch(
        &mut self,
        epoch: usize,
        bandit: &mut BanditState,
        adam: &mut Adam,
    ) -> Result<(EpochLoss, Selection, bool), PretrainError> {
        let nt = self.graph.rel_type_count();
        let checkpoint = self.params.clone();
        let (sel, sim_active) = match self.cfg.sampler {
            Sampler::Bandit => {
                let scores = self.node_scores();
                let sel = self.select(&bandit.thresholds(), &scores);
                let active = !bandit.all_terminated();
                for t in 0..nt {
                    let mut total = 0.0;
                    let mut nodes = 0usize;
                    for i in 0..self.graph.entity_count() {
                        let l = &sel.lists[i * nt + t];
                        if let Ok(a) = bandit::average_neighbor_distance(i as EntityId, l, &scores)
                        {
                            total += a;
                            nodes += 1;
                        }
                    }
                    let and = if nodes == 0 {
                        0.0
                    } else {
                        total / nodes as f64
                    };
                    bandit.observe(t as RelTypeId, epoch, and);
                }
                (sel, active)
            }
            Sampler::Random => (
                self.random_selection(self.cfg.bandit.initial_k, epoch),
                false,
            ),
        };
        let lambda_sim = if sim_active { self.cfg.lambda_sim } else { 0.0 };
        let nb = Neighborhoods::build(self.graph, &sel);
        let samples = self.sample(epoch)?;
        let mut acc = EpochLoss {
            epoch,
            total: 0.0,
            gnn: 0.0,
            sim: 0.0,
        };
        let steps = self.cfg.steps_per_epoch as f64;
        for _ in 0..self.cfg.steps_per_epoch {
            let l = self.step(adam, &nb, &samples, lambda_sim)?;
            acc.total += l.total / steps;
            acc.gnn += l.gnn / steps;
            acc.sim += l.sim / steps;
        }
        if !acc.total.is_finite() || self.params.iter().any(|p| !p.is_finite()) {
            let table = Self::embed_with(self.graph, &self.layout, &self.cfg, &checkpoint, &sel)?;
            return Err(PretrainError::Diverged {
                epoch,
                checkpoint: Box::new(table),
            });
        }
        Ok((acc, sel, sim_active))
    }

    /// Fresh bandit and optimizer for this trainer.
    pub fn start(&self) -> (BanditState, Adam) {
        (
            BanditState::for_graph(self.cfg.bandit.clone(), self.graph),
            Adam::new(self.cfg.lr, &self.params),
        )
    }

    /// Full training loop.
    pub fn run(mut self) -> Result<PretrainOutcome, PretrainError> {
        let (mut bandit, mut adam) = self.start();
        let mut losses = Vec::with_capacity(self.cfg.epochs);
        let mut sim_epochs = 0;
        let mut last_sel: Option<Selection> = None;
        for epoch in 1..=self.cfg.epochs {
            let (l, sel, sim_active) = self.train_epoch(epoch, &mut bandit, &mut adam)?;
            if sim_active {
                sim_epochs = epoch;
            }
            losses.push(l);
            last_sel = Some(sel);
        }
        bandit.freeze_all();
        let sel = match (self.cfg.sampler, last_sel) {
            (Sampler::Random, Some(s)) => s,
            (Sampler::Random, None) => self.random_selection(self.cfg.bandit.initial_k, 0),
            (Sampler::Bandit, _) => {
                let scores = self.node_scores();
                self.select(&bandit.thresholds(), &scores)
            }
        };
        let embeddings = self.embed(&sel)?;
        Ok(PretrainOutcome {
            embeddings,
            bandit,
            losses,
            sim_epochs,
        })
    }
}

/// Trains on `graph` with `cfg`.
pub fn pretrain_run(
    graph: &MultiRelGraph,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, PretrainError> {
    Pretrainer::new(graph, cfg.clone())?.run()
}
