//! Fine-tuning on the user-item interaction graph.
//!
//! Input states are `x⁰ = W₃ (e ∥ mean of the entity's relation-value
//! embeddings)`. Layers alternate: odd layers update users from the mean of
//! their items, even layers update items from the mean of their users, each
//! as `LeakyReLU(W₄ˡ (aggregate ∥ self))`. Scores are inner products and
//! training minimizes BPR with one sampled negative per observed pair.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, CsrMatrix, Graph, NodeId, Tensor};
use crate::graph::InteractionGraph;
use crate::ingest::Split;
use crate::metrics::{evaluate_cases, score_desc, MetricsError, Protocol, Scorer};
use crate::optim::Adam;
use crate::pretrain::EmbeddingTable;
use crate::rng;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{side} table has {found} rows, expected {expected}")]
    TableSize {
        side: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{side} relation value {value} outside table of {rows}")]
    UnknownValue {
        side: &'static str,
        value: u32,
        rows: usize,
    },
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<RecModel>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub layers: usize,
    pub lr: f64,
    pub lambda_reg: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Early stopping is not considered before this epoch.
    pub min_epochs: usize,
    /// Cutoff of the validation hit ratio used for early stopping.
    pub eval_k: usize,
    /// Training triples per gradient step; 0 means one full-batch step.
    pub batch_size: usize,
    /// Rescale pre-trained tables to the RMS of the random initialization
    /// (directions are kept).
    pub rescale_pretrained: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            lr: 1e-3,
            lambda_reg: 1e-5,
            max_epochs: 300,
            patience: 20,
            min_epochs: 0,
            eval_k: 20,
            batch_size: 0,
            rescale_pretrained: true,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        let err = |m: &str| Err(FinetuneError::Config(m.to_owned()));
        if self.layers == 0 {
            return err("layers must be at least 1");
        }
        if !(self.lr > 0.0) || self.lambda_reg < 0.0 {
            return err("lr must be positive and lambda_reg non-negative");
        }
        if self.eval_k == 0 {
            return err("eval_k must be positive");
        }
        Ok(())
    }
}

/// Starting tables of one side (users or items).
#[derive(Clone, Debug, PartialEq)]
pub struct SideInit {
    /// `[n, d]`
    pub entities: Tensor,
    /// `[values, d/2]`
    pub rel_values: Tensor,
    /// Relation-value ids carried by each entity.
    pub values_of: Vec<Vec<u32>>,
}

impl SideInit {
    pub fn from_pretrained(table: &EmbeddingTable, values_of: Vec<Vec<u32>>) -> Self {
        Self {
            entities: table.entities.clone(),
            rel_values: table.rel_values.clone(),
            values_of,
        }
    }

    /// Scales each table so its root-mean-square entry equals that of
    /// [`SideInit::random`] at the same dimension.
    pub fn rescaled(mut self) -> Self {
        let dim = self.entities.shape.cols().max(1);
        let target = 1.0 / (3.0 * dim as f64).sqrt();
        for t in [&mut self.entities, &mut self.rel_values] {
            let n = t.data.len().max(1) as f64;
            let rms = (t.data.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            if rms > 0.0 {
                let f = target / rms;
                t.data.iter_mut().for_each(|v| *v *= f);
            }
        }
        self
    }

    /// Uniform(-1/sqrt(d), 1/sqrt(d)) tables for runs without pre-training.
    pub fn random(
        n: usize,
        values: usize,
        dim: usize,
        values_of: Vec<Vec<u32>>,
        seed: u64,
        side: u64,
    ) -> Self {
        let a = 1.0 / (dim as f64).sqrt();
        let mut r = rng::stream(seed, rng::mix(&[0x52414E44494E4954, side]));
        let values = values.max(1);
        Self {
            entities: Tensor::matrix(n, dim, rng::uniform(&mut r, n * dim, a)),
            rel_values: Tensor::matrix(values, dim / 2, rng::uniform(&mut r, values * dim / 2, a)),
            values_of,
        }
    }

    fn check(&self, side: &'static str, n: usize, dim: usize) -> Result<(), FinetuneError> {
        if self.entities.shape.rows() != n || self.values_of.len() != n {
            return Err(FinetuneError::TableSize {
                side,
                found: self.entities.shape.rows(),
                expected: n,
            });
        }
        if self.entities.shape.cols() != dim || self.rel_values.shape.cols() != dim / 2 {
            return Err(FinetuneError::Config(format!(
                "{side} tables do not match dimension {dim}"
            )));
        }
        let rows = self.rel_values.shape.rows();
        for vals in &self.values_of {
            if let Some(&v) = vals.iter().find(|&&v| v as usize >= rows) {
                return Err(FinetuneError::UnknownValue {
                    side,
                    value: v,
                    rows,
                });
            }
        }
        Ok(())
    }

    fn pooling(&self) -> CsrMatrix {
        let lists: Vec<Vec<usize>> = self
            .values_of
            .iter()
            .map(|v| v.iter().map(|&x| x as usize).collect())
            .collect();
        CsrMatrix::mean_adjacency(self.rel_values.shape.rows(), &lists)
    }
}

/// Parameter slots of the fine-tuning model.
pub const USER_E: usize = 0;
pub const ITEM_E: usize = 1;
pub const USER_V: usize = 2;
pub const ITEM_V: usize = 3;
pub const W3: usize = 4;
/// First per-layer `W₄` slot.
pub const W4: usize = 5;

/// Fixed structure the parameters are applied to.
#[derive(Clone, Debug)]
pub struct Structure {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub layers: usize,
    user_pool: Arc<CsrMatrix>,
    item_pool: Arc<CsrMatrix>,
    /// Users <- items.
    user_adj: Arc<CsrMatrix>,
    /// Items <- users.
    item_adj: Arc<CsrMatrix>,
}

impl Structure {
    pub fn new(
        train: &InteractionGraph,
        users: &SideInit,
        items: &SideInit,
        layers: usize,
    ) -> Result<Self, FinetuneError> {
        let dim = users.entities.shape.cols();
        if dim == 0 || dim % 2 != 0 {
            return Err(FinetuneError::Config(format!(
                "dimension {dim} must be positive and even"
            )));
        }
        users.check("user", train.user_count(), dim)?;
        items.check("item", train.item_count(), dim)?;
        let ua: Vec<Vec<usize>> = (0..train.user_count() as u32)
            .map(|u| train.items_of(u).iter().map(|&i| i as usize).collect())
            .collect();
        let ia: Vec<Vec<usize>> = (0..train.item_count() as u32)
            .map(|i| train.users_of(i).iter().map(|&u| u as usize).collect())
            .collect();
        Ok(Self {
            users: train.user_count(),
            items: train.item_count(),
            dim,
            layers,
            user_pool: Arc::new(users.pooling()),
            item_pool: Arc::new(items.pooling()),
            user_adj: Arc::new(CsrMatrix::mean_adjacency(train.item_count(), &ua)),
            item_adj: Arc::new(CsrMatrix::mean_adjacency(train.user_count(), &ia)),
        })
    }

    /// Initial parameter list: the two sides' tables, then `W₃`, then one
    /// `W₄` per layer. Weights are Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn init_params(&self, users: &SideInit, items: &SideInit, seed: u64) -> Vec<Tensor> {
        let d = self.dim;
        let mut r = rng::stream(seed, rng::mix(&[0x46494E45, 0]));
        let mut weight = |fan_in: usize| {
            let a = (6.0 / fan_in as f64).sqrt();
            Tensor::matrix(fan_in, d, rng::uniform(&mut r, fan_in * d, a))
        };
        let mut out = vec![
            users.entities.clone(),
            items.entities.clone(),
            users.rel_values.clone(),
            items.rel_values.clone(),
            weight(d + d / 2),
        ];
        for _ in 0..self.layers {
            out.push(weight(2 * d));
        }
        out
    }

    /// Input states of one side.
    pub fn input_states(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        user_side: bool,
    ) -> Result<NodeId, AutodiffError> {
        let (e, v, pool) = if user_side {
            (ids[USER_E], ids[USER_V], self.user_pool.clone())
        } else {
            (ids[ITEM_E], ids[ITEM_V], self.item_pool.clone())
        };
        let pooled = g.spmm(pool, v)?;
        let cat = g.concat(&[e, pooled])?;
        g.matmul(cat, ids[W3])
    }

    /// Final `(users, items)` states.
    pub fn propagate(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
    ) -> Result<(NodeId, NodeId), AutodiffError> {
        let mut xu = self.input_states(g, ids, true)?;
        let mut xi = self.input_states(g, ids, false)?;
        for l in 0..self.layers {
            let w = ids[W4 + l];
            if l % 2 == 0 {
                let agg = g.spmm(self.user_adj.clone(), xi)?;
                let cat = g.concat(&[agg, xu])?;
                let z = g.matmul(cat, w)?;
                xu = g.leaky_relu(z)?;
            } else {
                let agg = g.spmm(self.item_adj.clone(), xu)?;
                let cat = g.concat(&[agg, xi])?;
                let z = g.matmul(cat, w)?;
                xi = g.leaky_relu(z)?;
            }
        }
        Ok((xu, xi))
    }

    /// Mean BPR loss over `(user, positive, negative)` triples plus
    /// `lambda_reg` times the L2 norm of all parameters.
    pub fn bpr_objective(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        triples: &[(u32, u32, u32)],
        lambda_reg: f64,
    ) -> Result<NodeId, AutodiffError> {
        let (xu, xi) = self.propagate(g, ids)?;
        let reg = g.l2_norm_of(ids)?;
        let reg = g.scale(reg, lambda_reg)?;
        if triples.is_empty() {
            return Ok(reg);
        }
        let u: Arc<[usize]> = triples.iter().map(|t| t.0 as usize).collect();
        let p: Arc<[usize]> = triples.iter().map(|t| t.1 as usize).collect();
        let n: Arc<[usize]> = triples.iter().map(|t| t.2 as usize).collect();
        let yp = g.pair_dot(xu, xi, u.clone(), p)?;
        let yn = g.pair_dot(xu, xi, u, n)?;
        let diff = g.sub(yp, yn)?;
        let ls = g.log_sigmoid(diff)?;
        let s = g.sum(ls)?;
        let bpr = g.scale(s, -1.0 / triples.len() as f64)?;
        g.add(bpr, reg)
    }

    /// Evaluates final states without recording gradients.
    pub fn model(&self, params: &[Tensor]) -> Result<RecModel, AutodiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| g.constant(t.clone())).collect();
        let (xu, xi) = self.propagate(&mut g, &ids)?;
        Ok(RecModel {
            users: g.value(xu).clone(),
            items: g.value(xi).clone(),
        })
    }
}

/// `-ln σ(y⁺ - y⁻) + λ·reg`.
pub fn bpr_loss(y_pos: f64, y_neg: f64, reg_norm: f64, lambda: f64) -> f64 {
    let x = y_pos - y_neg;
    let log_sig = if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    };
    -log_sig + lambda * reg_norm
}

/// Final user and item states.
#[derive(Clone, Debug, PartialEq)]
pub struct RecModel {
    pub users: Tensor,
    pub items: Tensor,
}

impl RecModel {
    pub fn score(&self, user: u32, item: u32) -> f64 {
        self.users
            .row(user as usize)
            .iter()
            .zip(self.items.row(item as usize))
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Top `k` items by score, descending, ties by ascending id, skipping
    /// `exclude` (sorted ascending). Fewer than `k` candidates returns all.
    pub fn recommend_topk(&self, user: u32, k: usize, exclude: &[u32]) -> Vec<(u32, f64)> {
        let mut cands: Vec<(u32, f64)> = (0..self.items.shape.rows() as u32)
            .filter(|i| exclude.binary_search(i).is_err())
            .map(|i| (i, self.score(user, i)))
            .collect();
        let order = |a: &(u32, f64), b: &(u32, f64)| score_desc(a.1, b.1).then(a.0.cmp(&b.0));
        if k == 0 {
            return Vec::new();
        }
        if k < cands.len() {
            cands.select_nth_unstable_by(k - 1, order);
            cands.truncate(k);
        }
        cands.sort_by(order);
        cands
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }
}

impl Scorer for RecModel {
    fn item_count(&self) -> usize {
        self.items.shape.rows()
    }

    fn score_all(&self, user: u32) -> Vec<f64> {
        (0..self.items.shape.rows() as u32)
            .map(|i| self.score(user, i))
            .collect()
    }
}

/// `user_id<TAB>rank<TAB>item_id<TAB>score` lines for every user, ranks
/// from 1, training items excluded.
pub fn write_recommendations<W: Write>(
    mut w: W,
    model: &RecModel,
    train: &InteractionGraph,
    k: usize,
    user_names: &[String],
    item_names: &[String],
) -> std::io::Result<()> {
    for u in 0..train.user_count() as u32 {
        for (rank, (item, score)) in model
            .recommend_topk(u, k, train.items_of(u))
            .into_iter()
            .enumerate()
        {
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}",
                user_names[u as usize],
                rank + 1,
                item_names[item as usize],
                score
            )?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Validation hit ratio at `eval_k`, when validation cases exist.
    pub validation_hr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: RecModel,
    pub params: Vec<Tensor>,
    pub epochs: Vec<FinetuneEpoch>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// One `(u, i⁺, i⁻)` per training edge, `i⁻` drawn uniformly among items
/// the user has no training edge with, shuffled.
pub fn sample_triples(train: &InteractionGraph, seed: u64, epoch: usize) -> Vec<(u32, u32, u32)> {
    let mut r = rng::stream(seed, rng::mix(&[0x425052, epoch as u64]));
    let items = train.item_count() as u32;
    let mut out = Vec::with_capacity(train.len());
    for u in 0..train.user_count() as u32 {
        let seen = train.items_of(u);
        if seen.len() as u32 >= items {
            continue;
        }
        for &i in seen {
            let neg = loop {
                let c = r.random_range(0..items);
                if seen.binary_search(&c).is_err() {
                    break c;
                }
            };
            out.push((u, i, neg));
        }
    }
    out.shuffle(&mut r);
    out
}

/// Trains with early stopping on the split's validation cases (evaluated
/// with `protocol`); keeps the best-scoring parameters.
pub fn train_finetune(
    split: &Split,
    users: &SideInit,
    items: &SideInit,
    cfg: &FinetuneConfig,
    protocol: Protocol,
) -> Result<FinetuneOutcome, FinetuneError> {
    cfg.validate()?;
    let structure = Structure::new(&split.train, users, items, cfg.layers)?;
    let mut params = structure.init_params(users, items, cfg.seed);
    let mut adam = Adam::new(cfg.lr, &params);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let triples = sample_triples(&split.train, cfg.seed, epoch);
        let batch = if cfg.batch_size == 0 {
            triples.len().max(1)
        } else {
            cfg.batch_size
        };
        let checkpoint = params.clone();
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in triples.chunks(batch) {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
            let root = structure.bpr_objective(&mut g, &ids, chunk, cfg.lambda_reg)?;
            let l = g.scalar(root);
            if !l.is_finite() {
                total = f64::NAN;
                break;
            }
            let grads = g.backward(root)?;
            let refs: Vec<Option<&[f64]>> = ids
                .iter()
                .map(|id| grads.get(id).map(Vec::as_slice))
                .collect();
            adam.step(&mut params, &refs);
            total += l;
            batches += 1;
        }
        if !total.is_finite() || params.iter().any(|p| !p.is_finite()) {
            let model = structure.model(&checkpoint)?;
            return Err(FinetuneError::Diverged {
                epoch,
                checkpoint: Box::new(model),
            });
        }
        let loss = total / batches.max(1) as f64;
        let validation_hr = if split.validation.is_empty() {
            None
        } else {
            let model = structure.model(&params)?;
            let m = evaluate_cases(&model, split, &split.validation, &[cfg.eval_k], protocol)?;
            Some(m[0].hr)
        };
        epochs.push(FinetuneEpoch {
            epoch,
            loss,
            validation_hr,
        });
        let score = validation_hr.unwrap_or(-loss);
        match &best {
            Some((b, _, _)) if score <= *b => since_best += 1,
            _ => {
                best = Some((score, epoch, params.clone()));
                since_best = 0;
            }
        }
        if validation_hr.is_some() && since_best >= cfg.patience && epoch >= cfg.min_epochs {
            break;
        }
    }
    let (best_epoch, params) = match best {
        Some((_, e, p)) if epochs.iter().any(|x| x.validation_hr.is_some()) => (e, p),
        _ => (epochs.len(), params),
    };
    let model = structure.model(&params)?;
    Ok(FinetuneOutcome {
        model,
        params,
        epochs,
        best_epoch,
    })
}
