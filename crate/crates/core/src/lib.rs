//! Multi-relational graph pre-training for recommendation.
//!
//! The crate pre-trains user and item embeddings on attribute graphs whose
//! edges are quadruplets `(head, relation type, relation value, tail)`, using
//! relation-level attention and a bandit-tuned top-k neighbor filter. The
//! embeddings then seed a user-item aggregation GNN trained with a pairwise
//! ranking loss, and the result is scored with HR/MRR/NDCG at K.
//!
//! Modules, bottom-up:
//! - [`autodiff`]: reverse-mode differentiation over dense tensors.
//! - [`graph`]: quadruplet graphs, interaction graphs, negative sampling.
//! - [`ingest`]: MovieLens-100K and KKBox readers, attribute graphs, splits.
//! - [`bandit`]: per-relation filtering thresholds.
//! - [`pretrain`]: the attention/filtering GNN and its joint loss.
//! - [`finetune`]: interaction-graph GNN, pairwise loss, top-K lists.
//! - [`metrics`]: ranking metrics and whole-model evaluation.
//! - [`pipeline`]: configuration, staged runs and reports.

pub mod autodiff;
pub mod bandit;
pub mod finetune;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod pretrain;
pub mod rng;
