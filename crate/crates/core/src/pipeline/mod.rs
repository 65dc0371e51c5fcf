//! Configuration, staged runs and run reports.
//!
//! A run is driven by one TOML file with a section per stage:
//!
//! ```toml
//! [run]
//! mode = "full"
//! seed = 0
//!
//! [dataset]
//! kind = "movielens"
//! path = "data/ml-100k"
//!
//! [pretrain]
//! composition = "corr"
//!
//! [eval]
//! ks = [10, 20]
//! protocol = "full-ranking"
//! ```
//!
//! Unknown keys are rejected. Stage seeds are derived from `run.seed`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finetune::{FinetuneConfig, FinetuneError};
use crate::ingest::{IngestError, RelationSpec, SplitSpec};
use crate::metrics::{MetricsError, Protocol};
use crate::pretrain::{PretrainConfig, PretrainError, Sampler};
use crate::rng;

mod report;
mod run;

pub use report::{
    read_report, write_report, DatasetSummary, FinetuneReport, PretrainReport, RunReport,
    SideReport, StageTiming,
};
pub use run::{load_dataset, run_pipeline, run_stages, write_artifacts, RunArtifacts, Stage};

/// Which of the four model variants to train.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Attention and bandit filtering.
    #[default]
    Full,
    /// No pre-training; fine-tuning starts from random tables.
    Single,
    /// Bandit filtering with uniform neighbor weights.
    RnsOnly,
    /// Attention over uniformly sampled neighbors, no bandit.
    RelOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Single => "single",
            Self::RnsOnly => "rns-only",
            Self::RelOnly => "rel-only",
        }
    }

    pub fn pretrains(self) -> bool {
        self != Self::Single
    }

    /// Sets the pre-training switches this mode controls.
    pub fn apply(self, cfg: &mut PretrainConfig) {
        let (attention, sampler) = match self {
            Self::Full | Self::Single => (true, Sampler::Bandit),
            Self::RnsOnly => (false, Sampler::Bandit),
            Self::RelOnly => (true, Sampler::Random),
        };
        cfg.attention = attention;
        cfg.sampler = sampler;
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "single" => Ok(Self::Single),
            "rns-only" => Ok(Self::RnsOnly),
            "rel-only" => Ok(Self::RelOnly),
            other => Err(format!(
                "unknown mode {other:?} (expected full, single, rns-only or rel-only)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Movielens,
    Kkbox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Resolved against the config file's directory when relative.
    pub path: PathBuf,
    /// Truncates the interaction file (KKBox only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rows: Option<usize>,
    /// Overrides the dataset's default user relations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_relations: Option<Vec<RelationSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_relations: Option<Vec<RelationSpec>>,
    /// Extra `key<TAB>attribute<TAB>value` files merged into the tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_auxiliary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_auxiliary: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub protocol: Protocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            protocol: Protocol::Sampled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Stream ids for stage seeds.
const SPLIT_STREAM: u64 = 1;
const USER_STREAM: u64 = 2;
const ITEM_STREAM: u64 = 3;
const FINETUNE_STREAM: u64 = 4;

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; a relative dataset path is taken relative to
    /// the file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset.path);
        if let Some(p) = cfg.dataset.user_auxiliary.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.dataset.item_auxiliary.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.pretrain.validate().map_err(|e| cfg(e.to_string()))?;
        self.finetune.validate().map_err(|e| cfg(e.to_string()))?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(cfg("eval.ks must list positive cutoffs".into()));
        }
        if self.dataset.max_rows.is_some() && self.dataset.kind != DatasetKind::Kkbox {
            return Err(cfg("dataset.max_rows only applies to kkbox".into()));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: rng::mix(&[self.run.seed, SPLIT_STREAM]),
            ..self.split.clone()
        }
    }

    /// Pre-training settings for the user (`item = false`) or item side,
    /// with the mode's switches applied.
    pub fn pretrain_config(&self, item: bool) -> PretrainConfig {
        let mut c = self.pretrain.clone();
        self.run.mode.apply(&mut c);
        c.seed = rng::mix(&[self.run.seed, if item { ITEM_STREAM } else { USER_STREAM }]);
        c
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            seed: rng::mix(&[self.run.seed, FINETUNE_STREAM]),
            ..self.finetune.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("pretrain ({side}): {source}")]
    Pretrain {
        side: &'static str,
        source: PretrainError,
    },
    #[error("finetune: {0}")]
    Finetune(#[from] FinetuneError),
    #[error("evaluate: {0}")]
    Evaluate(#[from] MetricsError),
    #[error("output {}: {source}", path.display())]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status: 2 configuration, 3 data, 4 divergence, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Ingest(_) | Self::Evaluate(_) => 3,
            Self::Pretrain { source, .. } => match source {
                PretrainError::Config(_) => 2,
                PretrainError::EmptyGraph | PretrainError::Graph(_) => 3,
                PretrainError::Diverged { .. } => 4,
                PretrainError::Autodiff(_) => 1,
            },
            Self::Finetune(e) => match e {
                FinetuneError::Config(_) => 2,
                FinetuneError::TableSize { .. }
                | FinetuneError::UnknownValue { .. }
                | FinetuneError::Metrics(_) => 3,
                FinetuneError::Diverged { .. } => 4,
                FinetuneError::Autodiff(_) => 1,
            },
            Self::Output { .. } => 1,
        }
    }

    pub(crate) fn output(path: &Path, source: std::io::Error) -> Self {
        Self::Output {
            path: path.to_owned(),
            source,
        }
    }
}

/// Reads `RAMGNN_THREADS` and sizes the global worker pool. Unset leaves
/// the default.
pub fn configure_threads() -> Result<Option<usize>, PipelineError> {
    let Ok(v) = std::env::var("RAMGNN_THREADS") else {
        return Ok(None);
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        PipelineError::Config(format!("RAMGNN_THREADS={v:?} is not a positive integer"))
    })?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}
