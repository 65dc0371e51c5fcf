//! Dataset readers, attribute graphs and train/test splits.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::GraphError;

mod attributes;
mod kkbox;
mod movielens;
mod split;

pub use attributes::{
    build_shared_attribute_graph, entity_relation_values, value_label, AttributeTable, Bucketing,
    RelationSpec,
};
pub use kkbox::{default_kkbox_item_specs, default_kkbox_user_specs, load_kkbox, KkboxOptions};
pub use movielens::{default_item_specs, default_user_specs, load_movielens, Dataset};
pub use split::{split_interactions, Split, SplitSpec, TestCase};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("attribute {0:?} not present in the table")]
    UnknownAttribute(String),
    #[error("attribute {attribute:?}: cannot bucket value {value:?}")]
    Bucket { attribute: String, value: String },
    #[error("user {user}: {requested} negative candidates requested, {available} available")]
    NotEnoughCandidates {
        user: u32,
        requested: usize,
        available: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub(crate) fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.to_owned(),
            line,
            reason: reason.into(),
        }
    }
}
