//! Data model shared by every stage: corpus, sufficient statistics, feature
//! partitions, configuration and the merge tree.

mod config;
mod corpus;
mod dendrogram;
mod stats;

pub use config::{KRange, MergeMode, ModelConfig, PrefixRule, Prior};
pub use corpus::{FeatureId, Lexicon, SparseDocMatrix};
pub use dendrogram::{Dendrogram, HierarchyNode, MergeRecord, NodeId};
pub use stats::{stats_from_assignment, ClusterStats, FeaturePartition, FeatureSet};
