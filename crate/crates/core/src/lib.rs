//! Model-based hierarchical clustering of count data.
//!
//! A flat multinomial mixture is fitted by hard EM and scored by its
//! Dirichlet-multinomial marginal likelihood. Its clusters are then merged
//! bottom-up; each merge picks the features the two subtrees share, and is
//! accepted only while the marginal likelihood of the hierarchy grows.

pub mod error;
pub mod eval;
pub mod flat;
pub mod io;
pub mod likelihood;
pub mod mhac;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{cut, nmi, Labeling};
pub use flat::{fit_flat, select_k, FlatClustering};
pub use likelihood::{log_flat, log_hierarchy, log_md, merge_delta};
pub use mhac::{best_merge, greedy_noise_selection, run_mhac, MergeProposal};
pub use model::{
    ClusterStats, Dendrogram, FeatureId, FeaturePartition, FeatureSet, Lexicon, ModelConfig,
    SparseDocMatrix,
};
