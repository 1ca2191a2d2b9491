//! Classification and clustering on top of fitted group models.

mod cluster;
mod ica;
mod metrics;
mod split;
mod subspace;

use thiserror::Error;

pub use cluster::{
    agglomerative, cut_tree, dendrogram, pairwise_distance, Dendrogram, Linkage, Merge, Metric,
};
pub use ica::{fastica, IcaResult};
pub use metrics::{
    adjusted_mutual_info, adjusted_rand, confusion_matrix, fowlkes_mallows, macro_scores,
    ClassScores,
};
pub use split::{kfold_split, stratified_kfold_split};
pub use subspace::{
    classify, contrast, fit_class_models, fit_group_model, principal_angle, ClassModel,
    ClassModelConfig,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("zero matrix has no column space")]
    ZeroSubspace,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("class {label} has {count} instances, at least 2 are needed")]
    TooFewInstances { label: usize, count: usize },
    #[error("zero-norm vector under {0} distance")]
    ZeroNorm(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Constraint(#[from] crate::constraints::ConstraintError),
}
