//! Files: tensor containers, labels, configs, exported tables and models.

mod config;
mod container;
mod export;
mod model_io;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{synth_generate, ExperimentConfig, ModelFlavor};
pub use container::{
    decode_container, encode_container, load_container, load_labeled, load_labels_manifest,
    save_container, split_last_mode, ContainerMetadata, LabeledDataset, LabelsManifest,
    ELEMENT_F64, MAGIC, VERSION,
};
pub use export::{
    export_table, export_trace, format_float, median, median_trace, read_table_csv, trace_table,
    Cell, ExportFormat, Table,
};
pub use model_io::{load_model, save_model, MODEL_MANIFEST};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("not a GBTD container")]
    NotContainer,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported element type code {0}")]
    UnsupportedElementType(u8),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("corrupt metadata: {0}")]
    CorruptMetadata(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Constraint(#[from] crate::constraints::ConstraintError),
}

impl IoError {
    pub(crate) fn at(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}
