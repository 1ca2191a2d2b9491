pub mod bench;
pub mod classify;
pub mod cluster;
pub mod decompose;

use gbtd::io::{ExperimentConfig, ModelFlavor};

/// Defaults of the real-data pipelines: a GLRO model fitted for 10
/// iterations.
pub fn pipeline_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        flavor: ModelFlavor::Glro,
        ..ExperimentConfig::default()
    };
    c.optimizer.max_iters = 10;
    c
}
