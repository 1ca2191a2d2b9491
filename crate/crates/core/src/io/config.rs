//! Experiment configuration and synthetic problem generation.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::analysis::{ClassModelConfig, Linkage, Metric};
use crate::constraints::{project_model, ConstraintScheme};
use crate::init::InitStrategy;
use crate::model::{build_glro, build_gtld, init_random, BlockTermModel, GroupFlavor, GroupSpec};
use crate::optim::{Method, OptimizerConfig};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFlavor {
    /// Plain mixed Tucker / (Lr,1) decomposition.
    Btd,
    Glro,
    Gtld,
}

impl ModelFlavor {
    pub fn group(self) -> Option<GroupFlavor> {
        match self {
            ModelFlavor::Btd => None,
            ModelFlavor::Glro => Some(GroupFlavor::Glro),
            ModelFlavor::Gtld => Some(GroupFlavor::Gtld),
        }
    }
}

impl std::str::FromStr for ModelFlavor {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "btd" => Ok(ModelFlavor::Btd),
            "glro" => Ok(ModelFlavor::Glro),
            "gtld" => Ok(ModelFlavor::Gtld),
            _ => Err(IoError::Config(format!("unknown model flavor '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub flavor: ModelFlavor,
    pub dims: Vec<usize>,
    /// Number of objects `N` of a group model; defaults to the last dimension.
    pub n_objects: Option<usize>,
    /// `L` per (Lr,1) term; for GLRO the individual ranks followed by the
    /// common rank, for GTLD the individual ranks.
    pub lr_ranks: Vec<usize>,
    /// Number of leading modes with full (Lr,1) factors.
    pub full_modes: usize,
    /// Core shapes of the Tucker terms; for GTLD a single entry with the
    /// data-mode ranks of the common term.
    pub tucker_ranks: Vec<Vec<usize>>,
    pub modes_of_interest: Vec<usize>,
    pub p_cum: Option<f64>,
    pub p_min: Option<f64>,
    /// Feature mode of the classification and clustering pipelines.
    pub gamma: usize,
    pub common_rank: usize,
    pub individual_rank: usize,
    pub ica: bool,
    pub optimizer: OptimizerConfig,
    pub scheme: ConstraintScheme,
    pub init: InitStrategy,
    pub seed: u64,
    pub runs: usize,
    pub folds: usize,
    pub metric: Metric,
    pub linkage: Linkage,
    /// `||signal|| / ||noise||` of additive Gaussian noise; `None` is noiseless.
    pub noise_snr: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::unconstrained_benchmark()
    }
}

impl ExperimentConfig {
    /// 20 x 20 x 20 target, five (Lr,1) terms with `L = 3` and `P = 2`, one
    /// Tucker term of rank (3, 3, 3), noiseless.
    pub fn unconstrained_benchmark() -> Self {
        Self {
            flavor: ModelFlavor::Btd,
            dims: vec![20, 20, 20],
            n_objects: None,
            lr_ranks: vec![3; 5],
            full_modes: 2,
            tucker_ranks: vec![vec![3, 3, 3]],
            modes_of_interest: Vec::new(),
            p_cum: None,
            p_min: None,
            gamma: 0,
            common_rank: 3,
            individual_rank: 1,
            ica: false,
            optimizer: OptimizerConfig {
                max_iters: 500,
                ..OptimizerConfig::new(Method::Als)
            },
            scheme: ConstraintScheme::None,
            init: InitStrategy::Algebraic,
            seed: 0,
            runs: 50,
            folds: 4,
            metric: Metric::Canberra,
            linkage: Linkage::Complete,
            noise_snr: None,
        }
    }

    /// 20 x 20 x 5 group target (N = 5), common rank 5, individual rank 3,
    /// separation on the first mode.
    pub fn group_benchmark(flavor: GroupFlavor, scheme: ConstraintScheme) -> Self {
        let n = 5;
        let (model_flavor, lr_ranks, tucker_ranks) = match flavor {
            GroupFlavor::Glro => {
                let mut l = vec![3; n];
                l.push(5);
                (ModelFlavor::Glro, l, Vec::new())
            }
            GroupFlavor::Gtld => (ModelFlavor::Gtld, vec![3; n], vec![vec![5, 5]]),
        };
        Self {
            flavor: model_flavor,
            dims: vec![20, 20, n],
            n_objects: Some(n),
            lr_ranks,
            full_modes: 2,
            tucker_ranks,
            modes_of_interest: vec![0],
            scheme,
            init: InitStrategy::Subspace,
            ..Self::unconstrained_benchmark()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, IoError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| IoError::at(path.as_ref(), e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
            .unwrap_or_else(|| self.dims.last().copied().unwrap_or(0))
    }

    pub fn group_spec(&self) -> Option<GroupSpec> {
        let flavor = self.flavor.group()?;
        let mut spec = GroupSpec::new(flavor, self.n_objects(), self.modes_of_interest.clone());
        if let Some(c) = self.p_cum {
            spec.p_cum = c;
        }
        if let Some(m) = self.p_min {
            spec.p_min = m;
        }
        Some(spec)
    }

    /// Cross-field consistency; the model builders run the remaining checks.
    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: String| Err(IoError::Config(m));
        let d = self.dims.len();
        if d == 0 || self.dims.contains(&0) {
            return bad(format!("invalid dims {:?}", self.dims));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.folds < 2 {
            return bad("at least 2 folds are needed".into());
        }
        if let Some(snr) = self.noise_snr {
            if !(snr > 0.0) {
                return bad(format!("noise_snr {snr} must be positive"));
            }
        }
        self.optimizer
            .validate()
            .map_err(|e| IoError::Config(e.to_string()))?;
        match self.flavor {
            ModelFlavor::Btd => {
                if self.scheme != ConstraintScheme::None {
                    return bad("constraints need a group model (glro or gtld)".into());
                }
                if !self.modes_of_interest.is_empty() {
                    return bad("modes_of_interest apply to group models only".into());
                }
            }
            ModelFlavor::Glro | ModelFlavor::Gtld => {
                let n = self.n_objects();
                if self.dims[d - 1] != n {
                    return bad(format!("last dimension {} must equal N = {n}", self.dims[d - 1]));
                }
                let want = if self.flavor == ModelFlavor::Glro { n + 1 } else { n };
                if self.lr_ranks.len() != want {
                    return bad(format!(
                        "{:?} with N = {n} needs {want} lr_ranks, got {}",
                        self.flavor,
                        self.lr_ranks.len()
                    ));
                }
                match (self.flavor, self.tucker_ranks.len()) {
                    (ModelFlavor::Glro, 0) => {}
                    (ModelFlavor::Glro, _) => return bad("GLRO has no Tucker term".into()),
                    (_, 1) if self.tucker_ranks[0].len() == d - 1 => {}
                    _ => {
                        return bad(format!(
                            "GTLD needs one Tucker entry with {} data-mode ranks",
                            d - 1
                        ))
                    }
                }
                if let Some(&m) = self.modes_of_interest.iter().find(|&&m| m >= self.full_modes) {
                    return bad(format!("mode of interest {m} is not a full mode"));
                }
            }
        }
        self.template().map(|_| ())
    }

    pub fn template(&self) -> Result<BlockTermModel, IoError> {
        let model = match self.flavor {
            ModelFlavor::Btd => BlockTermModel::new(
                &self.dims,
                self.full_modes,
                &self.tucker_ranks,
                &self.lr_ranks,
            )?,
            ModelFlavor::Glro => build_glro(
                &self.dims,
                self.n_objects(),
                &self.lr_ranks,
                self.full_modes,
                &self.group_spec().expect("group flavor"),
            )?,
            ModelFlavor::Gtld => build_gtld(
                &self.dims,
                self.n_objects(),
                &self.lr_ranks,
                self.full_modes,
                &self.tucker_ranks[0],
                &self.group_spec().expect("group flavor"),
            )?,
        };
        Ok(model)
    }

    /// Settings of the classification and clustering pipelines.
    pub fn class_model_config(&self) -> Result<ClassModelConfig, IoError> {
        let flavor = self
            .flavor
            .group()
            .ok_or_else(|| IoError::Config("pipelines need flavor glro or gtld".into()))?;
        let mut c = ClassModelConfig::new(flavor, self.common_rank, self.individual_rank, self.gamma);
        c.ica = self.ica;
        c.seed = self.seed;
        c.method = self.optimizer.method;
        c.iters = self.optimizer.max_iters;
        c.scheme = if self.scheme == ConstraintScheme::None {
            ConstraintScheme::Projected
        } else {
            self.scheme
        };
        Ok(c)
    }
}

/// Ground truth drawn from the template (made feasible under a constraint
/// scheme) and its reconstruction, optionally with additive noise.
pub fn synth_generate(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(DenseTensor, BlockTermModel), IoError> {
    config.validate()?;
    let template = config.template()?;
    let mut truth = init_random(&template, seed, 1.0);
    if config.scheme != ConstraintScheme::None {
        let spec = truth.group().cloned().expect("validated group model");
        truth = project_model(&truth, &spec)?;
    }
    let mut target = truth.reconstruct();
    if let Some(snr) = config.noise_snr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6521);
        let noise = DenseTensor::from_fn(target.dims(), |_| StandardNormal.sample(&mut rng))?;
        let scale = target.frobenius_norm() / (snr * noise.frobenius_norm());
        target.axpy(scale, &noise)?;
    }
    Ok((target, truth))
}
