//! Subspace features and first-principal-angle classification.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fastica, AnalysisError};
use crate::constraints::{fit_constrained, project_model, ConstraintScheme};
use crate::init::init_subspace;
use crate::linalg::{leading_left_subspace, orthonormal_basis};
use crate::model::{build_glro, build_gtld, BlockTermModel, GroupFlavor, GroupSpec};
use crate::objective::ResidualState;
use crate::optim::{ConvergenceTrace, Method, OptimizerConfig};
use crate::tensor::DenseTensor;

/// Smallest principal angle between the column spaces of `z` and `s`.
pub fn principal_angle(z: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64, AnalysisError> {
    if z.nrows() != s.nrows() {
        return Err(AnalysisError::Dimension(format!(
            "{} rows against {}",
            z.nrows(),
            s.nrows()
        )));
    }
    if z.norm() == 0.0 || s.norm() == 0.0 {
        return Err(AnalysisError::ZeroSubspace);
    }
    let qz = orthonormal_basis(z, None);
    let qs = orthonormal_basis(s, None);
    Ok(angle_between_bases(&qz, &qs))
}

/// Cosine form for large angles, sine form for small ones.
fn angle_between_bases(qz: &DMatrix<f64>, qs: &DMatrix<f64>) -> f64 {
    let cross = qz.transpose() * qs;
    let cos = cross.singular_values().max().min(1.0);
    if cos * cos < 0.5 {
        return cos.acos();
    }
    let rest = qz - qs * (qs.transpose() * qz);
    let sin = rest.singular_values().min().clamp(0.0, 1.0);
    sin.asin()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassModel {
    pub label: usize,
    /// Orthonormal columns spanning the class's common subspace on the
    /// chosen mode.
    pub feature_basis: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassModelConfig {
    pub flavor: GroupFlavor,
    pub common_rank: usize,
    pub individual_rank: usize,
    /// Mode of the instance tensors on which features are compared.
    pub mode: usize,
    #[serde(default)]
    pub ica: bool,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_scheme")]
    pub scheme: ConstraintScheme,
}

fn default_iters() -> usize {
    10
}

fn default_method() -> Method {
    Method::Als
}

fn default_scheme() -> ConstraintScheme {
    ConstraintScheme::Projected
}

impl ClassModelConfig {
    pub fn new(flavor: GroupFlavor, common_rank: usize, individual_rank: usize, mode: usize) -> Self {
        Self {
            flavor,
            common_rank,
            individual_rank,
            mode,
            ica: false,
            iters: default_iters(),
            seed: 0,
            method: default_method(),
            scheme: default_scheme(),
        }
    }
}

fn stack(objects: &[DenseTensor]) -> Result<DenseTensor, AnalysisError> {
    let first = objects
        .first()
        .ok_or_else(|| AnalysisError::Invalid("no instances".into()))?;
    if objects.iter().any(|o| o.dims() != first.dims()) {
        return Err(AnalysisError::Dimension("instances differ in shape".into()));
    }
    let mut dims = first.dims().to_vec();
    dims.push(objects.len());
    let data: Vec<f64> = objects.iter().flat_map(|o| o.data().iter().copied()).collect();
    Ok(DenseTensor::new(dims, data)?)
}

/// Group template for `n` stacked instances of shape `dims`.
fn group_template(
    dims: &[usize],
    n: usize,
    cfg: &ClassModelConfig,
) -> Result<BlockTermModel, AnalysisError> {
    let p = dims.len() - 1;
    let spec = GroupSpec::new(cfg.flavor, n, vec![cfg.mode]);
    let model = match cfg.flavor {
        GroupFlavor::Glro => {
            let mut ranks = vec![cfg.individual_rank; n];
            ranks.push(cfg.common_rank);
            build_glro(dims, n, &ranks, p, &spec)?
        }
        GroupFlavor::Gtld => {
            let tucker: Vec<usize> = dims[..p].iter().map(|&nk| cfg.common_rank.min(nk)).collect();
            build_gtld(dims, n, &vec![cfg.individual_rank; n], p, &tucker, &spec)?
        }
    };
    Ok(model)
}

/// Fits a group model to instances stacked along a new trailing axis.
/// Returns the model, the stacked data and the optimizer trace.
pub fn fit_group_model(
    objects: &[DenseTensor],
    cfg: &ClassModelConfig,
) -> Result<(BlockTermModel, DenseTensor, ConvergenceTrace), AnalysisError> {
    let data = stack(objects)?;
    if cfg.mode + 1 >= data.order() {
        return Err(AnalysisError::Invalid(format!(
            "mode {} is not a data mode of order-{} instances",
            cfg.mode,
            data.order() - 1
        )));
    }
    let template = group_template(data.dims(), objects.len(), cfg)?;
    let mut model = init_subspace(&template, &data, cfg.seed);
    seed_common_subspaces(&mut model, &data);
    if cfg.scheme != ConstraintScheme::None {
        let spec = model.group().cloned().expect("group template");
        model = project_model(&model, &spec)?;
    }
    let state = ResidualState::new(model, data.clone())?;
    let mut opt = OptimizerConfig::new(cfg.method);
    opt.max_iters = cfg.iters;
    opt.seed = cfg.seed;
    let (model, trace) = fit_constrained(state, &opt, cfg.scheme)?;
    Ok((model, data, trace))
}

/// Aligns the common term's data-mode factors with the leading subspaces of
/// the instance mean.
fn seed_common_subspaces(model: &mut BlockTermModel, data: &DenseTensor) {
    let d = data.order();
    let n = data.dims()[d - 1];
    let slice_len = data.len() / n;
    let mut mean = vec![0.0; slice_len];
    for chunk in data.data().chunks(slice_len) {
        for (m, v) in mean.iter_mut().zip(chunk) {
            *m += v / n as f64;
        }
    }
    let mean = DenseTensor::new(data.dims()[..d - 1].to_vec(), mean).expect("slice shape");
    for k in 0..d - 1 {
        let Ok(unf) = mean.unfold(k) else { continue };
        let width = match model.group().map(|g| g.flavor) {
            Some(GroupFlavor::Gtld) => model.tucker_terms()[0].factors[k].ncols(),
            _ => model.lr_terms().last().map(|b| b.rank).unwrap_or(0),
        };
        let basis = leading_left_subspace(&unf, width);
        if basis.ncols() < width {
            continue;
        }
        match model.group().map(|g| g.flavor) {
            Some(GroupFlavor::Gtld) => model.tucker_terms_mut()[0].factors[k] = basis,
            _ => {
                if let Some(b) = model.lr_terms_mut().last_mut() {
                    b.full[k] = basis;
                }
            }
        }
    }
}

/// One [`ClassModel`] per distinct label, in increasing label order.
pub fn fit_class_models(
    instances: &[DenseTensor],
    labels: &[usize],
    cfg: &ClassModelConfig,
) -> Result<Vec<ClassModel>, AnalysisError> {
    if instances.len() != labels.len() {
        return Err(AnalysisError::Dimension(format!(
            "{} instances but {} labels",
            instances.len(),
            labels.len()
        )));
    }
    let mut classes: BTreeMap<usize, Vec<DenseTensor>> = BTreeMap::new();
    for (t, &l) in instances.iter().zip(labels) {
        classes.entry(l).or_default().push(t.clone());
    }
    let mut out = Vec::with_capacity(classes.len());
    for (label, objects) in classes {
        if objects.len() < 2 {
            return Err(AnalysisError::TooFewInstances {
                label,
                count: objects.len(),
            });
        }
        let (model, _, _) = fit_group_model(&objects, cfg)?;
        let mut u = model
            .common_factor(cfg.mode)
            .expect("group model has a common term")
            .clone();
        if cfg.ica && u.ncols() <= u.nrows() {
            let ica = fastica(&u, u.ncols(), cfg.seed)?;
            u = &u * ica.unmixing;
        }
        let basis = orthonormal_basis(&u, None);
        if basis.ncols() == 0 {
            return Err(AnalysisError::ZeroSubspace);
        }
        out.push(ClassModel {
            label,
            feature_basis: basis,
        });
    }
    Ok(out)
}

/// Label of the class model at the smallest first principal angle to the
/// leading mode-`mode` subspace of `y` (first model wins ties).
pub fn classify(y: &DenseTensor, models: &[ClassModel], mode: usize) -> Result<usize, AnalysisError> {
    if models.is_empty() {
        return Err(AnalysisError::Invalid("no class models".into()));
    }
    let z = y.unfold(mode)?;
    if z.norm() == 0.0 {
        return Err(AnalysisError::ZeroSubspace);
    }
    let mut best = (f64::INFINITY, models[0].label);
    for m in models {
        if m.feature_basis.nrows() != z.nrows() {
            return Err(AnalysisError::Dimension(format!(
                "basis has {} rows, mode {mode} has {}",
                m.feature_basis.nrows(),
                z.nrows()
            )));
        }
        let qz = leading_left_subspace(&z, m.feature_basis.ncols());
        let angle = angle_between_bases(&qz, &m.feature_basis);
        if angle < best.0 {
            best = (angle, m.label);
        }
    }
    Ok(best.1)
}

/// Per-object features: each object slice minus the common term's slice.
pub fn contrast(
    data: &DenseTensor,
    model: &BlockTermModel,
) -> Result<Vec<DVector<f64>>, AnalysisError> {
    if data.dims() != model.dims() {
        return Err(AnalysisError::Dimension(format!(
            "data {:?} against model {:?}",
            data.dims(),
            model.dims()
        )));
    }
    let n = *data.dims().last().expect("order >= 1");
    let len = data.len() / n;
    let common = model.reconstruct_common();
    Ok((0..n)
        .map(|i| {
            let raw = &data.data()[i * len..(i + 1) * len];
            match &common {
                Some(c) => {
                    let cs = &c.data()[i * len..(i + 1) * len];
                    DVector::from_iterator(len, raw.iter().zip(cs).map(|(a, b)| a - b))
                }
                None => DVector::from_column_slice(raw),
            }
        })
        .collect())
}
