//! Model directories: one container per factor, vector and core plus a
//! `model.json` manifest describing the structure.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::container::{load_container, save_container};
use super::IoError;
use crate::model::{BlockTermModel, GroupSpec, VectorRole};
use crate::tensor::DenseTensor;

pub const MODEL_MANIFEST: &str = "model.json";
const MODEL_FORMAT: &str = "gbtd-model";
const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LrEntry {
    rank: usize,
    roles: Vec<VectorRole>,
    full: Vec<String>,
    compact: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TuckerEntry {
    core: String,
    factors: Vec<String>,
    diagonal_last: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    version: u32,
    dims: Vec<usize>,
    full_modes: usize,
    group: Option<GroupSpec>,
    lr: Vec<LrEntry>,
    tucker: Vec<TuckerEntry>,
}

fn matrix_tensor(m: &DMatrix<f64>) -> DenseTensor {
    DenseTensor::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec()).expect("matrix shape")
}

fn vector_tensor(v: &DVector<f64>) -> DenseTensor {
    DenseTensor::new(vec![v.len()], v.as_slice().to_vec()).expect("vector shape")
}

pub fn save_model(model: &BlockTermModel, dir: impl AsRef<Path>) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IoError::at(dir, e))?;
    let mut lr = Vec::new();
    for (s, b) in model.lr_terms().iter().enumerate() {
        let mut entry = LrEntry {
            rank: b.rank,
            roles: b.roles.clone(),
            full: Vec::new(),
            compact: Vec::new(),
        };
        for (k, f) in b.full.iter().enumerate() {
            let name = format!("lr{s}_factor{k}.gbtd");
            save_container(dir.join(&name), &matrix_tensor(f), None)?;
            entry.full.push(name);
        }
        for (k, c) in b.compact.iter().enumerate() {
            let name = format!("lr{s}_vector{}.gbtd", k + b.full.len());
            save_container(dir.join(&name), &vector_tensor(c), None)?;
            entry.compact.push(name);
        }
        lr.push(entry);
    }
    let mut tucker = Vec::new();
    for (m, t) in model.tucker_terms().iter().enumerate() {
        let core = format!("tucker{m}_core.gbtd");
        save_container(dir.join(&core), &t.core, None)?;
        let mut factors = Vec::new();
        for (k, f) in t.factors.iter().enumerate() {
            let name = format!("tucker{m}_factor{k}.gbtd");
            save_container(dir.join(&name), &matrix_tensor(f), None)?;
            factors.push(name);
        }
        tucker.push(TuckerEntry {
            core,
            factors,
            diagonal_last: t.diagonal_last,
        });
    }
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        dims: model.dims().to_vec(),
        full_modes: model.full_modes(),
        group: model.group().cloned(),
        lr,
        tucker,
    };
    let path = dir.join(MODEL_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| IoError::at(&path, e))
}

fn load_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>, IoError> {
    let (t, _) = load_container(path)?;
    if t.dims() != [rows, cols] {
        return Err(IoError::ShapeMismatch(format!(
            "{} has shape {:?}, expected [{rows}, {cols}]",
            path.display(),
            t.dims()
        )));
    }
    Ok(DMatrix::from_vec(rows, cols, t.into_data()))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<BlockTermModel, IoError> {
    let dir = dir.as_ref();
    let path = dir.join(MODEL_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| IoError::at(&path, e))?;
    let man: ModelManifest =
        serde_json::from_str(&text).map_err(|e| IoError::CorruptMetadata(e.to_string()))?;
    if man.format != MODEL_FORMAT || man.version != MODEL_VERSION {
        return Err(IoError::CorruptMetadata(format!(
            "unsupported model manifest {} v{}",
            man.format, man.version
        )));
    }
    let mut core_shapes = Vec::new();
    let mut cores = Vec::new();
    for t in &man.tucker {
        let (core, _) = load_container(dir.join(&t.core))?;
        core_shapes.push(core.dims().to_vec());
        cores.push(core);
    }
    let ranks: Vec<usize> = man.lr.iter().map(|e| e.rank).collect();
    let mut model = BlockTermModel::new(&man.dims, man.full_modes, &core_shapes, &ranks)?;
    if let Some(g) = man.group.clone() {
        model.set_group(g);
    }
    let dims = man.dims.clone();
    for (b, e) in model.lr_terms_mut().iter_mut().zip(&man.lr) {
        if e.full.len() != b.full.len() || e.compact.len() != b.compact.len() {
            return Err(IoError::ShapeMismatch("(Lr,1) term lists the wrong number of parts".into()));
        }
        for (k, name) in e.full.iter().enumerate() {
            b.full[k] = load_matrix(&dir.join(name), dims[k], e.rank)?;
        }
        for (k, name) in e.compact.iter().enumerate() {
            let p = dir.join(name);
            let (t, _) = load_container(&p)?;
            let n = dims[man.full_modes + k];
            if t.dims() != [n] {
                return Err(IoError::ShapeMismatch(format!("{} is not a length-{n} vector", p.display())));
            }
            b.compact[k] = DVector::from_vec(t.into_data());
        }
        b.roles = e.roles.clone();
    }
    for ((t, e), core) in model.tucker_terms_mut().iter_mut().zip(&man.tucker).zip(cores) {
        let ranks = core.dims().to_vec();
        if e.factors.len() != dims.len() {
            return Err(IoError::ShapeMismatch("Tucker term lists the wrong number of factors".into()));
        }
        for (k, name) in e.factors.iter().enumerate() {
            t.factors[k] = load_matrix(&dir.join(name), dims[k], ranks[k])?;
        }
        t.core = core;
        t.diagonal_last = e.diagonal_last;
    }
    Ok(model)
}
