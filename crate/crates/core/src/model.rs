//! Block-term models: Tucker blocks, (Lr,1) blocks, their mixture, and the
//! two group-analysis layouts built from them.
//!
//! A model is a sum of `M` Tucker terms and `N` (Lr,1) terms. Every (Lr,1)
//! term stores `P` full factor matrices (`n_k x L`) for the leading modes and
//! one compact vector per trailing mode; the compact vectors are replicated
//! to `L` identical columns when the term is expanded. In the group models
//! the last mode indexes objects: individual terms carry a fixed identity
//! column there, while the common term carries the group weight vector `p`.
//!
//! Free parameters are packed into a flat vector in a fixed order: all (Lr,1)
//! factors (term by term, mode by mode), then all Tucker factors, then all
//! Tucker cores. Structural values (identity columns, the zero off-diagonal
//! of a diagonal group factor) are not part of the vector.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{self, Core, Expanded};
use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
    #[error("parameter vector has length {found}, layout expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn inconsistent<T>(msg: impl Into<String>) -> Result<T> {
    Err(ModelError::Inconsistent(msg.into()))
}

/// How a compact (replicated) vector of an (Lr,1) term is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorRole {
    Free,
    /// Structural, never optimized (identity columns of the group mode).
    Fixed,
    /// The group weight vector `p`: free, but subject to the group constraints.
    GroupWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupFlavor {
    /// N individual (Lr,1) terms plus one common (Lr,1) term weighted by `p`.
    Glro,
    /// One common Tucker term with group factor `diag(p)` plus N individual
    /// (Lr,1) terms.
    Gtld,
}

/// Constraint constants of a group model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub flavor: GroupFlavor,
    pub n_objects: usize,
    pub p_cum: f64,
    pub p_min: f64,
    /// Zero-based modes on which common and individual factors must be orthogonal.
    pub modes_of_interest: Vec<usize>,
}

impl GroupSpec {
    /// Defaults: `p_cum = N`, `p_min = 0.01 * p_cum / N`.
    pub fn new(flavor: GroupFlavor, n_objects: usize, modes_of_interest: Vec<usize>) -> Self {
        let p_cum = n_objects as f64;
        Self {
            flavor,
            n_objects,
            p_cum,
            p_min: 0.01 * p_cum / n_objects.max(1) as f64,
            modes_of_interest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return inconsistent("group needs at least one object");
        }
        if !(self.p_min > 0.0) || !(self.p_cum > 0.0) {
            return inconsistent("p_min and p_cum must be positive");
        }
        if self.p_cum < self.n_objects as f64 * self.p_min {
            return inconsistent(format!(
                "infeasible weights: p_cum {} < N * p_min {}",
                self.p_cum,
                self.n_objects as f64 * self.p_min
            ));
        }
        Ok(())
    }

    pub fn feasible_weights(&self) -> DVector<f64> {
        DVector::from_element(self.n_objects, self.p_cum / self.n_objects as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuckerBlock {
    pub core: DenseTensor,
    pub factors: Vec<DMatrix<f64>>,
    /// The last factor is `diag(p)`; only its diagonal is a parameter.
    pub diagonal_last: bool,
}

impl TuckerBlock {
    pub fn ranks(&self) -> &[usize] {
        self.core.dims()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrBlock {
    /// Full factor matrices for the leading `P` modes, each `n_k x L`.
    pub full: Vec<DMatrix<f64>>,
    /// One vector per trailing mode, replicated to `L` columns.
    pub compact: Vec<DVector<f64>>,
    pub roles: Vec<VectorRole>,
    pub rank: usize,
}

impl LrBlock {
    /// Factor matrix of mode `k` with compact vectors replicated.
    pub fn expanded_factor(&self, k: usize) -> DMatrix<f64> {
        let p = self.full.len();
        if k < p {
            self.full[k].clone()
        } else {
            let c = &self.compact[k - p];
            DMatrix::from_fn(c.len(), self.rank, |i, _| c[i])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTermModel {
    dims: Vec<usize>,
    full_modes: usize,
    tucker: Vec<TuckerBlock>,
    lr: Vec<LrBlock>,
    group: Option<GroupSpec>,
}

/// Parameter role of one expanded factor matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum FactorKind {
    Full,
    Compact,
    Diagonal,
    Fixed,
}

/// Identifies a block: (Lr,1) blocks come first, then Tucker blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockId {
    Lr(usize),
    Tucker(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    Factor(usize),
    Core,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub block: BlockId,
    pub part: Part,
    pub offset: usize,
    pub len: usize,
}

/// Deterministic map from model pieces to index ranges of the parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn find(&self, block: BlockId, part: Part) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.block == block && s.part == part)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub data: DVector<f64>,
    pub layout: Layout,
}

impl BlockTermModel {
    /// Unconstrained mixed model with zero-initialized parameters.
    ///
    /// `tucker_ranks[m]` gives the core shape of Tucker term `m`;
    /// `lr_ranks[s]` the `L` of (Lr,1) term `s`. All (Lr,1) terms share
    /// `full_modes` full-sized factor matrices.
    pub fn new(
        dims: &[usize],
        full_modes: usize,
        tucker_ranks: &[Vec<usize>],
        lr_ranks: &[usize],
    ) -> Result<Self> {
        let d = dims.len();
        if d == 0 || dims.contains(&0) {
            return inconsistent(format!("invalid target shape {dims:?}"));
        }
        if tucker_ranks.is_empty() && lr_ranks.is_empty() {
            return inconsistent("model needs at least one term");
        }
        if full_modes > d {
            return inconsistent(format!("P = {full_modes} exceeds order {d}"));
        }
        let mut tucker = Vec::with_capacity(tucker_ranks.len());
        for ranks in tucker_ranks {
            if ranks.len() != d || ranks.contains(&0) {
                return inconsistent(format!("Tucker ranks {ranks:?} do not fit order {d}"));
            }
            tucker.push(TuckerBlock {
                core: DenseTensor::zeros(ranks)?,
                factors: dims
                    .iter()
                    .zip(ranks)
                    .map(|(&n, &r)| DMatrix::zeros(n, r))
                    .collect(),
                diagonal_last: false,
            });
        }
        let mut lr = Vec::with_capacity(lr_ranks.len());
        for &l in lr_ranks {
            if l == 0 {
                return inconsistent("(Lr,1) rank must be positive");
            }
            lr.push(LrBlock {
                full: dims[..full_modes]
                    .iter()
                    .map(|&n| DMatrix::zeros(n, l))
                    .collect(),
                compact: dims[full_modes..]
                    .iter()
                    .map(|&n| DVector::zeros(n))
                    .collect(),
                roles: vec![VectorRole::Free; d - full_modes],
                rank: l,
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            full_modes,
            tucker,
            lr,
            group: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn full_modes(&self) -> usize {
        self.full_modes
    }

    pub fn tucker_terms(&self) -> &[TuckerBlock] {
        &self.tucker
    }

    pub fn lr_terms(&self) -> &[LrBlock] {
        &self.lr
    }

    pub fn tucker_terms_mut(&mut self) -> &mut [TuckerBlock] {
        &mut self.tucker
    }

    pub fn lr_terms_mut(&mut self) -> &mut [LrBlock] {
        &mut self.lr
    }

    pub fn group(&self) -> Option<&GroupSpec> {
        self.group.as_ref()
    }

    pub fn set_group(&mut self, spec: GroupSpec) {
        self.group = Some(spec);
    }

    pub fn n_blocks(&self) -> usize {
        self.lr.len() + self.tucker.len()
    }

    /// The `L` values of the (Lr,1) terms.
    pub fn lr_ranks(&self) -> Vec<usize> {
        self.lr.iter().map(|b| b.rank).collect()
    }

    /// Current group weights `p`, if the model has a group axis.
    pub fn group_weights(&self) -> Option<DVector<f64>> {
        match self.group.as_ref()?.flavor {
            GroupFlavor::Glro => {
                let common = self.lr.last()?;
                common.compact.last().cloned()
            }
            GroupFlavor::Gtld => {
                let t = self.tucker.first()?;
                Some(t.factors.last()?.diagonal())
            }
        }
    }

    pub fn set_group_weights(&mut self, p: &DVector<f64>) {
        match self.group.as_ref().map(|g| g.flavor) {
            Some(GroupFlavor::Glro) => {
                if let Some(c) = self.lr.last_mut().and_then(|b| b.compact.last_mut()) {
                    c.copy_from(p);
                }
            }
            Some(GroupFlavor::Gtld) => {
                if let Some(a) = self.tucker.first_mut().and_then(|t| t.factors.last_mut()) {
                    a.fill(0.0);
                    a.set_diagonal(p);
                }
            }
            None => {}
        }
    }

    /// Common-term factor of a full mode (the separation reference `U_gamma`).
    pub fn common_factor(&self, mode: usize) -> Option<&DMatrix<f64>> {
        match self.group.as_ref()?.flavor {
            GroupFlavor::Glro => self.lr.last()?.full.get(mode),
            GroupFlavor::Gtld => self.tucker.first()?.factors.get(mode),
        }
    }

    /// Indices of the individual (Lr,1) terms of a group model.
    pub fn individual_terms(&self) -> std::ops::Range<usize> {
        match self.group.as_ref().map(|g| g.flavor) {
            Some(GroupFlavor::Glro) => 0..self.lr.len().saturating_sub(1),
            _ => 0..self.lr.len(),
        }
    }

    pub(crate) fn factor_kind(&self, block: BlockId, mode: usize) -> FactorKind {
        match block {
            BlockId::Lr(s) => {
                if mode < self.full_modes {
                    FactorKind::Full
                } else {
                    match self.lr[s].roles[mode - self.full_modes] {
                        VectorRole::Fixed => FactorKind::Fixed,
                        _ => FactorKind::Compact,
                    }
                }
            }
            BlockId::Tucker(m) => {
                if self.tucker[m].diagonal_last && mode + 1 == self.dims.len() {
                    FactorKind::Diagonal
                } else {
                    FactorKind::Full
                }
            }
        }
    }

    pub(crate) fn block_ids(&self) -> Vec<BlockId> {
        (0..self.lr.len())
            .map(BlockId::Lr)
            .chain((0..self.tucker.len()).map(BlockId::Tucker))
            .collect()
    }

    /// Expanded (replicated, dense) representation of every block.
    pub(crate) fn expanded_blocks(&self) -> Vec<Expanded> {
        let d = self.order();
        let mut out = Vec::with_capacity(self.n_blocks());
        for b in &self.lr {
            out.push(Expanded {
                factors: (0..d).map(|k| b.expanded_factor(k)).collect(),
                core: Core::Diagonal(b.rank),
            });
        }
        for t in &self.tucker {
            out.push(Expanded {
                factors: t.factors.clone(),
                core: Core::Dense(t.core.clone()),
            });
        }
        out
    }

    pub fn layout(&self) -> Layout {
        let d = self.order();
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |block, part, len: usize, offset: &mut usize| {
            if len > 0 {
                segments.push(Segment {
                    block,
                    part,
                    offset: *offset,
                    len,
                });
                *offset += len;
            }
        };
        for s in 0..self.lr.len() {
            let id = BlockId::Lr(s);
            for k in 0..d {
                let len = match self.factor_kind(id, k) {
                    FactorKind::Full => self.dims[k] * self.lr[s].rank,
                    FactorKind::Compact => self.dims[k],
                    _ => 0,
                };
                push(id, Part::Factor(k), len, &mut offset);
            }
        }
        for m in 0..self.tucker.len() {
            let id = BlockId::Tucker(m);
            for k in 0..d {
                let len = match self.factor_kind(id, k) {
                    FactorKind::Full => self.tucker[m].factors[k].len(),
                    FactorKind::Diagonal => self.dims[k],
                    _ => 0,
                };
                push(id, Part::Factor(k), len, &mut offset);
            }
        }
        for m in 0..self.tucker.len() {
            push(
                BlockId::Tucker(m),
                Part::Core,
                self.tucker[m].core.len(),
                &mut offset,
            );
        }
        Layout {
            segments,
            len: offset,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    pub fn reconstruct(&self) -> DenseTensor {
        kernels::reconstruct_sum(&self.expanded_blocks(), &self.dims)
    }

    /// Reconstruction of a single block.
    pub fn reconstruct_block(&self, block: BlockId) -> DenseTensor {
        let idx = match block {
            BlockId::Lr(s) => s,
            BlockId::Tucker(m) => self.lr.len() + m,
        };
        let e = &self.expanded_blocks()[idx];
        kernels::reconstruct_block(&e.factor_refs(), e.core.as_ref(), &self.dims)
    }

    /// Reconstruction of the common term of a group model.
    pub fn reconstruct_common(&self) -> Option<DenseTensor> {
        match self.group.as_ref()?.flavor {
            GroupFlavor::Glro => Some(self.reconstruct_block(BlockId::Lr(self.lr.len() - 1))),
            GroupFlavor::Gtld => Some(self.reconstruct_block(BlockId::Tucker(0))),
        }
    }

    pub fn pack(&self) -> ParamVector {
        let layout = self.layout();
        let mut data = DVector::zeros(layout.len());
        for seg in layout.segments() {
            let dst = &mut data.as_mut_slice()[seg.offset..seg.offset + seg.len];
            match (seg.block, seg.part) {
                (BlockId::Lr(s), Part::Factor(k)) => {
                    let b = &self.lr[s];
                    if k < self.full_modes {
                        dst.copy_from_slice(b.full[k].as_slice());
                    } else {
                        dst.copy_from_slice(b.compact[k - self.full_modes].as_slice());
                    }
                }
                (BlockId::Tucker(m), Part::Factor(k)) => {
                    let a = &self.tucker[m].factors[k];
                    if self.factor_kind(seg.block, k) == FactorKind::Diagonal {
                        dst.copy_from_slice(a.diagonal().as_slice());
                    } else {
                        dst.copy_from_slice(a.as_slice());
                    }
                }
                (BlockId::Tucker(m), Part::Core) => {
                    dst.copy_from_slice(self.tucker[m].core.data());
                }
                (BlockId::Lr(_), Part::Core) => {
                    unreachable!("(Lr,1) terms have no core parameters")
                }
            }
        }
        ParamVector { data, layout }
    }

    /// Copy of `self` with free parameters replaced by `x`; structural
    /// values are kept from `self`.
    pub fn unpack(&self, x: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.assign(x)?;
        Ok(out)
    }

    /// In-place variant of [`BlockTermModel::unpack`].
    pub fn assign(&mut self, x: &[f64]) -> Result<()> {
        let layout = self.layout();
        if x.len() != layout.len() {
            return Err(ModelError::LengthMismatch {
                expected: layout.len(),
                found: x.len(),
            });
        }
        for seg in layout.segments() {
            let src = &x[seg.offset..seg.offset + seg.len];
            match (seg.block, seg.part) {
                (BlockId::Lr(s), Part::Factor(k)) => {
                    let p = self.full_modes;
                    let b = &mut self.lr[s];
                    if k < p {
                        b.full[k].as_mut_slice().copy_from_slice(src);
                    } else {
                        b.compact[k - p].as_mut_slice().copy_from_slice(src);
                    }
                }
                (BlockId::Tucker(m), Part::Factor(k)) => {
                    let diag = self.factor_kind(seg.block, k) == FactorKind::Diagonal;
                    let a = &mut self.tucker[m].factors[k];
                    if diag {
                        a.fill(0.0);
                        a.set_diagonal(&DVector::from_column_slice(src));
                    } else {
                        a.as_mut_slice().copy_from_slice(src);
                    }
                }
                (BlockId::Tucker(m), Part::Core) => {
                    self.tucker[m].core.data_mut().copy_from_slice(src);
                }
                (BlockId::Lr(_), Part::Core) => {
                    unreachable!("(Lr,1) terms have no core parameters")
                }
            }
        }
        Ok(())
    }
}

pub fn reconstruct(model: &BlockTermModel) -> DenseTensor {
    model.reconstruct()
}

pub fn pack(model: &BlockTermModel) -> ParamVector {
    model.pack()
}

pub fn unpack(x: &ParamVector, template: &BlockTermModel) -> Result<BlockTermModel> {
    template.unpack(x.data.as_slice())
}

fn check_group_shape(dims: &[usize], n_objects: usize, full_modes: usize) -> Result<()> {
    let d = dims.len();
    if d < 2 {
        return inconsistent("group models need at least one data mode plus the group mode");
    }
    if dims[d - 1] != n_objects {
        return inconsistent(format!(
            "last mode has size {}, expected N = {}",
            dims[d - 1],
            n_objects
        ));
    }
    if full_modes > d - 1 {
        return inconsistent(format!(
            "P = {full_modes} must leave the group mode compact (order {d})"
        ));
    }
    Ok(())
}

fn check_modes_of_interest(spec: &GroupSpec, full_modes: usize) -> Result<()> {
    if let Some(&m) = spec.modes_of_interest.iter().find(|&&m| m >= full_modes) {
        return inconsistent(format!(
            "mode of interest {m} is not among the {full_modes} full modes"
        ));
    }
    Ok(())
}

fn individual_lr_block(dims: &[usize], full_modes: usize, rank: usize, object: usize) -> LrBlock {
    let d = dims.len();
    let mut compact: Vec<DVector<f64>> = dims[full_modes..]
        .iter()
        .map(|&n| DVector::zeros(n))
        .collect();
    let mut roles = vec![VectorRole::Free; d - full_modes];
    let last = compact.len() - 1;
    compact[last][object] = 1.0;
    roles[last] = VectorRole::Fixed;
    LrBlock {
        full: dims[..full_modes]
            .iter()
            .map(|&n| DMatrix::zeros(n, rank))
            .collect(),
        compact,
        roles,
        rank,
    }
}

/// Group (Lr,1) model: `ranks` holds `L_1..L_N` for the individual terms
/// followed by `L_{N+1}` for the common term.
pub fn build_glro(
    dims: &[usize],
    n_objects: usize,
    ranks: &[usize],
    full_modes: usize,
    spec: &GroupSpec,
) -> Result<BlockTermModel> {
    check_group_shape(dims, n_objects, full_modes)?;
    if ranks.len() != n_objects + 1 {
        return inconsistent(format!(
            "GLRO needs N + 1 = {} ranks, got {}",
            n_objects + 1,
            ranks.len()
        ));
    }
    if ranks.contains(&0) {
        return inconsistent("(Lr,1) rank must be positive");
    }
    if spec.flavor != GroupFlavor::Glro || spec.n_objects != n_objects {
        return inconsistent("group spec does not describe this GLRO model");
    }
    spec.validate()?;
    check_modes_of_interest(spec, full_modes)?;
    let d = dims.len();
    let mut lr: Vec<LrBlock> = (0..n_objects)
        .map(|i| individual_lr_block(dims, full_modes, ranks[i], i))
        .collect();
    let mut common = individual_lr_block(dims, full_modes, ranks[n_objects], 0);
    let last = d - full_modes - 1;
    common.compact[last] = spec.feasible_weights();
    common.roles[last] = VectorRole::GroupWeights;
    lr.push(common);
    Ok(BlockTermModel {
        dims: dims.to_vec(),
        full_modes,
        tucker: Vec::new(),
        lr,
        group: Some(spec.clone()),
    })
}

/// Group Tucker-(Lr,1) model: one common Tucker term with ranks
/// `tucker_ranks` on the data modes (rank N on the group mode, where its
/// factor is `diag(p)`) plus N individual (Lr,1) terms of ranks `ranks`.
pub fn build_gtld(
    dims: &[usize],
    n_objects: usize,
    ranks: &[usize],
    full_modes: usize,
    tucker_ranks: &[usize],
    spec: &GroupSpec,
) -> Result<BlockTermModel> {
    check_group_shape(dims, n_objects, full_modes)?;
    let d = dims.len();
    if ranks.len() != n_objects {
        return inconsistent(format!(
            "GTLD needs N = {} individual ranks, got {}",
            n_objects,
            ranks.len()
        ));
    }
    if ranks.contains(&0) {
        return inconsistent("(Lr,1) rank must be positive");
    }
    if tucker_ranks.len() != d - 1 || tucker_ranks.contains(&0) {
        return inconsistent(format!(
            "GTLD needs {} positive Tucker ranks for the data modes, got {:?}",
            d - 1,
            tucker_ranks
        ));
    }
    if spec.flavor != GroupFlavor::Gtld || spec.n_objects != n_objects {
        return inconsistent("group spec does not describe this GTLD model");
    }
    spec.validate()?;
    check_modes_of_interest(spec, full_modes)?;
    let mut core_dims = tucker_ranks.to_vec();
    core_dims.push(n_objects);
    let mut factors: Vec<DMatrix<f64>> = dims[..d - 1]
        .iter()
        .zip(tucker_ranks)
        .map(|(&n, &r)| DMatrix::zeros(n, r))
        .collect();
    factors.push(DMatrix::from_diagonal(&spec.feasible_weights()));
    let tucker = vec![TuckerBlock {
        core: DenseTensor::zeros(&core_dims)?,
        factors,
        diagonal_last: true,
    }];
    let lr = (0..n_objects)
        .map(|i| individual_lr_block(dims, full_modes, ranks[i], i))
        .collect();
    Ok(BlockTermModel {
        dims: dims.to_vec(),
        full_modes,
        tucker,
        lr,
        group: Some(spec.clone()),
    })
}

/// Fills every free parameter with i.i.d. `N(0, 1) * scale` draws
/// (deterministic per seed); group weights start at the feasible point
/// `p_cum / N`.
pub fn init_random(template: &BlockTermModel, seed: u64, scale: f64) -> BlockTermModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = template.n_params();
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect();
    let mut model = template.unpack(&x).expect("length taken from the layout");
    if let Some(spec) = model.group.clone() {
        model.set_group_weights(&spec.feasible_weights());
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::outer;

    fn vec_tensor(v: &DVector<f64>) -> DenseTensor {
        DenseTensor::new(vec![v.len()], v.as_slice().to_vec()).unwrap()
    }

    #[test]
    fn single_rank_one_term_is_outer_product() {
        let mut m = BlockTermModel::new(&[2, 3, 2], 3, &[], &[1]).unwrap();
        let a = DVector::from_column_slice(&[1.0, -2.0]);
        let b = DVector::from_column_slice(&[0.5, 1.0, 3.0]);
        let c = DVector::from_column_slice(&[2.0, -1.0]);
        m.lr_terms_mut()[0].full = vec![
            DMatrix::from_column_slice(2, 1, a.as_slice()),
            DMatrix::from_column_slice(3, 1, b.as_slice()),
            DMatrix::from_column_slice(2, 1, c.as_slice()),
        ];
        let expected = outer(&outer(&vec_tensor(&a), &vec_tensor(&b)), &vec_tensor(&c));
        let got = m.reconstruct();
        assert!((got.sub(&expected).unwrap()).frobenius_norm() < 1e-14);
    }

    #[test]
    fn identity_tucker_block_embeds_core() {
        let mut m = BlockTermModel::new(&[2, 2, 2], 0, &[vec![2, 2, 2]], &[]).unwrap();
        let core =
            DenseTensor::from_fn(&[2, 2, 2], |i| (i[0] + 2 * i[1] + 4 * i[2]) as f64).unwrap();
        m.tucker_terms_mut()[0].core = core.clone();
        for f in &mut m.tucker_terms_mut()[0].factors {
            *f = DMatrix::identity(2, 2);
        }
        assert_eq!(m.reconstruct(), core);
    }

    #[test]
    fn layout_count_for_unconstrained_benchmark() {
        let m = BlockTermModel::new(&[20, 20, 20], 2, &[vec![3, 3, 3]], &[3; 5]).unwrap();
        // enumerate segment by segment
        let mut count = 0;
        for _ in 0..5 {
            count += 20 * 3 + 20 * 3 + 20;
        }
        count += 3 * 20 * 3 + 27;
        assert_eq!(count, 907);
        assert_eq!(m.n_params(), count);
        let layout = m.layout();
        // C factors first, then A factors, then cores
        let first_tucker = layout
            .segments()
            .iter()
            .position(|s| matches!(s.block, BlockId::Tucker(_)))
            .unwrap();
        assert!(layout.segments()[..first_tucker]
            .iter()
            .all(|s| matches!(s.block, BlockId::Lr(_))));
        assert_eq!(layout.segments().last().unwrap().part, Part::Core);
    }

    #[test]
    fn zero_vector_keeps_frozen_structure() {
        let spec = GroupSpec::new(GroupFlavor::Glro, 3, vec![0]);
        let m = build_glro(&[4, 5, 3], 3, &[2, 2, 2, 1], 2, &spec).unwrap();
        let z = m.unpack(&vec![0.0; m.n_params()]).unwrap();
        for (i, b) in z.lr_terms()[..3].iter().enumerate() {
            let e = b.compact.last().unwrap();
            assert_eq!(
                e.as_slice(),
                DVector::<f64>::from_fn(3, |j, _| (j == i) as u8 as f64).as_slice()
            );
            assert!(b.full.iter().all(|f| f.iter().all(|&v| v == 0.0)));
        }
        assert_eq!(z.group_weights().unwrap(), DVector::zeros(3));
    }

    #[test]
    fn glro_group_mode_pattern() {
        let spec = GroupSpec::new(GroupFlavor::Glro, 5, vec![0]);
        let m = init_random(
            &build_glro(&[20, 20, 5], 5, &[3; 6], 2, &spec).unwrap(),
            1,
            1.0,
        );
        // expanded last-mode factor [I_N p] E is 5 x 18
        let cols: Vec<DMatrix<f64>> = m.lr_terms().iter().map(|b| b.expanded_factor(2)).collect();
        let total: usize = cols.iter().map(|c| c.ncols()).sum();
        assert_eq!(total, 18);
        for (i, c) in cols.iter().take(5).enumerate() {
            for j in 0..3 {
                for r in 0..5 {
                    assert_eq!(c[(r, j)], (r == i) as u8 as f64);
                }
            }
        }
        assert_eq!(cols[5].column(0), m.group_weights().unwrap().column(0));
        assert_eq!(m.group_weights().unwrap(), DVector::from_element(5, 1.0));
    }

    #[test]
    fn gtld_excludes_frozen_entries() {
        let spec = GroupSpec::new(GroupFlavor::Gtld, 5, vec![0]);
        let t = build_gtld(&[20, 20, 5], 5, &[3; 5], 2, &[3, 3], &spec).unwrap();
        // individuals: 20*3 + 20*3 (e_i fixed); Tucker: 20*3*2 + diag 5 + core 3*3*5
        assert_eq!(t.n_params(), 5 * 120 + 120 + 5 + 45);
        let m = init_random(&t, 3, 1.0);
        let x = m.pack();
        let back = m.unpack(x.data.as_slice()).unwrap();
        assert_eq!(back, m);
        let ad = back.tucker_terms()[0].factors.last().unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(ad[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn builders_reject_inconsistent_shapes() {
        let spec = GroupSpec::new(GroupFlavor::Glro, 3, vec![0]);
        assert!(build_glro(&[4, 5, 4], 3, &[1; 4], 2, &spec).is_err());
        assert!(build_glro(&[4, 5, 3], 3, &[1; 3], 2, &spec).is_err());
        assert!(build_glro(&[4, 5, 3], 3, &[1; 4], 3, &spec).is_err());
        let gspec = GroupSpec::new(GroupFlavor::Gtld, 3, vec![0]);
        assert!(build_gtld(&[4, 5, 3], 3, &[1; 3], 2, &[2], &gspec).is_err());
        assert!(build_gtld(&[4, 5, 3], 3, &[1; 3], 2, &[2, 2], &spec).is_err());
        let bad = GroupSpec::new(GroupFlavor::Glro, 3, vec![2]);
        assert!(build_glro(&[4, 5, 3], 3, &[1; 4], 2, &bad).is_err());
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let m = BlockTermModel::new(&[3, 3], 1, &[], &[2]).unwrap();
        assert!(matches!(
            m.unpack(&[0.0; 3]),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn init_random_is_deterministic() {
        let spec = GroupSpec::new(GroupFlavor::Gtld, 5, vec![0]);
        let t = build_gtld(&[6, 5, 5], 5, &[2; 5], 2, &[2, 2], &spec).unwrap();
        let a = init_random(&t, 11, 1.0);
        let b = init_random(&t, 11, 1.0);
        let c = init_random(&t, 12, 1.0);
        assert_eq!(a, b);
        assert_ne!(a.pack().data, c.pack().data);
        assert_eq!(a.group_weights().unwrap(), DVector::from_element(5, 1.0));
    }
}
