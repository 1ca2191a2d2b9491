//! Block-level contractions on the expanded (replicated) representation.
//!
//! Every block is seen as `[[core; A_1, ..., A_d]]` where (Lr,1) terms have
//! a superdiagonal identity core. With `M_k = (kron_{l != k} A_l) core_(k)^T`
//! the mode-k unfolding of a block is `A_k M_k^T`; the routines here evaluate
//! products with `M_k` and cross-Gram matrices `M_k^T M'_k` without ever
//! forming `M_k`.

use nalgebra::DMatrix;

use crate::model::{BlockId, BlockTermModel, FactorKind};
use crate::tensor::{khatri_rao_colmajor, DenseTensor};

#[derive(Clone, Debug)]
pub(crate) enum Core {
    /// Superdiagonal identity of size `R x ... x R`.
    Diagonal(usize),
    Dense(DenseTensor),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum CoreRef<'a> {
    Diagonal(usize),
    Dense(&'a DenseTensor),
}

impl Core {
    pub fn as_ref(&self) -> CoreRef<'_> {
        match self {
            Core::Diagonal(r) => CoreRef::Diagonal(*r),
            Core::Dense(t) => CoreRef::Dense(t),
        }
    }
}

impl CoreRef<'_> {
    fn densify(&self, order: usize) -> DenseTensor {
        match *self {
            CoreRef::Dense(t) => t.clone(),
            CoreRef::Diagonal(r) => {
                let dims = vec![r; order];
                let mut t = DenseTensor::zeros(&dims).expect("rank >= 1");
                let idx_step: usize = (0..order).map(|k| r.pow(k as u32)).sum();
                for a in 0..r {
                    t.data_mut()[a * idx_step] = 1.0;
                }
                t
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Expanded {
    pub factors: Vec<DMatrix<f64>>,
    pub core: Core,
}

impl Expanded {
    pub fn factor_refs(&self) -> Vec<&DMatrix<f64>> {
        self.factors.iter().collect()
    }
}

/// Perturbation of a block in expanded coordinates; `None` entries are zero.
#[derive(Clone, Debug)]
pub(crate) struct Tangent {
    pub factors: Vec<Option<DMatrix<f64>>>,
    pub core: Option<DenseTensor>,
}

/// Gradient of a block in expanded coordinates.
#[derive(Clone, Debug)]
pub(crate) struct BlockGrad {
    pub factors: Vec<Option<DMatrix<f64>>>,
    pub core: Option<DenseTensor>,
}

pub(crate) fn reconstruct_block(
    factors: &[&DMatrix<f64>],
    core: CoreRef<'_>,
    dims: &[usize],
) -> DenseTensor {
    match core {
        CoreRef::Diagonal(r) => {
            // unfold_0 = A_0 * KR(A_{d-1}, ..., A_1)^T
            let kr = khatri_rao_colmajor(&factors[1..], r);
            let m = factors[0] * kr.transpose();
            DenseTensor::from_parts(dims.to_vec(), m.as_slice().to_vec())
        }
        CoreRef::Dense(g) => {
            let mut t = g.clone();
            for (k, a) in factors.iter().enumerate() {
                t = t.mode_mul(a, k).expect("factor shape matches core");
            }
            t
        }
    }
}

pub(crate) fn reconstruct_sum(blocks: &[Expanded], dims: &[usize]) -> DenseTensor {
    let mut out = DenseTensor::zeros(dims).expect("valid model shape");
    for b in blocks {
        let t = reconstruct_block(&b.factor_refs(), b.core.as_ref(), dims);
        out.axpy(1.0, &t).expect("block shape matches model");
    }
    out
}

/// `Y_(k) M_k`: the mode-k factor gradient of `<Y, block>`.
pub(crate) fn adjoint_factor(
    y: &DenseTensor,
    factors: &[&DMatrix<f64>],
    core: CoreRef<'_>,
    k: usize,
) -> DMatrix<f64> {
    match core {
        CoreRef::Diagonal(_) => mttkrp_refs(y, factors, k),
        CoreRef::Dense(g) => {
            let mut t = y.clone();
            // contract the largest modes first to shrink the intermediate quickly
            let mut modes: Vec<usize> = (0..factors.len()).filter(|&l| l != k).collect();
            modes.sort_by_key(|&l| std::cmp::Reverse(factors[l].nrows()));
            for l in modes {
                t = t
                    .mode_mul(&factors[l].transpose(), l)
                    .expect("shapes agree");
            }
            t.unfold(k).expect("mode in range") * g.unfold(k).expect("mode in range").transpose()
        }
    }
}

/// `Y x_1 A_1^T ... x_d A_d^T`: the core gradient of `<Y, block>`.
pub(crate) fn adjoint_core(y: &DenseTensor, factors: &[&DMatrix<f64>]) -> DenseTensor {
    let mut t = y.clone();
    let mut modes: Vec<usize> = (0..factors.len()).collect();
    modes.sort_by_key(|&l| std::cmp::Reverse(factors[l].nrows()));
    for l in modes {
        t = t
            .mode_mul(&factors[l].transpose(), l)
            .expect("shapes agree");
    }
    t
}

fn mttkrp_refs(y: &DenseTensor, factors: &[&DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let owned: Vec<DMatrix<f64>> = factors
        .iter()
        .enumerate()
        .map(|(l, f)| {
            if l == k {
                DMatrix::zeros(0, 0)
            } else {
                (*f).clone()
            }
        })
        .collect();
    crate::tensor::mttkrp(y, &owned, k).expect("shapes agree")
}

/// Small-core contraction
/// `out[i_k, j_k] = sum c2[i] c1[j] prod_{l != k} W_l[i_l, j_l]`.
///
/// With `W_l = A2_l^T A1_l` this is `M2_k^T M1_k`.
pub(crate) fn small_contract(
    c2: CoreRef<'_>,
    ws: &[Option<&DMatrix<f64>>],
    c1: CoreRef<'_>,
    k: usize,
) -> DMatrix<f64> {
    let d = ws.len();
    match (c2, c1) {
        (CoreRef::Diagonal(r2), CoreRef::Diagonal(r1)) => {
            let mut out = DMatrix::from_element(r2, r1, 1.0);
            for (l, w) in ws.iter().enumerate() {
                if l != k {
                    out.component_mul_assign(w.expect("W given for every mode but k"));
                }
            }
            out
        }
        _ => {
            let mut t = c2.densify(d);
            for (l, w) in ws.iter().enumerate() {
                if l != k {
                    t = t
                        .mode_mul(&w.expect("W given for every mode but k").transpose(), l)
                        .expect("shapes agree");
                }
            }
            let c1 = c1.densify(d);
            t.unfold(k).expect("mode in range") * c1.unfold(k).expect("mode in range").transpose()
        }
    }
}

/// `c2 x_1 W_1^T ... x_d W_d^T` (shape of the target core).
pub(crate) fn core_project(c2: CoreRef<'_>, ws: &[&DMatrix<f64>]) -> DenseTensor {
    match c2 {
        CoreRef::Diagonal(r) => {
            let wt: Vec<DMatrix<f64>> = ws.iter().map(|w| w.transpose()).collect();
            let refs: Vec<&DMatrix<f64>> = wt.iter().collect();
            let dims: Vec<usize> = wt.iter().map(|w| w.nrows()).collect();
            reconstruct_block(&refs, CoreRef::Diagonal(r), &dims)
        }
        CoreRef::Dense(g) => {
            let mut t = g.clone();
            for (l, w) in ws.iter().enumerate() {
                t = t.mode_mul(&w.transpose(), l).expect("shapes agree");
            }
            t
        }
    }
}

/// Parameter structure of a model: factor kinds per block and the packing
/// offsets, in the same block order as `BlockTermModel::expanded_blocks`.
#[derive(Clone, Debug)]
pub(crate) struct Structure {
    pub dims: Vec<usize>,
    pub kinds: Vec<Vec<FactorKind>>,
    pub ranks: Vec<Vec<usize>>,
    pub factor_offsets: Vec<Vec<Option<usize>>>,
    pub core_offsets: Vec<Option<usize>>,
    pub core_dims: Vec<Option<Vec<usize>>>,
    pub n_params: usize,
}

impl Structure {
    pub fn of(model: &BlockTermModel) -> Self {
        let d = model.order();
        let ids = model.block_ids();
        let layout = model.layout();
        let mut kinds = Vec::new();
        let mut ranks = Vec::new();
        let mut factor_offsets = Vec::new();
        let mut core_offsets = Vec::new();
        let mut core_dims = Vec::new();
        for id in ids {
            kinds.push((0..d).map(|k| model.factor_kind(id, k)).collect());
            let (r, cd) = match id {
                BlockId::Lr(s) => (vec![model.lr_terms()[s].rank; d], None),
                BlockId::Tucker(m) => {
                    let core = &model.tucker_terms()[m].core;
                    (core.dims().to_vec(), Some(core.dims().to_vec()))
                }
            };
            ranks.push(r);
            core_dims.push(cd);
            factor_offsets.push(
                (0..d)
                    .map(|k| {
                        layout
                            .find(id, crate::model::Part::Factor(k))
                            .map(|s| s.offset)
                    })
                    .collect(),
            );
            core_offsets.push(layout.find(id, crate::model::Part::Core).map(|s| s.offset));
        }
        Self {
            dims: model.dims().to_vec(),
            kinds,
            ranks,
            factor_offsets,
            core_offsets,
            core_dims,
            n_params: layout.len(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.kinds.len()
    }

    /// Maps a parameter vector to expanded-space tangents.
    pub fn expand(&self, x: &[f64]) -> Vec<Tangent> {
        let d = self.dims.len();
        (0..self.n_blocks())
            .map(|b| {
                let factors = (0..d)
                    .map(|k| {
                        let off = self.factor_offsets[b][k]?;
                        let n = self.dims[k];
                        let r = self.ranks[b][k];
                        Some(match self.kinds[b][k] {
                            FactorKind::Full => {
                                DMatrix::from_column_slice(n, r, &x[off..off + n * r])
                            }
                            FactorKind::Compact => DMatrix::from_fn(n, r, |i, _| x[off + i]),
                            FactorKind::Diagonal => {
                                let mut m = DMatrix::zeros(n, r);
                                for i in 0..n.min(r) {
                                    m[(i, i)] = x[off + i];
                                }
                                m
                            }
                            FactorKind::Fixed => unreachable!("fixed factors have no offset"),
                        })
                    })
                    .collect();
                let core = self.core_offsets[b].map(|off| {
                    let dims = self.core_dims[b].clone().expect("dense core");
                    let len: usize = dims.iter().product();
                    DenseTensor::from_parts(dims, x[off..off + len].to_vec())
                });
                Tangent { factors, core }
            })
            .collect()
    }

    /// Pulls expanded-space gradients back to the parameter vector
    /// (adjoint of [`Structure::expand`]).
    pub fn reduce(&self, grads: &[BlockGrad]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_params];
        for (b, g) in grads.iter().enumerate() {
            for (k, gk) in g.factors.iter().enumerate() {
                let (Some(off), Some(gk)) = (self.factor_offsets[b][k], gk.as_ref()) else {
                    continue;
                };
                match self.kinds[b][k] {
                    FactorKind::Full => x[off..off + gk.len()].copy_from_slice(gk.as_slice()),
                    FactorKind::Compact => {
                        for i in 0..gk.nrows() {
                            x[off + i] = gk.row(i).sum();
                        }
                    }
                    FactorKind::Diagonal => {
                        for i in 0..gk.nrows().min(gk.ncols()) {
                            x[off + i] = gk[(i, i)];
                        }
                    }
                    FactorKind::Fixed => {}
                }
            }
            if let (Some(off), Some(gc)) = (self.core_offsets[b], g.core.as_ref()) {
                x[off..off + gc.len()].copy_from_slice(gc.data());
            }
        }
        x
    }

    pub fn has_params(&self, b: usize, k: usize) -> bool {
        self.factor_offsets[b][k].is_some()
    }
}

/// Directional derivative of the reconstruction: `J v` as a tensor.
pub(crate) fn jacobian_tensor(
    blocks: &[Expanded],
    tangents: &[Tangent],
    dims: &[usize],
) -> DenseTensor {
    let mut out = DenseTensor::zeros(dims).expect("valid shape");
    for (blk, tan) in blocks.iter().zip(tangents) {
        for (k, dk) in tan.factors.iter().enumerate() {
            if let Some(dk) = dk {
                let mut f = blk.factor_refs();
                f[k] = dk;
                out.axpy(1.0, &reconstruct_block(&f, blk.core.as_ref(), dims))
                    .expect("shape");
            }
        }
        if let Some(dc) = &tan.core {
            out.axpy(
                1.0,
                &reconstruct_block(&blk.factor_refs(), CoreRef::Dense(dc), dims),
            )
            .expect("shape");
        }
    }
    out
}

/// Expanded gradient of `<Y, F(x)>` for every block: `J^T vec(Y)` before reduction.
pub(crate) fn adjoint_all(
    structure: &Structure,
    blocks: &[Expanded],
    y: &DenseTensor,
) -> Vec<BlockGrad> {
    blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let f = blk.factor_refs();
            let factors = (0..f.len())
                .map(|k| {
                    structure
                        .has_params(b, k)
                        .then(|| adjoint_factor(y, &f, blk.core.as_ref(), k))
                })
                .collect();
            let core = structure.core_offsets[b].map(|_| adjoint_core(y, &f));
            BlockGrad { factors, core }
        })
        .collect()
}

/// Gauss-Newton product `J^T J v` in expanded coordinates, assembled from
/// factor-level cross-Gram matrices.
pub(crate) fn gauss_newton_expanded(
    structure: &Structure,
    blocks: &[Expanded],
    tangents: &[Tangent],
) -> Vec<BlockGrad> {
    let d = structure.dims.len();
    let nb = blocks.len();
    // grams[b2][b1][l] = A2_l^T A1_l ; dgrams[b2][b1][l] = dA2_l^T A1_l
    let mut grams: Vec<Vec<Vec<DMatrix<f64>>>> = Vec::with_capacity(nb);
    let mut dgrams: Vec<Vec<Vec<Option<DMatrix<f64>>>>> = Vec::with_capacity(nb);
    for b2 in 0..nb {
        let mut g_row = Vec::with_capacity(nb);
        let mut dg_row = Vec::with_capacity(nb);
        for b1 in 0..nb {
            g_row.push(
                (0..d)
                    .map(|l| blocks[b2].factors[l].transpose() * &blocks[b1].factors[l])
                    .collect(),
            );
            dg_row.push(
                (0..d)
                    .map(|l| {
                        tangents[b2].factors[l]
                            .as_ref()
                            .map(|dl| dl.transpose() * &blocks[b1].factors[l])
                    })
                    .collect(),
            );
        }
        grams.push(g_row);
        dgrams.push(dg_row);
    }

    (0..nb)
        .map(|b1| {
            let core1 = blocks[b1].core.as_ref();
            let mut factors: Vec<Option<DMatrix<f64>>> = (0..d)
                .map(|k1| {
                    structure
                        .has_params(b1, k1)
                        .then(|| DMatrix::zeros(structure.dims[k1], structure.ranks[b1][k1]))
                })
                .collect();
            let mut core_grad = structure.core_offsets[b1]
                .map(|_| DenseTensor::zeros(structure.core_dims[b1].as_ref().unwrap()).unwrap());
            for b2 in 0..nb {
                let g = &grams[b2][b1];
                let dg = &dgrams[b2][b1];
                let core2 = blocks[b2].core.as_ref();
                // factor perturbations of block b2
                for k2 in 0..d {
                    let (Some(dk2), Some(dgk2)) = (&tangents[b2].factors[k2], &dg[k2]) else {
                        continue;
                    };
                    let ws: Vec<Option<&DMatrix<f64>>> = (0..d)
                        .map(|l| Some(if l == k2 { dgk2 } else { &g[l] }))
                        .collect();
                    for (k1, acc) in factors.iter_mut().enumerate() {
                        let Some(acc) = acc else { continue };
                        let mut w = ws.clone();
                        w[k1] = None;
                        let x_k1 = if k1 == k2 {
                            dk2
                        } else {
                            &blocks[b2].factors[k1]
                        };
                        *acc += x_k1 * small_contract(core2, &w, core1, k1);
                    }
                    if let Some(cg) = core_grad.as_mut() {
                        let w: Vec<&DMatrix<f64>> = ws.iter().map(|w| w.unwrap()).collect();
                        cg.axpy(1.0, &core_project(core2, &w)).unwrap();
                    }
                }
                // core perturbation of block b2
                if let Some(dc) = &tangents[b2].core {
                    let ws: Vec<Option<&DMatrix<f64>>> = g.iter().map(Some).collect();
                    for (k1, acc) in factors.iter_mut().enumerate() {
                        let Some(acc) = acc else { continue };
                        let mut w = ws.clone();
                        w[k1] = None;
                        *acc += &blocks[b2].factors[k1]
                            * small_contract(CoreRef::Dense(dc), &w, core1, k1);
                    }
                    if let Some(cg) = core_grad.as_mut() {
                        let w: Vec<&DMatrix<f64>> = g.iter().collect();
                        cg.axpy(1.0, &core_project(CoreRef::Dense(dc), &w)).unwrap();
                    }
                }
            }
            BlockGrad {
                factors,
                core: core_grad,
            }
        })
        .collect()
}

/// Residual-weighted second-order part `Q v` in expanded coordinates.
///
/// Only derivatives that mix two different factors of the same block, or a
/// Tucker factor with its own core, are nonzero.
pub(crate) fn residual_curvature_expanded(
    structure: &Structure,
    blocks: &[Expanded],
    tangents: &[Tangent],
    residual: &DenseTensor,
) -> Vec<BlockGrad> {
    let d = structure.dims.len();
    blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let tan = &tangents[b];
            let base = blk.factor_refs();
            let factors = (0..d)
                .map(|k1| {
                    if !structure.has_params(b, k1) {
                        return None;
                    }
                    let mut acc = DMatrix::zeros(structure.dims[k1], structure.ranks[b][k1]);
                    for k2 in (0..d).filter(|&k2| k2 != k1) {
                        if let Some(dk2) = &tan.factors[k2] {
                            let mut f = base.clone();
                            f[k2] = dk2;
                            acc += adjoint_factor(residual, &f, blk.core.as_ref(), k1);
                        }
                    }
                    if let Some(dc) = &tan.core {
                        acc += adjoint_factor(residual, &base, CoreRef::Dense(dc), k1);
                    }
                    Some(acc)
                })
                .collect();
            let core = structure.core_offsets[b].map(|_| {
                let mut acc = DenseTensor::zeros(structure.core_dims[b].as_ref().unwrap()).unwrap();
                for (k, dk) in tan.factors.iter().enumerate() {
                    if let Some(dk) = dk {
                        let mut f = base.clone();
                        f[k] = dk;
                        acc.axpy(1.0, &adjoint_core(residual, &f)).unwrap();
                    }
                }
                acc
            });
            BlockGrad { factors, core }
        })
        .collect()
}
