//! Starting points for the fit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{leading_left_subspace, sorted_svd};
use crate::model::{init_random, BlockId, BlockTermModel, FactorKind, VectorRole};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// i.i.d. Gaussian entries.
    Random,
    /// Gaussian columns drawn inside the leading subspaces of the target.
    Subspace,
    /// Eigenvalue-based block separation of two slice mixtures, falling back
    /// to `Subspace` when the model or data does not allow it.
    #[default]
    Algebraic,
}

pub fn initialize(
    template: &BlockTermModel,
    target: &DenseTensor,
    seed: u64,
    strategy: InitStrategy,
) -> BlockTermModel {
    match strategy {
        InitStrategy::Random => init_random(template, seed, 1.0),
        InitStrategy::Subspace => init_subspace(template, target, seed),
        InitStrategy::Algebraic => init_algebraic(template, target, seed)
            .unwrap_or_else(|| init_subspace(template, target, seed)),
    }
}

fn free_columns(model: &BlockTermModel, id: BlockId, k: usize) -> usize {
    let p = model.full_modes();
    match (model.factor_kind(id, k), id) {
        (FactorKind::Full, BlockId::Lr(s)) => model.lr_terms()[s].rank,
        (FactorKind::Full, BlockId::Tucker(m)) => model.tucker_terms()[m].factors[k].ncols(),
        (FactorKind::Compact, BlockId::Lr(s)) => {
            (model.lr_terms()[s].roles[k - p] == VectorRole::Free) as usize
        }
        _ => 0,
    }
}

/// Random start whose free factor columns are drawn inside the leading
/// mode-k subspaces of `target`, with as many directions as the model has
/// columns in that mode.
pub fn init_subspace(template: &BlockTermModel, target: &DenseTensor, seed: u64) -> BlockTermModel {
    let mut model = init_random(template, seed, 1.0);
    let p = model.full_modes();
    for k in 0..model.order() {
        let ids = model.block_ids();
        let width: usize = ids.iter().map(|&id| free_columns(&model, id, k)).sum();
        if width == 0 || width >= model.dims()[k] {
            continue;
        }
        let unf = target.unfold(k).expect("target shape matches the model");
        let u = leading_left_subspace(&unf, width);
        let proj = |m: &DMatrix<f64>| &u * (u.transpose() * m);
        for id in ids {
            if free_columns(&model, id, k) == 0 {
                continue;
            }
            match id {
                BlockId::Lr(s) => {
                    let b = &mut model.lr_terms_mut()[s];
                    if k < p {
                        b.full[k] = proj(&b.full[k]);
                    } else {
                        let c = &b.compact[k - p];
                        b.compact[k - p] = &u * (u.transpose() * c);
                    }
                }
                BlockId::Tucker(m) => {
                    let t = &mut model.tucker_terms_mut()[m];
                    t.factors[k] = proj(&t.factors[k]);
                }
            }
        }
    }
    model
}

/// Algebraic start for third-order models with two full modes, free compact
/// vectors and at most one Tucker term with equal first two ranks.
///
/// In the compressed space every frontal slice is `A D_k B^T` with `D_k`
/// block diagonal, so `X Y^{-1}` for two slice mixtures has the (Lr,1)
/// column spaces of `A` as eigenspaces of repeated eigenvalues; the Tucker
/// columns span the remaining invariant subspace. Returns `None` when the
/// preconditions fail or the spectrum does not show the expected clusters.
pub fn init_algebraic(
    template: &BlockTermModel,
    target: &DenseTensor,
    seed: u64,
) -> Option<BlockTermModel> {
    let dims = template.dims();
    if dims.len() != 3 || template.full_modes() != 2 || template.group().is_some() {
        return None;
    }
    if template.tucker_terms().len() > 1 {
        return None;
    }
    if template.lr_terms().iter().any(|b| b.roles[0] != VectorRole::Free) {
        return None;
    }
    let lr_ranks = template.lr_ranks();
    let tucker = template.tucker_terms().first().map(|t| t.ranks().to_vec());
    if let Some(r) = &tucker {
        if r[0] != r[1] || r[0] == 0 || lr_ranks.iter().any(|&l| l < 2) {
            return None;
        }
    }
    let r0: usize = lr_ranks.iter().sum::<usize>() + tucker.as_ref().map_or(0, |r| r[0]);
    let kdim = (lr_ranks.len() + tucker.as_ref().map_or(0, |r| r[2])).min(dims[2]);
    if r0 == 0 || r0 > dims[0] || r0 > dims[1] || kdim < 2 {
        return None;
    }

    let u0 = leading_left_subspace(&target.unfold(0).ok()?, r0);
    let u1 = leading_left_subspace(&target.unfold(1).ok()?, r0);
    let w = leading_left_subspace(&target.unfold(2).ok()?, kdim);
    if u0.ncols() != r0 || u1.ncols() != r0 || w.ncols() != kdim {
        return None;
    }
    let core = target
        .mode_mul(&u0.transpose(), 0)
        .ok()?
        .mode_mul(&u1.transpose(), 1)
        .ok()?
        .mode_mul(&w.transpose(), 2)
        .ok()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<f64> = (0..kdim).map(|_| rng.sample(StandardNormal)).collect();
    let beta: Vec<f64> = (0..kdim).map(|_| rng.sample(StandardNormal)).collect();
    let mix = |coef: &[f64]| {
        let mut m = DMatrix::zeros(r0, r0);
        for (k, c) in coef.iter().enumerate() {
            m += slice(&core, k) * *c;
        }
        m
    };
    let x = mix(&alpha);
    let y = mix(&beta);
    // M = X Y^{-1}
    let m = y.transpose().lu().solve(&x.transpose())?.transpose();
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }

    let clusters = eigenvalue_clusters(&m, &lr_ranks)?;
    let eye = DMatrix::<f64>::identity(r0, r0);
    let mut columns: Vec<DMatrix<f64>> = Vec::new();
    for (&l, &lambda) in lr_ranks.iter().zip(&clusters) {
        let (_, _, vt) = sorted_svd(&(&m - &eye * lambda));
        let n = vt.nrows();
        columns.push(vt.rows(n - l, l).transpose());
    }
    if let Some(r) = &tucker {
        let mut p = eye.clone();
        for &lambda in &clusters {
            p = (&m - &eye * lambda) * p;
        }
        columns.push(leading_left_subspace(&p, r[0]));
    }
    let mut a_tilde = DMatrix::zeros(r0, r0);
    let mut off = 0;
    for c in &columns {
        a_tilde.columns_mut(off, c.ncols()).copy_from(c);
        off += c.ncols();
    }
    let a_inv = a_tilde.clone().try_inverse()?;
    let z = core.mode_mul(&a_inv, 0).ok()?;

    let mut model = template.clone();
    let mut off = 0;
    for (s, &l) in lr_ranks.iter().enumerate() {
        let zr = rows(&z, off, l);
        let unf = zr.unfold(2).ok()?;
        let (u, sv, vt) = sorted_svd(&unf);
        let c_small: DVector<f64> = u.column(0) * sv[0];
        let hb = DMatrix::from_column_slice(l, r0, vt.row(0).transpose().as_slice());
        let b = &mut model.lr_terms_mut()[s];
        b.full[0] = &u0 * &columns[s];
        b.full[1] = &u1 * hb.transpose();
        b.compact[0] = &w * c_small;
        off += l;
    }
    if let Some(r) = &tucker {
        let zt = rows(&z, off, r[0]);
        let v = leading_left_subspace(&zt.unfold(1).ok()?, r[1]);
        let wt = leading_left_subspace(&zt.unfold(2).ok()?, r[2]);
        if v.ncols() != r[1] || wt.ncols() != r[2] {
            return None;
        }
        let g = zt.mode_mul(&v.transpose(), 1).ok()?.mode_mul(&wt.transpose(), 2).ok()?;
        let t = &mut model.tucker_terms_mut()[0];
        t.factors[0] = &u0 * columns.last().expect("tucker columns pushed last");
        t.factors[1] = &u1 * v;
        t.factors[2] = &w * wt;
        t.core = g;
    }
    Some(model)
}

fn slice(t: &DenseTensor, k: usize) -> DMatrix<f64> {
    let (n0, n1) = (t.dims()[0], t.dims()[1]);
    DMatrix::from_column_slice(n0, n1, &t.data()[k * n0 * n1..(k + 1) * n0 * n1])
}

/// Rows `off..off+len` of mode 0.
fn rows(t: &DenseTensor, off: usize, len: usize) -> DenseTensor {
    let mut dims = t.dims().to_vec();
    let n0 = dims[0];
    dims[0] = len;
    let sel = DMatrix::from_fn(len, n0, |i, j| (j == off + i) as u8 as f64);
    let out = t.mode_mul(&sel, 0).expect("row selection fits");
    debug_assert_eq!(out.dims(), &dims[..]);
    out
}

/// One representative eigenvalue per (Lr,1) term: real eigenvalues that
/// repeat exactly `L` times, matched to the ranks in order of size.
fn eigenvalue_clusters(m: &DMatrix<f64>, ranks: &[usize]) -> Option<Vec<f64>> {
    // Francis iterations can stall on exactly repeated eigenvalues; a tiny
    // perturbation splits them far below the clustering tolerance.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c40);
    let norm = m.norm().max(f64::MIN_POSITIVE);
    let eig = [0.0, 1e-12, 1e-10, 1e-9].into_iter().find_map(|delta| {
        let noise = DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (m + noise * (delta * norm))
            .try_schur(f64::EPSILON, 2_000)
            .map(|s| s.complex_eigenvalues())
    })?;
    let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-6 * scale;
    let mut real: Vec<f64> = eig.iter().filter(|z| z.im.abs() <= tol).map(|z| z.re).collect();
    real.sort_by(f64::total_cmp);
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for v in real {
        match groups.last_mut() {
            Some(g) if v - g[g.len() - 1] <= tol => g.push(v),
            _ => groups.push(vec![v]),
        }
    }
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(ranks[i]));
    let mut used = vec![false; groups.len()];
    let mut out = vec![0.0; ranks.len()];
    for i in order {
        let j = (0..groups.len()).find(|&j| !used[j] && groups[j].len() == ranks[i])?;
        used[j] = true;
        out[i] = groups[j].iter().sum::<f64>() / groups[j].len() as f64;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algebraic_start_recovers_noiseless_mixed_model() {
        let t = BlockTermModel::new(&[12, 12, 8], 2, &[vec![2, 2, 2]], &[2, 3, 2]).unwrap();
        let truth = init_random(&t, 4, 1.0);
        let target = truth.reconstruct();
        let m = init_algebraic(&t, &target, 9).expect("preconditions hold");
        let err = m.reconstruct().sub(&target).unwrap().frobenius_norm() / target.frobenius_norm();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn algebraic_start_declines_unsupported_models() {
        let t = BlockTermModel::new(&[6, 6, 4, 3], 2, &[], &[2, 2]).unwrap();
        let target = init_random(&t, 1, 1.0).reconstruct();
        assert!(init_algebraic(&t, &target, 0).is_none());
        // falls back without panicking
        let m = initialize(&t, &target, 0, InitStrategy::Algebraic);
        assert_eq!(m.layout(), t.layout());
    }

    #[test]
    fn subspace_start_lies_in_target_subspace() {
        let t = BlockTermModel::new(&[10, 9, 8], 2, &[], &[2, 2]).unwrap();
        let target = init_random(&t, 2, 1.0).reconstruct();
        let m = init_subspace(&t, &target, 5);
        let u = leading_left_subspace(&target.unfold(0).unwrap(), 4);
        let a = &m.lr_terms()[0].full[0];
        assert!((a - &u * (u.transpose() * a)).norm() < 1e-10 * a.norm());
    }
}
