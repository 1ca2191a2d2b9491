//! Block-coordinate least squares sweeps.

use nalgebra::{DMatrix, DVector};

use crate::kernels::{self, small_contract, Expanded};
use crate::linalg::pinv;
use crate::model::{BlockId, BlockTermModel, FactorKind, GroupFlavor};
use crate::objective::ResidualState;

/// How the free unknowns of one block enter a row of the mode-k unfolding.
#[derive(Clone, Copy, Debug)]
enum Unknowns {
    /// Whole factor row, `R` unknowns.
    Full(usize),
    /// One value replicated over all `R` columns.
    Compact,
    /// Only entry `(i, i)` of row `i` is free.
    Diagonal,
    Fixed,
}

impl Unknowns {
    fn count(self) -> usize {
        match self {
            Unknowns::Full(r) => r,
            Unknowns::Compact | Unknowns::Diagonal => 1,
            Unknowns::Fixed => 0,
        }
    }

    /// Selector `S` with `A[i, :]^T = S u` for row `i`.
    fn selector(self, rank: usize, row: usize) -> DMatrix<f64> {
        match self {
            Unknowns::Full(r) => DMatrix::identity(r, r),
            Unknowns::Compact => DMatrix::from_element(rank, 1, 1.0),
            Unknowns::Diagonal => {
                let mut s = DMatrix::zeros(rank, 1);
                if row < rank {
                    s[(row, 0)] = 1.0;
                }
                s
            }
            Unknowns::Fixed => DMatrix::zeros(rank, 0),
        }
    }
}

/// One ALS sweep: modes in order, then the Tucker cores. Returns the updated
/// model; the state itself is not modified.
pub fn als_sweep(state: &ResidualState) -> BlockTermModel {
    sweep(state, false)
}

/// As [`als_sweep`], but on every mode of interest of a group model the
/// individual factors are re-solved with the common factor held fixed and
/// restricted to its orthogonal complement, which is their exact
/// constrained minimizer given that common factor.
pub fn als_sweep_separated(state: &ResidualState) -> BlockTermModel {
    sweep(state, true)
}

fn sweep(state: &ResidualState, separate: bool) -> BlockTermModel {
    let mut model = state.model().clone();
    let target = state.target();
    let d = model.order();
    let common = if separate { common_block(&model) } else { None };
    let modes: Vec<usize> = model
        .group()
        .map(|g| g.modes_of_interest.clone())
        .unwrap_or_default();
    for k in 0..d {
        match common.filter(|_| modes.contains(&k) && k < model.full_modes()) {
            Some(id) => {
                // the joint update may move the common factor where the
                // constrained individual factors fit worse than before
                let mut kept = model.clone();
                update_mode(&mut model, target, k, None);
                separate_mode(&mut model, target, k, id);
                separate_mode(&mut kept, target, k, id);
                if misfit(&kept, target) < misfit(&model, target) {
                    model = kept;
                }
            }
            None => update_mode(&mut model, target, k, None),
        }
    }
    update_cores(&mut model, target);
    model
}

/// Re-solves the mode-`k` individual factors with the common block fixed and
/// projects them onto the orthogonal complement of its factor.
fn separate_mode(model: &mut BlockTermModel, target: &crate::DenseTensor, k: usize, common: BlockId) {
    update_mode(model, target, k, Some(common));
    let u = model.common_factor(k).expect("group model").clone();
    let proj = &u * pinv(&u);
    for j in model.individual_terms() {
        let c = &mut model.lr_terms_mut()[j].full[k];
        *c -= &proj * &*c;
    }
}

fn misfit(model: &BlockTermModel, target: &crate::DenseTensor) -> f64 {
    let r = model.reconstruct();
    r.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn common_block(model: &BlockTermModel) -> Option<BlockId> {
    match model.group()?.flavor {
        GroupFlavor::Glro => Some(BlockId::Lr(model.lr_terms().len().checked_sub(1)?)),
        GroupFlavor::Gtld => (!model.tucker_terms().is_empty()).then_some(BlockId::Tucker(0)),
    }
}

/// Joint least-squares update of every free mode-`k` factor; `frozen` is
/// treated as fixed.
fn update_mode(
    model: &mut BlockTermModel,
    target: &crate::DenseTensor,
    k: usize,
    frozen: Option<BlockId>,
) {
    let blocks = model.expanded_blocks();
    let ids = model.block_ids();
    let n = model.dims()[k];
    let kinds: Vec<Unknowns> = ids
        .iter()
        .zip(&blocks)
        .map(|(&id, b)| match model.factor_kind(id, k) {
            _ if Some(id) == frozen => Unknowns::Fixed,
            FactorKind::Full => Unknowns::Full(b.factors[k].ncols()),
            FactorKind::Compact => Unknowns::Compact,
            FactorKind::Diagonal => Unknowns::Diagonal,
            FactorKind::Fixed => Unknowns::Fixed,
        })
        .collect();
    if kinds.iter().all(|u| matches!(u, Unknowns::Fixed)) {
        return;
    }
    let nb = blocks.len();
    let ranks: Vec<usize> = blocks.iter().map(|b| b.factors[k].ncols()).collect();
    // cross-Grams M_a^T M_b and right-hand sides T_(k) M_b
    let mut grams = vec![vec![DMatrix::zeros(0, 0); nb]; nb];
    for a in 0..nb {
        for b in a..nb {
            let g = block_gram(&blocks[a], &blocks[b], k);
            grams[b][a] = g.transpose();
            grams[a][b] = g;
        }
    }
    let rhs: Vec<Option<DMatrix<f64>>> = blocks
        .iter()
        .zip(&kinds)
        .map(|(b, u)| {
            (!matches!(u, Unknowns::Fixed))
                .then(|| kernels::adjoint_factor(target, &b.factor_refs(), b.core.as_ref(), k))
        })
        .collect();
    let free: Vec<usize> = (0..nb).filter(|&b| kinds[b].count() > 0).collect();
    let offsets: Vec<usize> = free
        .iter()
        .scan(0, |acc, &b| {
            let o = *acc;
            *acc += kinds[b].count();
            Some(o)
        })
        .collect();
    let q: usize = free.iter().map(|&b| kinds[b].count()).sum();
    let row_dependent = free.iter().any(|&b| matches!(kinds[b], Unknowns::Diagonal));

    let assemble_normal = |row: usize| -> DMatrix<f64> {
        let mut nm = DMatrix::zeros(q, q);
        for (ia, &a) in free.iter().enumerate() {
            let sa = kinds[a].selector(ranks[a], row);
            for (ib, &b) in free.iter().enumerate() {
                let sb = kinds[b].selector(ranks[b], row);
                let blk = sa.transpose() * &grams[a][b] * sb;
                nm.view_mut((offsets[ia], offsets[ib]), blk.shape())
                    .copy_from(&blk);
            }
        }
        nm
    };
    let shared_pinv = (!row_dependent).then(|| pinv(&assemble_normal(0)));

    let mut solution = DMatrix::zeros(n, q);
    for i in 0..n {
        let mut r = DVector::zeros(q);
        for (ia, &a) in free.iter().enumerate() {
            let mut ra: DVector<f64> = rhs[a].as_ref().expect("free block").row(i).transpose();
            for f in (0..nb).filter(|&f| matches!(kinds[f], Unknowns::Fixed)) {
                let af: DVector<f64> = blocks[f].factors[k].row(i).transpose();
                ra -= &grams[a][f] * af;
            }
            let sa = kinds[a].selector(ranks[a], i);
            r.rows_mut(offsets[ia], kinds[a].count())
                .copy_from(&(sa.transpose() * ra));
        }
        let u = match &shared_pinv {
            Some(p) => p * r,
            None => pinv(&assemble_normal(i)) * r,
        };
        solution.set_row(i, &u.transpose());
    }

    for (ia, &b) in free.iter().enumerate() {
        let cols = solution.columns(offsets[ia], kinds[b].count()).into_owned();
        write_factor(model, ids[b], k, kinds[b], cols);
    }
}

fn block_gram(a: &Expanded, b: &Expanded, k: usize) -> DMatrix<f64> {
    let ws: Vec<DMatrix<f64>> = a
        .factors
        .iter()
        .zip(&b.factors)
        .map(|(fa, fb)| fa.transpose() * fb)
        .collect();
    let refs: Vec<Option<&DMatrix<f64>>> = ws.iter().map(Some).collect();
    small_contract(a.core.as_ref(), &refs, b.core.as_ref(), k)
}

fn write_factor(
    model: &mut BlockTermModel,
    id: BlockId,
    k: usize,
    kind: Unknowns,
    cols: DMatrix<f64>,
) {
    let p = model.full_modes();
    match id {
        BlockId::Lr(s) => {
            let b = &mut model.lr_terms_mut()[s];
            match kind {
                Unknowns::Full(_) => b.full[k] = cols,
                Unknowns::Compact => b.compact[k - p] = cols.column(0).into_owned(),
                _ => unreachable!("(Lr,1) factors are full or compact"),
            }
        }
        BlockId::Tucker(m) => {
            let t = &mut model.tucker_terms_mut()[m];
            match kind {
                Unknowns::Full(_) => t.factors[k] = cols,
                Unknowns::Diagonal => {
                    let f = &mut t.factors[k];
                    f.fill(0.0);
                    for i in 0..f.nrows().min(f.ncols()) {
                        f[(i, i)] = cols[(i, 0)];
                    }
                }
                _ => unreachable!("Tucker factors are full or diagonal"),
            }
        }
    }
}

fn update_cores(model: &mut BlockTermModel, target: &crate::DenseTensor) {
    let n_lr = model.lr_terms().len();
    for m in 0..model.tucker_terms().len() {
        let blocks = model.expanded_blocks();
        let mut rest = target.clone();
        for (b, blk) in blocks.iter().enumerate() {
            if b != n_lr + m {
                let t =
                    kernels::reconstruct_block(&blk.factor_refs(), blk.core.as_ref(), model.dims());
                rest.axpy(-1.0, &t).expect("same shape");
            }
        }
        let pinvs_t: Vec<DMatrix<f64>> = model.tucker_terms()[m]
            .factors
            .iter()
            .map(|a| pinv(a).transpose())
            .collect();
        let refs: Vec<&DMatrix<f64>> = pinvs_t.iter().collect();
        model.tucker_terms_mut()[m].core = kernels::adjoint_core(&rest, &refs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_random;

    #[test]
    fn exact_initialization_is_a_fixed_point() {
        let t = BlockTermModel::new(&[5, 4, 4], 2, &[vec![2, 2, 2]], &[2, 2]).unwrap();
        let truth = init_random(&t, 3, 1.0);
        let s = ResidualState::new(truth.clone(), truth.reconstruct()).unwrap();
        let next = als_sweep(&s);
        let s2 = ResidualState::new(next, truth.reconstruct()).unwrap();
        assert!(s2.objective() < 1e-12, "{}", s2.objective());
    }

    #[test]
    fn sweep_never_increases_objective() {
        let t = BlockTermModel::new(&[5, 4, 4], 2, &[vec![2, 2, 2]], &[2, 1]).unwrap();
        let target = init_random(&t, 1, 1.0).reconstruct();
        let mut s = ResidualState::new(init_random(&t, 2, 1.0), target).unwrap();
        let mut f = s.objective();
        for _ in 0..20 {
            let m = als_sweep(&s);
            s.set_model(m).unwrap();
            assert!(s.objective() <= f * (1.0 + 1e-12) + 1e-14);
            f = s.objective();
        }
    }
}
