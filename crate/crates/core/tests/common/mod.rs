#![allow(dead_code)]

pub mod labels;
pub mod planted;

use gbtd::model::{BlockId, Part};
use gbtd::tensor::{khatri_rao, kronecker};
use gbtd::{
    build_glro, build_gtld, init_random, BlockTermModel, DenseTensor, GroupFlavor, GroupSpec,
    ResidualState,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn random_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(dims, |_| rng.sample(StandardNormal)).unwrap()
}

pub fn tiny_btd() -> BlockTermModel {
    BlockTermModel::new(&[3, 3, 2], 2, &[vec![2, 2, 2]], &[2, 2]).unwrap()
}

pub fn glro_template(dims: &[usize], l_ind: usize, l_com: usize, p: usize) -> BlockTermModel {
    let n = *dims.last().unwrap();
    let spec = GroupSpec::new(GroupFlavor::Glro, n, vec![0]);
    let mut ranks = vec![l_ind; n];
    ranks.push(l_com);
    build_glro(dims, n, &ranks, p, &spec).unwrap()
}

pub fn gtld_template(dims: &[usize], l_ind: usize, tucker: &[usize], p: usize) -> BlockTermModel {
    let n = *dims.last().unwrap();
    let spec = GroupSpec::new(GroupFlavor::Gtld, n, vec![0]);
    build_gtld(dims, n, &vec![l_ind; n], p, tucker, &spec).unwrap()
}

/// Random model plus an unrelated random target (nonzero residual).
pub fn random_state(template: &BlockTermModel, seed: u64) -> ResidualState {
    let mut r = rng(seed ^ 0x5eed);
    let model = init_random(template, seed, 1.0);
    // perturb p away from the symmetric point so that it is exercised
    let mut model = model;
    if let Some(p) = model.group_weights() {
        let q = p.map(|v| v * (1.0 + 0.3 * r.sample::<f64, _>(StandardNormal)));
        model.set_group_weights(&q);
    }
    let target = random_tensor(template.dims(), &mut r);
    ResidualState::new(model, target).unwrap()
}

/// Row map from `vec(X_(k))` positions to `vec(X)` positions.
fn unfolding_rows(dims: &[usize], k: usize) -> Vec<usize> {
    let len: usize = dims.iter().product();
    let ids = DenseTensor::new(dims.to_vec(), (0..len).map(|v| v as f64).collect()).unwrap();
    let u = ids.unfold(k).unwrap();
    u.as_slice().iter().map(|&v| v as usize).collect()
}

/// Khatri-Rao of all factors except `k`, highest mode first.
fn kr_except(factors: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let mut acc: Option<DMatrix<f64>> = None;
    for (l, f) in factors.iter().enumerate().rev() {
        if l == k {
            continue;
        }
        acc = Some(match acc {
            None => f.clone(),
            Some(a) => khatri_rao(&a, f).unwrap(),
        });
    }
    acc.unwrap_or_else(|| DMatrix::from_element(1, factors[0].ncols(), 1.0))
}

fn kron_except(factors: &[DMatrix<f64>], k: Option<usize>) -> DMatrix<f64> {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for (l, f) in factors.iter().enumerate().rev() {
        if Some(l) == k {
            continue;
        }
        acc = kronecker(&acc, f);
    }
    acc
}

/// Dense Jacobian of `vec(F(x))`, assembled block column by block column
/// from Kronecker and Khatri-Rao products of the factors.
pub fn dense_jacobian(model: &BlockTermModel) -> DMatrix<f64> {
    let dims = model.dims().to_vec();
    let d = dims.len();
    let rows: usize = dims.iter().product();
    let layout = model.layout();
    let mut j = DMatrix::zeros(rows, layout.len());
    for seg in layout.segments() {
        let (cols, mode): (DMatrix<f64>, Option<usize>) = match (seg.block, seg.part) {
            (BlockId::Lr(s), Part::Factor(k)) => {
                let b = &model.lr_terms()[s];
                let factors: Vec<DMatrix<f64>> = (0..d).map(|m| b.expanded_factor(m)).collect();
                let v = kr_except(&factors, k);
                let full = kronecker(&v, &DMatrix::identity(dims[k], dims[k]));
                if k < model.full_modes() {
                    (full, Some(k))
                } else {
                    // replicated columns: vec(c 1^T) = (1_L kron I) c
                    let e = kronecker(
                        &DMatrix::from_element(b.rank, 1, 1.0),
                        &DMatrix::identity(dims[k], dims[k]),
                    );
                    (full * e, Some(k))
                }
            }
            (BlockId::Tucker(m), Part::Factor(k)) => {
                let t = &model.tucker_terms()[m];
                let v = kron_except(&t.factors, Some(k));
                let gk = t.core.unfold(k).unwrap();
                let full = kronecker(&(v * gk.transpose()), &DMatrix::identity(dims[k], dims[k]));
                if seg.len == dims[k] && t.diagonal_last && k == d - 1 {
                    let sel = DMatrix::from_fn(full.ncols(), dims[k], |r, c| {
                        (r == c + dims[k] * c) as u8 as f64
                    });
                    (full * sel, Some(k))
                } else {
                    (full, Some(k))
                }
            }
            (BlockId::Tucker(m), Part::Core) => {
                let t = &model.tucker_terms()[m];
                (kron_except(&t.factors, None), None)
            }
            _ => unreachable!(),
        };
        let row_map: Vec<usize> = match mode {
            Some(k) => unfolding_rows(&dims, k),
            None => (0..rows).collect(),
        };
        for c in 0..seg.len {
            for r in 0..rows {
                j[(row_map[r], seg.offset + c)] = cols[(r, c)];
            }
        }
    }
    j
}

pub fn central_fd_gradient(state: &ResidualState) -> DVector<f64> {
    let x0 = state.params().clone();
    let mut s = state.clone();
    let mut g = DVector::zeros(x0.len());
    for i in 0..x0.len() {
        let h = 1e-6 * (1.0 + x0[i].abs());
        let mut xp = x0.clone();
        xp[i] += h;
        s.set_params(&xp).unwrap();
        let fp = s.objective();
        let mut xm = x0.clone();
        xm[i] -= h;
        s.set_params(&xm).unwrap();
        let fm = s.objective();
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central differences of the gradient along `v`.
pub fn fd_hessian_vector(state: &ResidualState, v: &DVector<f64>, h: f64) -> DVector<f64> {
    let x0 = state.params().clone();
    let mut s = state.clone();
    s.set_params(&(&x0 + v * h)).unwrap();
    let gp = s.gradient();
    s.set_params(&(&x0 - v * h)).unwrap();
    let gm = s.gradient();
    (gp - gm) / (2.0 * h)
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
