//! Symmetric FastICA with a tanh contrast.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::AnalysisError;
use crate::linalg::sym_inv_sqrt;

const MAX_ITERS: usize = 200;
const TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct IcaResult {
    /// `n_obs x n_components`, unit variance and uncorrelated.
    pub sources: DMatrix<f64>,
    /// `sources = (X - mean) * unmixing`.
    pub unmixing: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Rows of `x` are observations, columns are mixed signals.
pub fn fastica(x: &DMatrix<f64>, n_components: usize, seed: u64) -> Result<IcaResult, AnalysisError> {
    let (n, m) = x.shape();
    if n_components == 0 || n_components > n.min(m) {
        return Err(AnalysisError::Invalid(format!(
            "{n_components} components from a {n}x{m} matrix"
        )));
    }
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = xc.transpose() * &xc / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let floor = eig.eigenvalues[order[0]].abs() * 1e-14;
    if eig.eigenvalues[order[0]] <= 0.0 {
        return Err(AnalysisError::ZeroSubspace);
    }
    let whiten = DMatrix::from_fn(m, n_components, |i, j| {
        let k = order[j];
        eig.eigenvectors[(i, k)] / eig.eigenvalues[k].max(floor).sqrt()
    });
    let z = &xc * &whiten;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = DMatrix::from_fn(n_components, n_components, |_, _| StandardNormal.sample(&mut rng));
    let mut w = decorrelate(&init);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITERS {
        iterations = it;
        let y = &z * w.transpose();
        let g = y.map(f64::tanh);
        let dg_mean = g.map(|v| 1.0 - v * v).row_sum() / n as f64;
        let mut next = g.transpose() * &z / n as f64;
        for i in 0..n_components {
            let scale = dg_mean[i];
            let wi = w.row(i) * scale;
            let mut row = next.row_mut(i);
            row -= wi;
        }
        let next = decorrelate(&next);
        let agreement = (&next * w.transpose())
            .diagonal()
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        w = next;
        if agreement > 1.0 - TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA stopped after {MAX_ITERS} iterations without converging");
    }
    let unmixing = whiten * w.transpose();
    let sources = &xc * &unmixing;
    Ok(IcaResult {
        sources,
        unmixing,
        iterations,
        converged,
    })
}

/// `(W W^T)^{-1/2} W`.
fn decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    sym_inv_sqrt(&(w * w.transpose()), 1e-300) * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn outputs_are_white() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(300, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = fastica(&x, 3, 1).unwrap();
        let cov = r.sources.transpose() * &r.sources / 300.0;
        assert!((cov - DMatrix::identity(3, 3)).abs().max() < 1e-6);
    }

    #[test]
    fn unmixes_two_uniform_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let s = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.4, 1.0]);
        let x = &s * a.transpose();
        let r = fastica(&x, 2, 9).unwrap();
        assert!(r.converged);
        for j in 0..2 {
            let best = (0..2)
                .map(|k| correlation(&s.column(j).into_owned(), &r.sources.column(k).into_owned()).abs())
                .fold(0.0, f64::max);
            assert!(best >= 0.95, "source {j}: {best}");
        }
    }

    fn correlation(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
        let a = a.add_scalar(-a.mean());
        let b = b.add_scalar(-b.mean());
        a.dot(&b) / (a.norm() * b.norm())
    }
}
