use gbtd::DenseTensor;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_orthonormal(n: usize, k: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, k, |_, _| r.sample(StandardNormal));
    m.qr().q().columns(0, k).into_owned()
}

/// Instance whose mode-0 fibers lie in `span(basis)`: a random CP term of
/// rank `basis.ncols()` on the remaining modes.
pub fn planted_instance(
    basis: &DMatrix<f64>,
    dims: &[usize],
    snr: f64,
    r: &mut ChaCha8Rng,
) -> DenseTensor {
    let k = basis.ncols();
    let b = DMatrix::from_fn(dims[1], k, |_, _| r.sample::<f64, _>(StandardNormal));
    let c = DMatrix::from_fn(dims[2], k, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut x = DenseTensor::from_fn(dims, |i| {
        (0..k).map(|l| basis[(i[0], l)] * b[(i[1], l)] * c[(i[2], l)]).sum()
    })
    .unwrap();
    if snr.is_finite() {
        let noise = DenseTensor::from_fn(dims, |_| r.sample(StandardNormal)).unwrap();
        let scale = x.frobenius_norm() / (snr * noise.frobenius_norm());
        x.axpy(scale, &noise).unwrap();
    }
    x
}
