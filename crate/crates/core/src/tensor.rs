//! Dense d-way tensors stored in column-major (Fortran) order.
//!
//! Element `X[i_1, ..., i_d]` lives at linear position
//! `i_1 + n_1 * (i_2 + n_2 * (i_3 + ...))` (zero-based), so mode 0 varies
//! fastest. Unfoldings, vectorization and tensorization all follow this rule.
//!
//! Mode indices in this API are zero-based. Scalars are represented as
//! one-element tensors of shape `[1]`.

use nalgebra::{DMatrix, DMatrixView, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be >= 1 and the order >= 1")]
    InvalidShape(Vec<usize>),
    #[error("data length {found} does not match shape product {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid mode permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(TensorError::InvalidShape(dims.to_vec()));
    }
    Ok(dims.iter().product())
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = check_dims(&dims)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_dims(dims)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            advance(&mut idx, dims);
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Shape-preserving constructor for callers that already validated the
    /// length.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Column-major linear position of a multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        linear_index(&self.dims, idx)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let pos = self.linear_index(idx);
        self.data[pos] = value;
    }

    pub fn vectorize(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        self.check_mode(mode)?;
        let (left, n, right) = split_at_mode(&self.dims, mode);
        let mut out = DMatrix::zeros(n, left * right);
        for b in 0..right {
            for i in 0..n {
                let src = left * (i + n * b);
                for a in 0..left {
                    out[(i, a + left * b)] = self.data[src + a];
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(matrix: &DMatrix<f64>, mode: usize, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        if mode >= dims.len() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: dims.len(),
            });
        }
        let (left, n, right) = split_at_mode(dims, mode);
        if matrix.nrows() != n || matrix.ncols() != left * right {
            return Err(TensorError::SizeMismatch(format!(
                "cannot fold a {}x{} matrix into {:?} along mode {}",
                matrix.nrows(),
                matrix.ncols(),
                dims,
                mode
            )));
        }
        let mut data = vec![0.0; len];
        for b in 0..right {
            for i in 0..n {
                let dst = left * (i + n * b);
                for a in 0..left {
                    data[dst + a] = matrix[(i, a + left * b)];
                }
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(TensorError::SizeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Tensor-times-matrix along one mode: mode `mode` of size `n` is
    /// replaced by `m.nrows()`, contracting with the columns of `m`.
    pub fn mode_mul(&self, m: &DMatrix<f64>, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let (left, n, right) = split_at_mode(&self.dims, mode);
        if m.ncols() != n {
            return Err(TensorError::SizeMismatch(format!(
                "matrix with {} columns applied to mode {} of size {}",
                m.ncols(),
                mode,
                n
            )));
        }
        let new_n = m.nrows();
        let mut dims = self.dims.clone();
        dims[mode] = new_n;
        let mut data = vec![0.0; left * new_n * right];
        let mt = m.transpose();
        for b in 0..right {
            let src =
                DMatrixView::from_slice(&self.data[left * n * b..left * n * (b + 1)], left, n);
            let prod = src * &mt;
            data[left * new_n * b..left * new_n * (b + 1)].copy_from_slice(prod.as_slice());
        }
        Ok(Self { dims, data })
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.dims.len() {
            Err(TensorError::ModeOutOfRange {
                mode,
                order: self.dims.len(),
            })
        } else {
            Ok(())
        }
    }
}

pub(crate) fn linear_index(dims: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(dims.len(), idx.len());
    let mut pos = 0;
    let mut stride = 1;
    for (&i, &n) in idx.iter().zip(dims) {
        debug_assert!(i < n);
        pos += i * stride;
        stride *= n;
    }
    pos
}

/// Advances a column-major multi-index odometer; returns false on wrap-around.
pub(crate) fn advance(idx: &mut [usize], dims: &[usize]) -> bool {
    for (i, &n) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < n {
            return true;
        }
        *i = 0;
    }
    false
}

/// Splits a shape into (product before mode, size of mode, product after mode).
pub(crate) fn split_at_mode(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = dims[..mode].iter().product();
    let right = dims[mode + 1..].iter().product();
    (left, dims[mode], right)
}

pub fn vectorize(x: &DenseTensor) -> DVector<f64> {
    x.vectorize()
}

pub fn unfold(x: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    x.unfold(mode)
}

pub fn tensorize(v: &[f64], dims: &[usize]) -> Result<DenseTensor> {
    DenseTensor::new(dims.to_vec(), v.to_vec())
}

pub fn frobenius_norm(x: &DenseTensor) -> f64 {
    x.frobenius_norm()
}

pub fn inner(x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    if x.dims != y.dims {
        return Err(TensorError::SizeMismatch(format!(
            "{:?} vs {:?}",
            x.dims, y.dims
        )));
    }
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| a * b).sum())
}

/// Reordering of tensor modes: result mode `j` is source mode `order[j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModePermutation {
    order: Vec<usize>,
}

impl ModePermutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &m in &order {
            if m >= order.len() || seen[m] {
                return Err(TensorError::InvalidPermutation(order));
            }
            seen[m] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(order: usize) -> Self {
        Self {
            order: (0..order).collect(),
        }
    }

    /// Moves `mode` to the front, keeping the other modes in natural order.
    pub fn to_front(order: usize, mode: usize) -> Self {
        let mut o = vec![mode];
        o.extend((0..order).filter(|&m| m != mode));
        Self { order: o }
    }

    pub fn source_modes(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (j, &m) in self.order.iter().enumerate() {
            inv[m] = j;
        }
        Self { order: inv }
    }

    pub fn apply(&self, x: &DenseTensor) -> Result<DenseTensor> {
        if self.order.len() != x.order() {
            return Err(TensorError::SizeMismatch(format!(
                "permutation of {} modes applied to order-{} tensor",
                self.order.len(),
                x.order()
            )));
        }
        let src_dims = x.dims();
        let dims: Vec<usize> = self.order.iter().map(|&m| src_dims[m]).collect();
        // stride of each result mode inside the source buffer
        let mut src_strides = vec![0usize; src_dims.len()];
        let mut s = 1;
        for (m, &n) in src_dims.iter().enumerate() {
            src_strides[m] = s;
            s *= n;
        }
        let strides: Vec<usize> = self.order.iter().map(|&m| src_strides[m]).collect();
        let mut data = Vec::with_capacity(x.len());
        let mut idx = vec![0usize; dims.len()];
        let mut pos = 0usize;
        loop {
            data.push(x.data[pos]);
            // odometer step with incremental source offset
            let mut k = 0;
            loop {
                if k == dims.len() {
                    return Ok(DenseTensor { dims, data });
                }
                idx[k] += 1;
                pos += strides[k];
                if idx[k] < dims[k] {
                    break;
                }
                pos -= strides[k] * dims[k];
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// General contraction of mode `mode_x` of `x` with mode `mode_y` of `y`.
///
/// The result carries the remaining modes of `x` followed by the remaining
/// modes of `y`. Contracting two vectors yields a one-element tensor.
pub fn mode_product(
    x: &DenseTensor,
    y: &DenseTensor,
    mode_x: usize,
    mode_y: usize,
) -> Result<DenseTensor> {
    x.check_mode(mode_x)?;
    y.check_mode(mode_y)?;
    if x.dims[mode_x] != y.dims[mode_y] {
        return Err(TensorError::SizeMismatch(format!(
            "contracted modes differ: {} vs {}",
            x.dims[mode_x], y.dims[mode_y]
        )));
    }
    let xr = x.unfold(mode_x)?;
    let yr = y.unfold(mode_y)?;
    let prod = xr.transpose() * yr;
    let mut dims: Vec<usize> = x
        .dims
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode_x)
        .map(|(_, &n)| n)
        .collect();
    dims.extend(
        y.dims
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != mode_y)
            .map(|(_, &n)| n),
    );
    if dims.is_empty() {
        dims.push(1);
    }
    Ok(DenseTensor::from_parts(dims, prod.as_slice().to_vec()))
}

/// Contracts every mode except those listed in `keep`.
///
/// The result carries the kept modes of `x` then the kept modes of `y` (both
/// in ascending order). With `keep` empty this is the inner product.
pub fn contract_except(x: &DenseTensor, y: &DenseTensor, keep: &[usize]) -> Result<DenseTensor> {
    if x.order() != y.order() {
        return Err(TensorError::SizeMismatch(format!(
            "orders differ: {} vs {}",
            x.order(),
            y.order()
        )));
    }
    let d = x.order();
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if let Some(&m) = kept.iter().find(|&&m| m >= d) {
        return Err(TensorError::ModeOutOfRange { mode: m, order: d });
    }
    for m in (0..d).filter(|m| !kept.contains(m)) {
        if x.dims[m] != y.dims[m] {
            return Err(TensorError::SizeMismatch(format!(
                "mode {} differs: {} vs {}",
                m, x.dims[m], y.dims[m]
            )));
        }
    }
    let mut order = kept.clone();
    order.extend((0..d).filter(|m| !kept.contains(m)));
    let perm = ModePermutation::new(order)?;
    let xp = perm.apply(x)?;
    let yp = perm.apply(y)?;
    let kx: usize = kept.iter().map(|&m| x.dims[m]).product();
    let ky: usize = kept.iter().map(|&m| y.dims[m]).product();
    let rest = x.len() / kx;
    let xm = DMatrixView::from_slice(&xp.data, kx, rest);
    let ym = DMatrixView::from_slice(&yp.data, ky, rest);
    let prod = xm * ym.transpose();
    let mut dims: Vec<usize> = kept.iter().map(|&m| x.dims[m]).collect();
    dims.extend(kept.iter().map(|&m| y.dims[m]));
    if dims.is_empty() {
        dims.push(1);
    }
    Ok(DenseTensor::from_parts(dims, prod.as_slice().to_vec()))
}

pub fn outer(x: &DenseTensor, y: &DenseTensor) -> DenseTensor {
    let mut data = Vec::with_capacity(x.len() * y.len());
    for &b in &y.data {
        data.extend(x.data.iter().map(|&a| a * b));
    }
    let mut dims = x.dims.clone();
    dims.extend_from_slice(&y.dims);
    DenseTensor::from_parts(dims, data)
}

pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-wise Kronecker product.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(TensorError::SizeMismatch(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (m, n) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(m * n, a.ncols());
    for r in 0..a.ncols() {
        for i in 0..m {
            let ai = a[(i, r)];
            for j in 0..n {
                out[(i * n + j, r)] = ai * b[(j, r)];
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of `factors` taken in reverse order, so that row
/// indices follow the column-major rule (first factor varies fastest).
pub(crate) fn khatri_rao_colmajor(factors: &[&DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = factors.iter().map(|f| f.nrows()).product();
    let mut out = DMatrix::from_element(rows, ncols, 1.0);
    let mut stride = 1;
    for f in factors {
        let n = f.nrows();
        for r in 0..ncols {
            for pos in 0..rows {
                out[(pos, r)] *= f[((pos / stride) % n, r)];
            }
        }
        stride *= n;
    }
    out
}

/// Matricized tensor times Khatri-Rao product: `X_(mode) * KR(other factors)`.
///
/// `factors` holds one matrix per mode (the entry at `mode` is ignored); all
/// other factors must share a column count. Runs in `O(len(x) * ncols)`.
pub fn mttkrp(x: &DenseTensor, factors: &[DMatrix<f64>], mode: usize) -> Result<DMatrix<f64>> {
    x.check_mode(mode)?;
    if factors.len() != x.order() {
        return Err(TensorError::SizeMismatch(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            x.order()
        )));
    }
    let d = x.order();
    let ncols = factors
        .iter()
        .enumerate()
        .find(|&(m, _)| m != mode)
        .map(|(_, f)| f.ncols())
        .unwrap_or(1);
    for (m, f) in factors.iter().enumerate() {
        if m != mode && (f.nrows() != x.dims[m] || f.ncols() != ncols) {
            return Err(TensorError::SizeMismatch(format!(
                "factor {} is {}x{}, expected {}x{}",
                m,
                f.nrows(),
                f.ncols(),
                x.dims[m],
                ncols
            )));
        }
    }
    let (left, n, right) = split_at_mode(&x.dims, mode);
    let left_factors: Vec<&DMatrix<f64>> = factors[..mode].iter().collect();
    let right_factors: Vec<&DMatrix<f64>> = factors[mode + 1..d].iter().collect();
    let kl = khatri_rao_colmajor(&left_factors, ncols);
    let kr = khatri_rao_colmajor(&right_factors, ncols);
    // (n * right) x ncols
    let xm = DMatrixView::from_slice(&x.data, left, n * right);
    let t = xm.transpose() * kl;
    let mut out = DMatrix::zeros(n, ncols);
    for r in 0..ncols {
        for b in 0..right {
            let w = kr[(b, r)];
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                out[(i, r)] += t[(i + n * b, r)] * w;
            }
        }
    }
    Ok(out)
}
