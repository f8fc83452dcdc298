//! Dense complex tensors and the handful of linear-algebra kernels the
//! simulator needs.
//!
//! Layout is row-major throughout: the last axis varies fastest, so a tensor
//! of shape `[a, b, c]` stores element `(i, j, k)` at `(i * b + j) * c + k`.
//! Reshaping never moves data; grouping consecutive axes into a matrix row or
//! column index follows the same rule. Matrix kernels are delegated to `faer`.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par, Side};
use thiserror::Error;

pub use num_complex::Complex64 as C64;

/// Zero constant.
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
/// Unit constant.
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Data length does not match the product of extents.
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    /// An extent of zero was requested.
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),

    /// NaN or infinite entry.
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),

    /// Paired axes in a contraction differ in extent.
    #[error("cannot pair axis {a_axis} (extent {a_extent}) with axis {b_axis} (extent {b_extent})")]
    DimensionMismatch {
        a_axis: usize,
        a_extent: usize,
        b_axis: usize,
        b_extent: usize,
    },

    /// Axis index outside the tensor's rank, or repeated.
    #[error("invalid axis specification {axes:?} for rank {rank}")]
    InvalidAxes { axes: Vec<usize>, rank: usize },

    /// Operation needs a tensor of a particular rank.
    #[error("expected rank {expected}, found rank {actual}")]
    RankMismatch { expected: usize, actual: usize },

    /// Matrix needs to be square.
    #[error("expected a square matrix, found {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    /// Generator handed to the exponential is not Hermitian.
    #[error("generator is not Hermitian: max |h - h^dag| = {deviation:e}")]
    NotHermitian { deviation: f64 },

    /// SVD iteration did not converge.
    #[error("SVD did not converge on a {rows}x{cols} matrix (frobenius norm {norm:e}, largest |entry| {max_abs:e})")]
    SvdFailed {
        rows: usize,
        cols: usize,
        norm: f64,
        max_abs: f64,
    },

    /// Hermitian eigensolver did not converge.
    #[error("Hermitian eigendecomposition did not converge on a {0}x{0} matrix")]
    EigenFailed(usize),

    /// Truncation policy outside its valid range.
    #[error("invalid truncation policy: {0}")]
    InvalidPolicy(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Dense row-major tensor of double-precision complex numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

fn check_shape(shape: &[usize]) -> TensorResult<usize> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroExtent(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl ComplexTensor {
    /// Wrap `data` with the given shape, checking length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> TensorResult<Self> {
        let expected = check_shape(&shape)?;
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(TensorError::NonFinite(k));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for data already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<C64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> TensorResult<Self> {
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![ZERO; n],
        })
    }

    /// `n x n` identity matrix.
    pub fn identity(n: usize) -> TensorResult<Self> {
        let mut t = Self::zeros(vec![n, n])?;
        for k in 0..n {
            t.data[k * n + k] = ONE;
        }
        Ok(t)
    }

    /// Build a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn<F>(shape: Vec<usize>, mut f: F) -> TensorResult<Self>
    where
        F: FnMut(&[usize]) -> C64,
    {
        let n = check_shape(&shape)?;
        let mut idx = vec![0; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self::new(shape, data)
    }

    /// Column vector from a slice.
    pub fn vector(v: &[C64]) -> TensorResult<Self> {
        Self::new(vec![v.len()], v.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    /// Element at a multi-index. Panics if out of range.
    pub fn get(&self, idx: &[usize]) -> C64 {
        assert_eq!(idx.len(), self.rank());
        let mut flat = 0;
        for (k, (&i, &e)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < e, "index {i} out of range for axis {k} of extent {e}");
            flat = flat * e + i;
        }
        self.data[flat]
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> TensorResult<Self> {
        let expected = check_shape(&shape)?;
        if expected != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Reorder axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> TensorResult<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes.iter().any(|&a| {
                a >= rank || std::mem::replace(&mut seen[a], true)
            })
        {
            return Err(TensorError::InvalidAxes {
                axes: axes.to_vec(),
                rank,
            });
        }
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let data = permute_data(&self.data, &self.shape, axes);
        Ok(Self { shape, data })
    }

    /// Multiply every entry by `alpha`.
    pub fn scaled(&self, alpha: C64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&z| z * alpha).collect(),
        }
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> TensorResult<Self> {
        let (r, c) = self.matrix_dims()?;
        let mut data = vec![ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j].conj();
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> TensorResult<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(TensorError::RankMismatch {
                expected: 2,
                actual: self.rank(),
            }),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Self) -> TensorResult<Self> {
        contract(self, rhs, &[(1, 0)])
    }

    /// Largest entrywise deviation from Hermiticity, `max |h_ij - conj(h_ji)|`.
    pub fn hermiticity_defect(&self) -> TensorResult<f64> {
        let (r, c) = self.matrix_dims()?;
        if r != c {
            return Err(TensorError::NotSquare { rows: r, cols: c });
        }
        let mut dev: f64 = 0.0;
        for i in 0..r {
            for j in 0..=i {
                dev = dev.max((self.data[i * r + j] - self.data[j * r + i].conj()).norm());
            }
        }
        Ok(dev)
    }

    /// Largest entrywise deviation of `u^dag u` from the identity.
    pub fn unitarity_defect(&self) -> TensorResult<f64> {
        let (r, c) = self.matrix_dims()?;
        if r != c {
            return Err(TensorError::NotSquare { rows: r, cols: c });
        }
        let g = self.adjoint()?.matmul(self)?;
        let mut dev: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { ONE } else { ZERO };
                dev = dev.max((g.data[i * r + j] - target).norm());
            }
        }
        Ok(dev)
    }
}

/// Row-major axis permutation of raw data.
pub(crate) fn permute_data(data: &[C64], shape: &[usize], axes: &[usize]) -> Vec<C64> {
    let rank = shape.len();
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        return data.to_vec();
    }
    // The innermost output axis is walked in a tight loop.
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for _ in 0..n / inner {
        for k in 0..inner {
            out.push(data[base + k * inner_stride]);
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// `out = a (m x k) * b (k x n)`, all row-major.
pub(crate) fn gemm(a: &[C64], m: usize, k: usize, b: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; m * n];
    gemm_into(&mut out, a, m, k, b, n);
    out
}

pub(crate) fn gemm_into(out: &mut [C64], a: &[C64], m: usize, k: usize, b: &[C64], n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let av = MatRef::from_row_major_slice(a, m, k);
    let bv = MatRef::from_row_major_slice(b, k, n);
    let ov = MatMut::from_row_major_slice_mut(out, m, n);
    matmul(ov, Accum::Replace, av, bv, ONE, Par::Seq);
}

/// `out = a^dag (k x m)^dag * b (k x n)`: contracts the row index of both.
pub(crate) fn gemm_adj_left(a: &[C64], k: usize, m: usize, b: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; m * n];
    let av = MatRef::from_row_major_slice(a, k, m);
    let bv = MatRef::from_row_major_slice(b, k, n);
    let ov = MatMut::from_row_major_slice_mut(&mut out, m, n);
    matmul(ov, Accum::Replace, av.adjoint(), bv, ONE, Par::Seq);
    out
}

/// `out = a (m x k) * b^dag` where `b` is stored as `n x k`.
pub(crate) fn gemm_adj_right(a: &[C64], m: usize, k: usize, b: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; m * n];
    let av = MatRef::from_row_major_slice(a, m, k);
    let bv = MatRef::from_row_major_slice(b, n, k);
    let ov = MatMut::from_row_major_slice_mut(&mut out, m, n);
    matmul(ov, Accum::Replace, av, bv.adjoint(), ONE, Par::Seq);
    out
}

/// Contract `a` with `b` over the listed `(axis_of_a, axis_of_b)` pairs.
///
/// The result's axes are the free axes of `a` in their original order
/// followed by the free axes of `b`. With no pairs this is the outer product.
pub fn contract(
    a: &ComplexTensor,
    b: &ComplexTensor,
    axis_pairs: &[(usize, usize)],
) -> TensorResult<ComplexTensor> {
    let (ra, rb) = (a.rank(), b.rank());
    let mut used_a = vec![false; ra];
    let mut used_b = vec![false; rb];
    for &(x, y) in axis_pairs {
        if x >= ra || y >= rb || used_a[x] || used_b[y] {
            return Err(TensorError::InvalidAxes {
                axes: axis_pairs.iter().flat_map(|&(p, q)| [p, q]).collect(),
                rank: ra.max(rb),
            });
        }
        used_a[x] = true;
        used_b[y] = true;
        if a.shape[x] != b.shape[y] {
            return Err(TensorError::DimensionMismatch {
                a_axis: x,
                a_extent: a.shape[x],
                b_axis: y,
                b_extent: b.shape[y],
            });
        }
    }
    let free_a: Vec<usize> = (0..ra).filter(|&k| !used_a[k]).collect();
    let free_b: Vec<usize> = (0..rb).filter(|&k| !used_b[k]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(axis_pairs.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = axis_pairs.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());

    let m: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let kk: usize = axis_pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&k| b.shape[k]).product();

    let is_identity = |p: &[usize]| p.iter().enumerate().all(|(i, &x)| i == x);
    let da = if is_identity(&perm_a) {
        std::borrow::Cow::Borrowed(&a.data[..])
    } else {
        std::borrow::Cow::Owned(permute_data(&a.data, &a.shape, &perm_a))
    };
    let db = if is_identity(&perm_b) {
        std::borrow::Cow::Borrowed(&b.data[..])
    } else {
        std::borrow::Cow::Owned(permute_data(&b.data, &b.shape, &perm_b))
    };
    let data = gemm(&da, m, kk, &db, n);

    let mut shape: Vec<usize> = free_a.iter().map(|&k| a.shape[k]).collect();
    shape.extend(free_b.iter().map(|&k| b.shape[k]));
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(ComplexTensor::from_parts(shape, data))
}

/// Bond-dimension and weight limits applied after every SVD.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TruncationPolicy {
    chi_max: usize,
    cutoff: f64,
}

impl TruncationPolicy {
    pub fn new(chi_max: usize, cutoff: f64) -> TensorResult<Self> {
        if chi_max < 1 {
            return Err(TensorError::InvalidPolicy("chi_max must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&cutoff) {
            return Err(TensorError::InvalidPolicy(format!(
                "cutoff must lie in [0, 1), got {cutoff}"
            )));
        }
        Ok(Self { chi_max, cutoff })
    }

    /// No truncation beyond numerical rank.
    pub fn exact() -> Self {
        Self {
            chi_max: usize::MAX,
            cutoff: 0.0,
        }
    }

    pub fn chi_max(&self) -> usize {
        self.chi_max
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Number of singular values to keep from a non-increasing spectrum, and
    /// the relative weight of the rest.
    pub fn retained(&self, s: &[f64], rows: usize, cols: usize) -> (usize, f64) {
        let total: f64 = s.iter().map(|x| x * x).sum();
        if s.is_empty() || total == 0.0 {
            return (1, 0.0);
        }
        let tol = s[0] * f64::EPSILON * rows.max(cols) as f64;
        let rank = s.iter().take_while(|&&x| x > tol).count().max(1);
        // Smallest count whose dropped tail stays within the cutoff.
        let mut keep = s.len();
        let mut tail = 0.0;
        while keep > 1 {
            let w = s[keep - 1] * s[keep - 1];
            if tail + w > self.cutoff * total {
                break;
            }
            tail += w;
            keep -= 1;
        }
        let keep = keep.min(rank).min(self.chi_max).max(1);
        let dropped: f64 = s[keep..].iter().map(|x| x * x).sum();
        (keep, dropped / total)
    }
}

/// Truncated singular value decomposition `m ~ left * diag(s) * right`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub left_isometry: ComplexTensor,
    /// Non-increasing, length `k`.
    pub singular_values: Vec<f64>,
    /// `k x cols`, orthonormal rows.
    pub right_isometry: ComplexTensor,
    /// Dropped squared singular values over the total squared weight.
    pub discarded_weight: f64,
}

/// Raw row-major truncated SVD: returns `(u, s, vh, k, discarded)`.
pub(crate) fn svd_raw(
    data: &[C64],
    rows: usize,
    cols: usize,
    policy: &TruncationPolicy,
) -> TensorResult<(Vec<C64>, Vec<f64>, Vec<C64>, usize, f64)> {
    if let Some(k) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(TensorError::NonFinite(k));
    }
    let view = MatRef::from_row_major_slice(data, rows, cols);
    let svd = view.thin_svd().map_err(|_| TensorError::SvdFailed {
        rows,
        cols,
        norm: data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        max_abs: data.iter().map(|z| z.norm()).fold(0.0, f64::max),
    })?;
    let sv = svd.S().column_vector();
    let s_all: Vec<f64> = (0..sv.nrows()).map(|i| sv[i].re).collect();
    let (k, discarded) = policy.retained(&s_all, rows, cols);
    let u = svd.U();
    let v = svd.V();
    let mut uo = Vec::with_capacity(rows * k);
    for i in 0..rows {
        for c in 0..k {
            uo.push(u[(i, c)]);
        }
    }
    let mut vh = Vec::with_capacity(k * cols);
    for c in 0..k {
        for j in 0..cols {
            vh.push(v[(j, c)].conj());
        }
    }
    Ok((uo, s_all[..k].to_vec(), vh, k, discarded))
}

/// Truncated SVD of a rank-2 tensor under `policy`.
///
/// Keeps `min(chi_max, count allowed by cutoff, numerical rank)` singular
/// values, at least one.
pub fn svd_truncate(m: &ComplexTensor, policy: &TruncationPolicy) -> TensorResult<SvdResult> {
    let (rows, cols) = m.matrix_dims()?;
    let (u, s, vh, k, discarded) = svd_raw(&m.data, rows, cols, policy)?;
    Ok(SvdResult {
        left_isometry: ComplexTensor::from_parts(vec![rows, k], u),
        singular_values: s,
        right_isometry: ComplexTensor::from_parts(vec![k, cols], vh),
        discarded_weight: discarded,
    })
}

/// Thin QR of a row-major `rows x cols` matrix: `(q, r, k)` with `k = min`.
pub(crate) fn qr_raw(data: &[C64], rows: usize, cols: usize) -> (Vec<C64>, Vec<C64>, usize) {
    let view = MatRef::from_row_major_slice(data, rows, cols);
    let qr = view.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    let k = rows.min(cols);
    let mut qo = Vec::with_capacity(rows * k);
    for i in 0..rows {
        for c in 0..k {
            qo.push(q[(i, c)]);
        }
    }
    let mut ro = Vec::with_capacity(k * cols);
    for c in 0..k {
        for j in 0..cols {
            ro.push(r[(c, j)]);
        }
    }
    (qo, ro, k)
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matrix whose columns are the corresponding eigenvectors.
pub fn hermitian_eigen(h: &ComplexTensor) -> TensorResult<(Vec<f64>, ComplexTensor)> {
    let (n, c) = h.matrix_dims()?;
    if n != c {
        return Err(TensorError::NotSquare { rows: n, cols: c });
    }
    // Symmetrize so round-off in the input cannot leak into the solver.
    let mut sym = h.data.clone();
    for i in 0..n {
        for j in 0..i {
            let z = 0.5 * (h.data[i * n + j] + h.data[j * n + i].conj());
            sym[i * n + j] = z;
            sym[j * n + i] = z.conj();
        }
        sym[i * n + i] = C64::new(h.data[i * n + i].re, 0.0);
    }
    let view = MatRef::from_row_major_slice(&sym, n, n);
    let evd = view
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| TensorError::EigenFailed(n))?;
    let sv = evd.S().column_vector();
    let vals: Vec<f64> = (0..n).map(|i| sv[i].re).collect();
    let u = evd.U();
    let mut vecs = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            vecs.push(u[(i, j)]);
        }
    }
    Ok((vals, ComplexTensor::from_parts(vec![n, n], vecs)))
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(h: &ComplexTensor) -> TensorResult<Vec<f64>> {
    Ok(hermitian_eigen(h)?.0)
}

/// `exp(-i h)` for a Hermitian generator `h`, via its eigen-decomposition.
pub fn expm_hermitian_generator(h: &ComplexTensor) -> TensorResult<ComplexTensor> {
    let deviation = h.hermiticity_defect()?;
    let scale = h.data.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if deviation > 1e-12 * scale {
        return Err(TensorError::NotHermitian { deviation });
    }
    let (vals, vecs) = hermitian_eigen(h)?;
    let n = vals.len();
    // U = V diag(e^{-i lambda}) V^dag
    let mut scaled = vecs.data.clone();
    for i in 0..n {
        for (j, &lam) in vals.iter().enumerate() {
            scaled[i * n + j] *= C64::from_polar(1.0, -lam);
        }
    }
    let out = gemm_adj_right(&scaled, n, n, &vecs.data, n);
    Ok(ComplexTensor::from_parts(vec![n, n], out))
}
