//! Dense row-major tensors and a small reverse-mode tape.
//!
//! [`Tensor`] is an immutable value (storage is shared behind an `Arc`).
//! Differentiable computation goes through [`Tape`] and the [`Var`] handles
//! it hands out; see [`tape`] and [`ops`].

mod gradcheck;
pub mod ops;
pub mod tape;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub use gradcheck::{all_probes, check_gradients, relative_error, GradCheck};
pub use tape::{Gradients, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real64,
    Complex128,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Arc<Storage>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &self.dtype())
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), Storage::Real(data)))
    }

    pub fn new_complex(shape: &[usize], data: Vec<Complex64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), Storage::Complex(data)))
    }

    /// Internal constructor; callers guarantee `numel(shape) == data.len()`.
    pub(crate) fn real_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self::from_parts(shape, Storage::Real(data))
    }

    pub(crate) fn complex_unchecked(shape: Vec<usize>, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self::from_parts(shape, Storage::Complex(data))
    }

    fn from_parts(shape: Vec<usize>, storage: Storage) -> Self {
        Self {
            shape,
            storage: Arc::new(storage),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::real_unchecked(vec![], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::real_unchecked(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn complex_zeros(shape: &[usize]) -> Self {
        Self::complex_unchecked(shape.to_vec(), vec![Complex64::new(0.0, 0.0); numel(shape)])
    }

    /// Row-major tensor whose value at each flat index is `f(index)`.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        Self::real_unchecked(shape.to_vec(), (0..numel(shape)).map(f).collect())
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn dtype(&self) -> DType {
        match &*self.storage {
            Storage::Real(_) => DType::Real64,
            Storage::Complex(_) => DType::Complex128,
        }
    }

    pub fn is_complex(&self) -> bool {
        self.dtype() == DType::Complex128
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    /// Real payload.
    ///
    /// Panics on a complex tensor; use [`Tensor::try_data`] where the dtype
    /// is not known statically.
    pub fn data(&self) -> &[f64] {
        match &*self.storage {
            Storage::Real(v) => v,
            Storage::Complex(_) => panic!("expected a real tensor, found complex {:?}", self.shape),
        }
    }

    pub fn try_data(&self) -> Result<&[f64]> {
        match &*self.storage {
            Storage::Real(v) => Ok(v),
            Storage::Complex(_) => Err(Error::Usage(format!(
                "expected a real tensor, found complex {:?}",
                self.shape
            ))),
        }
    }

    /// Complex payload. Panics on a real tensor.
    pub fn cdata(&self) -> &[Complex64] {
        match &*self.storage {
            Storage::Complex(v) => v,
            Storage::Real(_) => panic!("expected a complex tensor, found real {:?}", self.shape),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().to_vec()
    }

    /// Value of a single-element real tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data()[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            storage: Arc::clone(&self.storage),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::real_unchecked(self.shape.clone(), self.data().iter().map(|&x| f(x)).collect())
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise operands {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(Self::real_unchecked(
            self.shape.clone(),
            self.data()
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// True when every element (real and imaginary parts) is finite.
    pub fn all_finite(&self) -> bool {
        match &*self.storage {
            Storage::Real(v) => v.iter().all(|x| x.is_finite()),
            Storage::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data().iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        match (&*self.storage, &*other.storage) {
            (Storage::Real(a), Storage::Real(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            (Storage::Complex(a), Storage::Complex(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max),
            _ => panic!("max_abs_diff across dtypes"),
        }
    }

    /// Bitwise equality of shape and payload.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&*self.storage, &*other.storage) {
            (Storage::Real(a), Storage::Real(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Storage::Complex(a), Storage::Complex(b)) => a.iter().zip(b).all(|(x, y)| {
                x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()
            }),
            _ => false,
        }
    }

    /// Elementwise sum of two same-shape, same-dtype tensors.
    pub(crate) fn accumulate(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        match (&*self.storage, &*other.storage) {
            (Storage::Real(a), Storage::Real(b)) => Tensor::real_unchecked(
                self.shape.clone(),
                a.iter().zip(b).map(|(x, y)| x + y).collect(),
            ),
            (Storage::Complex(a), Storage::Complex(b)) => Tensor::complex_unchecked(
                self.shape.clone(),
                a.iter().zip(b).map(|(x, y)| x + y).collect(),
            ),
            _ => panic!("gradient dtype mismatch for shape {:?}", self.shape),
        }
    }

    pub(crate) fn zeros_like(&self) -> Tensor {
        match self.dtype() {
            DType::Real64 => Tensor::zeros(&self.shape),
            DType::Complex128 => Tensor::complex_zeros(&self.shape),
        }
    }

    /// Batched matrix product without gradient tracking.
    ///
    /// `a: [.., p, q]`, `b: [q, r]` or `b: [.., q, r]` with the same leading
    /// extents as `a`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(self.shape(), b.shape())?;
        Ok(Tensor::real_unchecked(
            plan.out_shape.clone(),
            plan.forward(self.data(), b.data()),
        ))
    }
}

/// Shape bookkeeping for [`Tensor::matmul`] and its tape counterpart.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// `b` is a single matrix shared by every batch entry.
    pub shared_rhs: bool,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || Error::Shape(format!("matmul operands {a:?} and {b:?} are incompatible"));
        if a.len() < 2 || b.len() < 2 {
            return Err(err());
        }
        let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
        let (q2, r) = (b[b.len() - 2], b[b.len() - 1]);
        if q != q2 {
            return Err(err());
        }
        let lead = &a[..a.len() - 2];
        let shared_rhs = b.len() == 2;
        if !shared_rhs && &b[..b.len() - 2] != lead {
            return Err(err());
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([p, r]);
        Ok(Self {
            batch: numel(lead),
            p,
            q,
            r,
            shared_rhs,
            out_shape,
        })
    }

    fn rhs_offset(&self, b: usize) -> usize {
        if self.shared_rhs {
            0
        } else {
            b * self.q * self.r
        }
    }

    pub fn forward(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let (p, q, r) = (self.p, self.q, self.r);
        let mut out = vec![0.0; self.batch * p * r];
        for bi in 0..self.batch {
            let rhs = &b[self.rhs_offset(bi)..][..q * r];
            for i in 0..p {
                let row = &a[(bi * p + i) * q..][..q];
                let dst = &mut out[(bi * p + i) * r..][..r];
                for (k, &av) in row.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (d, &bv) in dst.iter_mut().zip(&rhs[k * r..(k + 1) * r]) {
                        *d += av * bv;
                    }
                }
            }
        }
        out
    }

    /// Returns `(dA, dB)` for upstream gradient `g` of the output.
    pub fn backward(&self, a: &[f64], b: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (p, q, r) = (self.p, self.q, self.r);
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; b.len()];
        for bi in 0..self.batch {
            let off = self.rhs_offset(bi);
            let rhs = &b[off..][..q * r];
            for i in 0..p {
                let grow = &g[(bi * p + i) * r..][..r];
                let arow = &a[(bi * p + i) * q..][..q];
                let garow = &mut ga[(bi * p + i) * q..][..q];
                for k in 0..q {
                    let brow = &rhs[k * r..(k + 1) * r];
                    garow[k] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    let av = arow[k];
                    if av != 0.0 {
                        let gbrow = &mut gb[off + k * r..][..r];
                        for (d, &gv) in gbrow.iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
        }
        (ga, gb)
    }
}

/// Result shape of broadcasting `a` against `b` (trailing-dimension rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape(format!(
                    "shapes {a:?} and {b:?} are not broadcast-compatible"
                )))
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` that broadcasts to it.
pub(crate) fn broadcast_index(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    if in_shape == out_shape {
        return (0..n).collect();
    }
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    // Fast path: the input is a suffix of the output (e.g. a bias vector).
    if in_shape == &out_shape[pad..] {
        let m = numel(in_shape).max(1);
        return (0..n).map(|i| i % m).collect();
    }
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            strides[i + pad] = acc;
        }
        acc *= in_shape[i];
    }
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        idx.push(off);
        for d in (0..rank).rev() {
            counter[d] += 1;
            off += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

/// Sums `grad` (shaped like the broadcast output) back onto `in_shape`.
pub(crate) fn reduce_broadcast(grad: &[f64], in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if in_shape == out_shape {
        return grad.to_vec();
    }
    let mut acc = vec![0.0; numel(in_shape)];
    for (g, j) in grad.iter().zip(broadcast_index(in_shape, out_shape)) {
        acc[j] += g;
    }
    acc
}
