//! Dense n-dimensional tensors and the reverse-mode differentiation tape.
//!
//! [`Tensor`] is a plain immutable value: a shape plus row-major `f64` data.
//! It is `Send + Sync` and cheap to clone. [`Var`] is a tensor recorded on a
//! [`Tape`]; every operation on a `Var` appends a node holding its inputs and
//! forward value so that [`Tape::backward`] can sweep the adjoints.

mod broadcast;
pub mod kernels;
mod ops;
mod tape;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use broadcast::broadcast_shape;
pub use ops::Padding;
pub use tape::{Gradients, Tape, Unary, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid_shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![], vec![v])
    }

    pub fn vector(data: &[f64]) -> Self {
        Self::from_parts(vec![data.len()], data.to_vec())
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid_shape("matrix", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self::from_parts(vec![rows.len(), cols], data))
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], d)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len());
        let off: usize = index
            .iter()
            .zip(self.strides())
            .zip(&self.shape)
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                i * s
            })
            .sum();
        self.data[off]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Elementwise combination with broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        broadcast::zip_map("zip_map", self, other, f)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::invalid_shape("transpose", "expected rank 2"));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Self::from_parts(vec![c, r], kernels::transpose(&self.data, r, c)))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k, n) = ops::matmul_dims(self.shape(), other.shape())?;
        Ok(Self::from_parts(
            vec![m, n],
            kernels::matmul(&self.data, &other.data, m, k, n),
        ))
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

static NEXT_PARAM: AtomicU64 = AtomicU64::new(0);

/// A long-lived trainable leaf.
///
/// Parameters outlive tapes: each step binds them onto a fresh tape with
/// [`Tape::param`], and the optimizer reads their gradients back by id.
/// Clones share the id, so a cloned layer binds to the same tape node.
#[derive(Clone, Debug)]
pub struct Parameter {
    id: ParamId,
    value: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        Parameter {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            value,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        Parameter {
            trainable: false,
            ..Self::new(value)
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Replaces the value, which must keep the same shape.
    pub fn set(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape("parameter assignment", self.value.shape(), value.shape()));
        }
        self.value = value;
        Ok(())
    }
}
