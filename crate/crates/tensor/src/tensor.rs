use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};
use crate::scalar::{wide, Scalar};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Stable identity of the underlying buffer; survives cloning the handle.
pub type TensorId = u64;

/// Dense n-dimensional array, immutable after construction.
///
/// Cloning is cheap (shared buffer). The only mutable state is the gradient
/// accumulator, which backward passes add into and callers zero explicitly.
pub struct Tensor<F: Scalar> {
    inner: Arc<Inner<F>>,
}

struct Inner<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<F>>>,
    id: TensorId,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    fn new(data: Vec<F>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            inner: Arc::new(Inner {
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: Mutex::new(None),
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            }),
        })
    }

    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Tensor::new(data, shape, false)
    }

    /// Trainable tensor: participates in gradient accumulation.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Tensor::new(data, shape, true)
    }

    pub fn from_f64s(data: &[f64], shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(data.iter().map(|&v| crate::scalar::fl(v)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(vec![F::zero(); n], shape, false).expect("consistent by construction")
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor::new(vec![value; n], shape, false).expect("consistent by construction")
    }

    pub fn scalar(value: F) -> Self {
        Tensor::new(vec![value], &[1], false).expect("consistent by construction")
    }

    pub(crate) fn op_output(data: Vec<F>, shape: &[usize], requires_grad: bool) -> Self {
        Tensor::new(data, shape, requires_grad).expect("op outputs are consistent")
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.inner.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.inner.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|&v| wide(v)).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    /// True when both handles point at the same buffer.
    pub fn same_buffer(&self, other: &Tensor<F>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.lock().unwrap().clone()
    }

    /// Drop the accumulator. Gradients are additive across backward passes,
    /// so optimizers call this once per step.
    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Add `delta` into the gradient accumulator.
    pub fn accumulate_grad(&self, delta: &[F]) {
        assert_eq!(
            delta.len(),
            self.inner.data.len(),
            "gradient shape must match tensor shape"
        );
        let mut guard = self.inner.grad.lock().unwrap();
        match guard.as_mut() {
            Some(acc) => {
                for (a, &d) in acc.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            None => *guard = Some(delta.to_vec()),
        }
    }
}

impl<F: Scalar> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data)
            .finish()
    }
}
