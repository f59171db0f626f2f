//! Dense 4-D tensors with tape-based reverse-mode differentiation.
//!
//! A [`DiffTensor`] is an immutable `(batch, channels, height, width)` array of
//! `f64`. Tensors become differentiable once registered on a [`GradTape`] via
//! [`GradTape::leaf`]; every op applied to a tracked tensor records a node on
//! that tape, and [`DiffTensor::backward`] replays the tape in reverse.
//!
//! The op set is closed: each op listed in [`OpKind`] has a matching backward
//! rule in `tape.rs` and a finite-difference test.

mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

use std::sync::Arc;

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use kernels::Padding;
pub use ops::OpKind;
pub use tape::{GradTape, Gradients};

pub(crate) use tape::NodeRef;

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

#[derive(Clone)]
pub struct DiffTensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl std::fmt::Debug for DiffTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffTensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl DiffTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!("shape {shape:?} has a zero dimension")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(shape, Arc::new(data), None))
    }

    pub(crate) fn from_parts(shape: Shape, data: Arc<Vec<f64>>, node: Option<NodeRef>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        DiffTensor { shape, data, node }
    }

    pub fn full(shape: Shape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; numel(&shape)])
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts([1, 1, 1, 1], Arc::new(vec![value]), None)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    /// Tape node id, if the tensor is tracked.
    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same values, cut from the tape. Gradient never flows through the result.
    pub fn detach(&self) -> DiffTensor {
        DiffTensor::from_parts(self.shape, Arc::clone(&self.data), None)
    }

    /// Plane `(n, c)` as a slice of `height * width` values.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
