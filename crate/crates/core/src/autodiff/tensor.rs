//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Identifies a node on a specific tape so tensors from different tapes
/// cannot be mixed silently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) id: usize,
}

/// Dense tensor with row-major storage.
///
/// A tensor is a plain value until a [`Tape`](super::Tape) operation touches
/// it; outputs of recorded operations carry a `node` handle back into the
/// tape so gradients can be looked up after `backward`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    values: Vec<S>,
    pub(crate) node: Option<NodeRef>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, values: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let expect: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        if expect != values.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} wants {expect} values, got {}",
                    values.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            values,
            node: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![S::zero(); n],
            node: None,
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, v: S) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![v; n],
            node: None,
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
            node: None,
        }
    }

    /// N-by-N identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros([n, n]);
        for i in 0..n {
            t.values[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        // Editing values invalidates any recorded provenance.
        self.node = None;
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.is_scalar() {
            Ok(self.values[0])
        } else {
            Err(Error::shape(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.shape),
            ))
        }
    }

    /// Entry of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[i * self.shape[1] + j]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Copy of the values with no tape provenance.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.clone(),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_node(shape: Vec<usize>, values: Vec<S>, node: NodeRef) -> Self {
        Tensor {
            shape,
            values,
            node: Some(node),
        }
    }
}
