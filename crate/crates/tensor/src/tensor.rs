use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::data::TensorData;
use crate::error::{Result, TensorError};
use crate::ops::Op;
use crate::scalar::Scalar;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Provenance of a non-leaf tensor.
pub(crate) struct Record<T: Scalar> {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor<T>>,
}

pub(crate) struct Node<T: Scalar> {
    /// Creation index; parents always have smaller ids than their children,
    /// so descending id order is a valid reverse topological order.
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    pub(crate) record: Option<Record<T>>,
}

/// A node in a reverse-mode autodiff graph.
///
/// Cloning is cheap and shares the node.
pub struct Tensor<T: Scalar> {
    pub(crate) node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.record.as_ref().map(|r| &r.op))
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                record: None,
            }),
        })
    }

    /// Constant leaf (no gradient).
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Leaf that accumulates a gradient during [`Tensor::backward`].
    pub fn parameter(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn constant(data: &TensorData<T>) -> Self {
        Self::leaf(data.shape().to_vec(), data.data().to_vec(), false)
            .expect("TensorData is always consistent")
    }

    pub fn from_data(data: &TensorData<T>, requires_grad: bool) -> Self {
        Self::leaf(data.shape().to_vec(), data.data().to_vec(), requires_grad)
            .expect("TensorData is always consistent")
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        let n = data.len();
        Self::leaf(vec![n], data, false).expect("vector shape matches length")
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Ok(Self::constant(&TensorData::from_rows(rows)?))
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(Vec::new(), vec![value], false).expect("scalar shape")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::constant(&TensorData::zeros(shape))
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        Self::constant(&TensorData::full(shape, value))
    }

    pub fn eye(n: usize) -> Self {
        Self::constant(&TensorData::eye(n))
    }

    /// Builds an op output; records provenance only when some parent needs
    /// gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op, parents: Vec<Tensor<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let record = requires_grad.then_some(Record { op, parents });
        Self {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                record,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.record.is_none()
    }

    /// Name of the recorded operation, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.record.as_ref().map(|r| r.op.name())
    }

    pub fn to_data(&self) -> TensorData<T> {
        TensorData::new(self.node.shape.clone(), self.node.data.clone())
            .expect("tensor is always consistent")
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        Ok(self.node.data[0])
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.node.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::Rank {
                op: "dims2",
                expected: 2,
                shape: self.node.shape.clone(),
            }),
        }
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<TensorData<T>> {
        self.node
            .grad
            .borrow()
            .as_ref()
            .map(|g| TensorData::new(self.node.shape.clone(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), false).expect("same shape")
    }

    /// True when both handles point at the same graph node.
    pub fn same_node(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }
}
