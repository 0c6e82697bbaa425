//! Dense row-major tensors and a recorded operation tape for reverse-mode
//! differentiation.
//!
//! Tensors are immutable values. A tensor registered on a [`Tape`] (via
//! [`Tape::leaf`] or as the output of a recorded op) carries a node id; every
//! op applied through the tape to at least one tracked input appends a record.
//! [`Tape::backward`] walks the records in reverse insertion order.

mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;

pub use gradcheck::{finite_difference_check, finite_difference_check_many, GradCheckError};
pub use ops::{Axis, Op, OpKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("tensor belongs to a different tape")]
    ForeignTape,
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    BadData { shape: Vec<usize>, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<[S]>,
    node: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::BadData {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: data.into(),
            node: None,
        })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: vec![],
            data: vec![v].into(),
            node: None,
        }
    }

    pub fn full(shape: Vec<usize>, v: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n].into(),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, S::one())
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    /// `n × n` identity.
    pub fn eye(n: usize) -> Self {
        let mut d = vec![S::zero(); n * n];
        for i in 0..n {
            d[i * n + i] = S::one();
        }
        Self::matrix(n, n, d).expect("square shape")
    }

    /// Row vector `1 × k`.
    pub fn row(data: Vec<S>) -> Self {
        let k = data.len();
        Self::matrix(1, k, data).expect("row shape")
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<[S]>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same values with no tape attachment.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect::<Vec<_>>().into(),
            node: None,
        }
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..self.data.len().min(16)])
            .field("node", &self.node.map(|n| n.index))
            .finish()
    }
}

pub(crate) struct Node<S> {
    pub(crate) op: Op<S>,
    /// Node index of each input, `None` for untracked constants.
    pub(crate) parents: Vec<Option<usize>>,
    pub(crate) inputs: Vec<Tensor<S>>,
    pub(crate) output: Tensor<S>,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Single-threaded operation recorder.
pub struct Tape<S> {
    id: u64,
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register `t` as a differentiable leaf on this tape.
    pub fn leaf(&self, t: &Tensor<S>) -> Tensor<S> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        let out = Tensor::from_parts(
            t.shape.clone(),
            Arc::clone(&t.data),
            Some(NodeId { tape: self.id, index }),
        );
        nodes.push(Node {
            op: Op::Leaf,
            parents: vec![],
            inputs: vec![],
            output: out.detach(),
        });
        out
    }

    /// Evaluate `op` on `inputs`, recording it when any input is tracked.
    pub fn apply(&self, op: Op<S>, inputs: &[&Tensor<S>]) -> Result<Tensor<S>, TensorError> {
        let mut parents = Vec::with_capacity(inputs.len());
        for t in inputs {
            match t.node {
                Some(n) if n.tape != self.id => return Err(TensorError::ForeignTape),
                Some(n) => parents.push(Some(n.index)),
                None => parents.push(None),
            }
        }
        let (shape, data) = ops::forward(&op, inputs)?;
        if parents.iter().all(Option::is_none) {
            return Ok(Tensor::from_parts(shape, data.into(), None));
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        let out = Tensor::from_parts(shape, data.into(), Some(NodeId { tape: self.id, index }));
        nodes.push(Node {
            op,
            parents,
            inputs: inputs.iter().map(|t| t.detach()).collect(),
            output: out.detach(),
        });
        Ok(out)
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: &Tensor<S>) -> Result<Gradients<S>, TensorError> {
        if root.len() != 1 {
            return Err(TensorError::NonScalarRoot(root.shape.clone()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<S>>> = (0..nodes.len()).map(|_| None).collect();
        let root_index = match root.node {
            Some(n) if n.tape != self.id => return Err(TensorError::ForeignTape),
            Some(n) => Some(n.index),
            None => None,
        };
        if let Some(r) = root_index {
            grads[r] = Some(vec![S::one()]);
            for i in (0..=r).rev() {
                let Some(g) = grads[i].take() else { continue };
                let node = &nodes[i];
                if !matches!(node.op, Op::Leaf) {
                    let contribs = ops::backward(node, &g)?;
                    for (parent, contrib) in node.parents.iter().zip(contribs) {
                        let (Some(p), Some(c)) = (parent, contrib) else { continue };
                        match &mut grads[*p] {
                            Some(acc) => acc.iter_mut().zip(c).for_each(|(a, v)| *a = *a + v),
                            slot => *slot = Some(c),
                        }
                    }
                }
                grads[i] = Some(g);
            }
        }
        let mut map = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                continue;
            }
            let shape = node.output.shape.clone();
            let g = match grads[i].take() {
                Some(g) => Tensor::new(shape, g)?,
                None => Tensor::zeros(shape),
            };
            map.insert(i, g);
        }
        Ok(Gradients { tape: self.id, map })
    }

    /// Kinds of the recorded ops, in insertion order.
    pub fn op_kinds(&self) -> Vec<Option<OpKind>> {
        self.nodes.borrow().iter().map(|n| n.op.kind()).collect()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    tape: u64,
    map: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a leaf tensor of the tape that produced these gradients.
    pub fn get(&self, t: &Tensor<S>) -> Option<&Tensor<S>> {
        let n = t.node?;
        if n.tape != self.tape {
            return None;
        }
        self.map.get(&n.index)
    }

    /// Gradient for `t`, zeros when `t` is untracked or not a leaf.
    pub fn wrt(&self, t: &Tensor<S>) -> Tensor<S> {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape.clone()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Convenience wrappers over [`Tape::apply`].
impl<S: Scalar> Tape<S> {
    pub fn matmul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn transpose(&self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Transpose, &[a])
    }
    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn scale(&self, a: &Tensor<S>, s: S) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Scale(s), &[a])
    }
    pub fn exp(&self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Exp, &[a])
    }
    pub fn ln(&self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Ln, &[a])
    }
    pub fn elu(&self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Elu, &[a])
    }
    pub fn sum(&self, a: &Tensor<S>, axis: Axis) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Sum(axis), &[a])
    }
    pub fn mean(&self, a: &Tensor<S>, axis: Axis) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Mean(axis), &[a])
    }
    pub fn sum_all(&self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::SumAll, &[a])
    }
    pub fn concat(&self, parts: &[&Tensor<S>], axis: Axis) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Concat(axis), parts)
    }
    pub fn slice(
        &self,
        a: &Tensor<S>,
        axis: Axis,
        start: usize,
        end: usize,
    ) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }
    pub fn select_rows(&self, a: &Tensor<S>, rows: &[usize]) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::SelectRows(rows.to_vec()), &[a])
    }
    pub fn log_softmax(&self, a: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::LogSoftmax, &[a])
    }
    pub fn broadcast_rows(&self, a: &Tensor<S>, rows: usize) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::BroadcastRows(rows), &[a])
    }
    pub fn dropout(&self, a: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Dropout, &[a, mask])
    }
    pub fn reshape(&self, a: &Tensor<S>, shape: Vec<usize>) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Reshape(shape), &[a])
    }
    pub fn clamp(&self, a: &Tensor<S>, lo: S, hi: S) -> Result<Tensor<S>, TensorError> {
        self.apply(Op::Clamp { lo, hi }, &[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn elu_negative_closed_form() {
        let tape = Tape::new();
        let y = tape.elu(&Tensor::<f64>::from_f64(vec![1], &[-1.0]).unwrap()).unwrap();
        assert!((y.item() - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y.item() + 0.632121).abs() < 1e-6);
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let tape = Tape::new();
        let a = m(3, 2, &[1.0, -2.0, 0.5, 3.0, 7.0, 1e-3]);
        let out = tape.matmul(&Tensor::eye(3), &a).unwrap();
        assert!(out.bit_eq(&a));

        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 1, &[5.0, 6.0]);
        let out = tape.matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::new();
        let err = tape
            .matmul(&m(2, 3, &[0.0; 6]), &m(2, 3, &[0.0; 6]))
            .unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn unknown_op_is_distinct_error() {
        let err = "conv2d".parse::<OpKind>().unwrap_err();
        assert_eq!(err, TensorError::UnknownOp("conv2d".into()));
    }

    #[test]
    fn untracked_inputs_record_nothing() {
        let tape = Tape::<f64>::new();
        let a = m(1, 2, &[1.0, 2.0]);
        let _ = tape.exp(&a).unwrap();
        assert!(tape.is_empty());
        let x = tape.leaf(&a);
        let _ = tape.exp(&x).unwrap();
        assert_eq!(tape.len(), 2);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0f64));
        let y = tape.mul(&x, &x).unwrap();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.wrt(&x).item(), 6.0);
    }

    #[test]
    fn elu_gradient_at_minus_one() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::<f64>::from_f64(vec![1], &[-1.0]).unwrap());
        let y = tape.sum_all(&tape.elu(&x).unwrap()).unwrap();
        let g = tape.backward(&y).unwrap();
        assert!((g.wrt(&x).item() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0f64));
        let unused = tape.leaf(&m(2, 2, &[1.0; 4]));
        let y = tape.mul(&x, &x).unwrap();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.wrt(&unused).data(), &[0.0; 4]);
        assert_eq!(g.get(&unused).unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&m(1, 2, &[1.0, 2.0]));
        assert!(matches!(
            tape.backward(&x),
            Err(TensorError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn foreign_tape_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.leaf(&Tensor::scalar(1.0f64));
        assert_eq!(t2.exp(&x).unwrap_err(), TensorError::ForeignTape);
    }

    #[test]
    fn parents_precede_children() {
        let tape = Tape::new();
        let x = tape.leaf(&m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.matmul(&x, &x).unwrap();
        let z = tape.sum_all(&tape.elu(&y).unwrap()).unwrap();
        let nodes = tape.nodes.borrow();
        for (i, n) in nodes.iter().enumerate() {
            assert!(n.parents.iter().flatten().all(|&p| p < i));
        }
        assert_eq!(z.node().unwrap().index(), nodes.len() - 1);
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        let tape = Tape::new();
        let x = tape.leaf(&m(2, 2, &[0.3, -1.2, 2.0, 0.7]));
        let r1 = tape.sum_all(&tape.elu(&x).unwrap()).unwrap();
        let r2 = tape.sum_all(&tape.matmul(&x, &x).unwrap()).unwrap();
        let both = tape.add(&r1, &r2).unwrap();
        let g1 = tape.backward(&r1).unwrap().wrt(&x);
        let g2 = tape.backward(&r2).unwrap().wrt(&x);
        let g = tape.backward(&both).unwrap().wrt(&x);
        for i in 0..4 {
            assert!((g.data()[i] - g1.data()[i] - g2.data()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn f32_tape_works() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(&Tensor::scalar(3.0f32));
        let y = tape.mul(&x, &x).unwrap();
        assert_eq!(tape.backward(&y).unwrap().wrt(&x).item(), 6.0f32);
    }
}
