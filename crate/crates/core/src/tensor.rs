//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to the tensors created on it.
//! Calling [`Tensor::backward`] on a scalar walks the record in reverse and
//! returns the gradient of every leaf created with [`Graph::param`].
//!
//! Broadcasting covers a scalar against any tensor and a `[n]` row against
//! an `[m, n]` matrix; all other binary operations need equal shapes.
//!
//! ```
//! use trimodal_core::tensor::Graph;
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(vec![2], vec![1.0, 2.0]).unwrap();
//! let loss = x.mul(&x).unwrap().sum().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rows whose norm falls below this floor are rejected by `l2_normalize`.
pub const NORM_EPS: f64 = 1e-12;

/// Handle into a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Equal,
    LhsScalar,
    RhsScalar,
    /// Right operand is a vector repeated over the rows of a matrix.
    RhsRow(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Neg,
    Exp,
    Log,
    Relu,
    Tanh,
    Square,
    Sqrt,
}

enum Op<T> {
    Leaf,
    Binary(Binary, Bcast),
    AddScalar,
    MulScalar(T),
    Unary(Unary),
    Map(fn(T) -> T),
    MatMul {
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        rows: usize,
        cols: usize,
    },
    Sum {
        outer: usize,
        len: usize,
        inner: usize,
    },
    Mean {
        outer: usize,
        len: usize,
        inner: usize,
    },
    NormalizeRows {
        cols: usize,
        norms: Vec<T>,
    },
    SelectRows {
        index: Vec<usize>,
        cols: usize,
    },
    SegmentSum {
        segment: Vec<usize>,
        cols: usize,
    },
    Concat {
        sizes: Vec<usize>,
    },
    Reshape,
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Rc<[T]>,
    requires_grad: bool,
}

/// Operation record for one forward evaluation.
///
/// Cloning a `Graph` clones the handle, not the record.
pub struct Graph<T> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<T> Default for Graph<T> {
    fn default() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }
}

impl<T> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// Immutable value recorded on a [`Graph`].
pub struct Tensor<T> {
    graph: Graph<T>,
    id: NodeId,
    shape: Rc<[usize]>,
    value: Rc<[T]>,
    requires_grad: bool,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            id: self.id,
            shape: Rc::clone(&self.shape),
            value: Rc::clone(&self.value),
            requires_grad: self.requires_grad,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient on backward.
    pub fn param(&self, shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
        self.leaf(shape, data, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&self, value: T) -> Result<Tensor<T>> {
        self.constant(vec![], vec![value])
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let n = numel(&shape);
        self.constant(shape, vec![T::zero(); n])
    }

    fn leaf(&self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Tensor<T>> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "leaf",
                shape,
                reason: "element count does not match data length",
            });
        }
        self.push(Op::Leaf, &[], shape, data, requires_grad, "leaf")
    }

    fn push(
        &self,
        op: Op<T>,
        inputs: &[&Tensor<T>],
        shape: Vec<usize>,
        value: Vec<T>,
        leaf_grad: bool,
        name: &'static str,
    ) -> Result<Tensor<T>> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        for t in inputs {
            if !Rc::ptr_eq(&t.graph.nodes, &self.nodes) {
                return Err(Error::GraphMismatch);
            }
        }
        let requires_grad = leaf_grad || inputs.iter().any(|t| t.requires_grad);
        let value: Rc<[T]> = value.into();
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            op,
            inputs: inputs.iter().map(|t| t.id).collect(),
            value: Rc::clone(&value),
            requires_grad,
        });
        Ok(Tensor {
            graph: self.clone(),
            id,
            shape: shape.into(),
            value,
            requires_grad,
        })
    }

    /// Stacks tensors along the first axis. Every input must share the
    /// trailing dimensions; 1-D inputs of length `n` are treated as `1×n` rows.
    pub fn concat_rows(&self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(Error::InvalidShape {
            op: "concat_rows",
            shape: vec![],
            reason: "no inputs",
        })?;
        let tail = |t: &Tensor<T>| -> Vec<usize> {
            if t.shape.len() <= 1 {
                vec![t.numel()]
            } else {
                t.shape[1..].to_vec()
            }
        };
        let rows = |t: &Tensor<T>| -> usize {
            if t.shape.len() <= 1 {
                1
            } else {
                t.shape[0]
            }
        };
        let trailing = tail(first);
        let mut total_rows = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            if tail(p) != trailing {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape.to_vec(),
                    rhs: p.shape.to_vec(),
                });
            }
            total_rows += rows(p);
            sizes.push(p.numel());
            data.extend_from_slice(&p.value);
        }
        let mut shape = vec![total_rows];
        shape.extend(trailing);
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        self.push(
            Op::Concat { sizes },
            &refs,
            shape,
            data,
            false,
            "concat_rows",
        )
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn data(&self) -> &[T] {
        &self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape.to_vec()));
        }
        Ok(self.value[0])
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape {
            [r, c] => Ok((r, c)),
            _ => Err(Error::InvalidShape {
                op,
                shape: self.shape.to_vec(),
                reason: "expected a matrix",
            }),
        }
    }

    fn binary(&self, other: &Tensor<T>, kind: Binary) -> Result<Tensor<T>> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (bcast, shape) = if self.shape == other.shape {
            (Bcast::Equal, self.shape.to_vec())
        } else if other.numel() == 1 {
            (Bcast::RhsScalar, self.shape.to_vec())
        } else if self.numel() == 1 {
            (Bcast::LhsScalar, other.shape.to_vec())
        } else if matches!(*self.shape, [_, c] if *other.shape == [c]) {
            (Bcast::RhsRow(other.numel()), self.shape.to_vec())
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.shape.to_vec(),
                rhs: other.shape.to_vec(),
            });
        };
        let n = numel(&shape);
        let a = |i: usize| match bcast {
            Bcast::LhsScalar => self.value[0],
            _ => self.value[i],
        };
        let b = |i: usize| match bcast {
            Bcast::RhsScalar => other.value[0],
            Bcast::RhsRow(c) => other.value[i % c],
            _ => other.value[i],
        };
        if kind == Binary::Div {
            if let Some(i) = (0..n).find(|&i| b(i) == T::zero()) {
                return Err(Error::Domain {
                    op: "div",
                    detail: format!("division by zero at element {i}"),
                });
            }
        }
        let value = (0..n)
            .map(|i| match kind {
                Binary::Add => a(i) + b(i),
                Binary::Sub => a(i) - b(i),
                Binary::Mul => a(i) * b(i),
                Binary::Div => a(i) / b(i),
            })
            .collect();
        self.graph.push(
            Op::Binary(kind, bcast),
            &[self, other],
            shape,
            value,
            false,
            name,
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Div)
    }

    pub fn add_scalar(&self, s: T) -> Result<Tensor<T>> {
        let value = self.value.iter().map(|&v| v + s).collect();
        self.graph.push(
            Op::AddScalar,
            &[self],
            self.shape.to_vec(),
            value,
            false,
            "add_scalar",
        )
    }

    pub fn mul_scalar(&self, s: T) -> Result<Tensor<T>> {
        let value = self.value.iter().map(|&v| v * s).collect();
        self.graph.push(
            Op::MulScalar(s),
            &[self],
            self.shape.to_vec(),
            value,
            false,
            "mul_scalar",
        )
    }

    pub fn sub_scalar(&self, s: T) -> Result<Tensor<T>> {
        self.add_scalar(-s)
    }

    pub fn div_scalar(&self, s: T) -> Result<Tensor<T>> {
        if s == T::zero() {
            return Err(Error::Domain {
                op: "div_scalar",
                detail: "division by zero".into(),
            });
        }
        self.mul_scalar(T::one() / s)
    }

    fn unary(&self, kind: Unary) -> Result<Tensor<T>> {
        let name = match kind {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Square => "pow2",
            Unary::Sqrt => "sqrt",
        };
        match kind {
            Unary::Log => {
                if let Some((i, v)) = self
                    .value
                    .iter()
                    .enumerate()
                    .find(|(_, v)| **v <= T::zero())
                {
                    return Err(Error::Domain {
                        op: name,
                        detail: format!("log of non-positive value {v} at element {i}"),
                    });
                }
            }
            Unary::Sqrt => {
                if let Some((i, v)) = self.value.iter().enumerate().find(|(_, v)| **v < T::zero()) {
                    return Err(Error::Domain {
                        op: name,
                        detail: format!("sqrt of negative value {v} at element {i}"),
                    });
                }
            }
            _ => {}
        }
        let value = self
            .value
            .iter()
            .map(|&v| match kind {
                Unary::Neg => -v,
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Relu => v.max(T::zero()),
                Unary::Tanh => v.tanh(),
                Unary::Square => v * v,
                Unary::Sqrt => v.sqrt(),
            })
            .collect();
        self.graph.push(
            Op::Unary(kind),
            &[self],
            self.shape.to_vec(),
            value,
            false,
            name,
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Neg)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Exp)
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Log)
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Relu)
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Tanh)
    }

    pub fn pow2(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Square)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary(Unary::Sqrt)
    }

    /// Element-wise map with a caller-supplied derivative.
    ///
    /// The derivative is evaluated at the input value during backward; the
    /// gradient check harness uses this to build negative controls.
    pub fn map(&self, f: fn(T) -> T, df: fn(T) -> T) -> Result<Tensor<T>> {
        let value = self.value.iter().map(|&v| f(v)).collect();
        self.graph.push(
            Op::Map(df),
            &[self],
            self.shape.to_vec(),
            value,
            false,
            "map",
        )
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.rows_cols("matmul")?;
        let (k2, n) = other.rows_cols("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.to_vec(),
                rhs: other.shape.to_vec(),
            });
        }
        let value = matmul_raw(&self.value, &other.value, m, k, n);
        self.graph.push(
            Op::MatMul { m, k, n },
            &[self, other],
            vec![m, n],
            value,
            false,
            "matmul",
        )
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("transpose")?;
        let value = transpose_raw(&self.value, rows, cols);
        self.graph.push(
            Op::Transpose { rows, cols },
            &[self],
            vec![cols, rows],
            value,
            false,
            "transpose",
        )
    }

    fn axis_split(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidShape {
                op,
                shape: self.shape.to_vec(),
                reason: "axis out of range",
            });
        }
        let outer = numel(&self.shape[..axis]);
        let len = self.shape[axis];
        let inner = numel(&self.shape[axis + 1..]);
        Ok((outer, len, inner))
    }

    fn reduce(&self, axis: Option<usize>, mean: bool) -> Result<Tensor<T>> {
        let name = if mean { "mean" } else { "sum" };
        let (outer, len, inner, shape) = match axis {
            None => (1, self.numel(), 1, vec![]),
            Some(ax) => {
                let (o, l, i) = self.axis_split(ax, name)?;
                let mut s = self.shape.to_vec();
                s.remove(ax);
                (o, l, i, s)
            }
        };
        if len == 0 {
            return Err(Error::InvalidShape {
                op: name,
                shape: self.shape.to_vec(),
                reason: "reduction over an empty axis",
            });
        }
        let mut value = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    value[o * inner + i] += self.value[base + i];
                }
            }
        }
        if mean {
            let c = T::from_count(len);
            value.iter_mut().for_each(|v| *v /= c);
        }
        let op = if mean {
            Op::Mean { outer, len, inner }
        } else {
            Op::Sum { outer, len, inner }
        };
        self.graph.push(op, &[self], shape, value, false, name)
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        self.reduce(None, false)
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        self.reduce(None, true)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        self.reduce(Some(axis), false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        self.reduce(Some(axis), true)
    }

    /// Scales a vector, or every row of a matrix, to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Tensor<T>> {
        let cols = match *self.shape {
            [d] => d,
            [_, c] => c,
            _ => {
                return Err(Error::InvalidShape {
                    op: "l2_normalize",
                    shape: self.shape.to_vec(),
                    reason: "expected a vector or matrix",
                })
            }
        };
        if cols == 0 {
            return Err(Error::InvalidShape {
                op: "l2_normalize",
                shape: self.shape.to_vec(),
                reason: "zero-length rows",
            });
        }
        let eps = T::lit(NORM_EPS);
        let mut norms = Vec::with_capacity(self.numel() / cols);
        let mut value = Vec::with_capacity(self.numel());
        for (row, chunk) in self.value.chunks(cols).enumerate() {
            let norm = chunk.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm <= eps {
                return Err(Error::DegenerateNorm {
                    row,
                    norm: norm.as_f64(),
                });
            }
            value.extend(chunk.iter().map(|&v| v / norm));
            norms.push(norm);
        }
        self.graph.push(
            Op::NormalizeRows { cols, norms },
            &[self],
            self.shape.to_vec(),
            value,
            false,
            "l2_normalize",
        )
    }

    /// Gathers rows of a matrix (or elements of a vector) by index.
    pub fn select_rows(&self, index: &[usize]) -> Result<Tensor<T>> {
        let (rows, cols, vector) = match *self.shape {
            [n] => (n, 1, true),
            [r, c] => (r, c, false),
            _ => {
                return Err(Error::InvalidShape {
                    op: "select_rows",
                    shape: self.shape.to_vec(),
                    reason: "expected a vector or matrix",
                })
            }
        };
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Domain {
                op: "select_rows",
                detail: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let mut value = Vec::with_capacity(index.len() * cols);
        for &i in index {
            value.extend_from_slice(&self.value[i * cols..(i + 1) * cols]);
        }
        let shape = if vector {
            vec![index.len()]
        } else {
            vec![index.len(), cols]
        };
        self.graph.push(
            Op::SelectRows {
                index: index.to_vec(),
                cols,
            },
            &[self],
            shape,
            value,
            false,
            "select_rows",
        )
    }

    /// Sums rows into `segments` buckets: `out[segment[r]] += self[r]`.
    pub fn segment_sum(&self, segment: &[usize], segments: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("segment_sum")?;
        if segment.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "segment_sum",
                lhs: self.shape.to_vec(),
                rhs: vec![segment.len()],
            });
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= segments) {
            return Err(Error::Domain {
                op: "segment_sum",
                detail: format!("segment {bad} out of range for {segments} segments"),
            });
        }
        let mut value = vec![T::zero(); segments * cols];
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                value[s * cols + c] += self.value[r * cols + c];
            }
        }
        self.graph.push(
            Op::SegmentSum {
                segment: segment.to_vec(),
                cols,
            },
            &[self],
            vec![segments, cols],
            value,
            false,
            "segment_sum",
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        if numel(&shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.to_vec(),
                rhs: shape,
            });
        }
        self.graph.push(
            Op::Reshape,
            &[self],
            shape,
            self.value.to_vec(),
            false,
            "reshape",
        )
    }

    /// Reverse pass from a scalar. Returns gradients for every leaf that was
    /// created with [`Graph::param`] and contributes to `self`.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape.to_vec()));
        }
        let nodes = self.graph.nodes.borrow();
        let mut out = BTreeMap::new();
        if !self.requires_grad {
            return Ok(Gradients { grads: out });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.id.0 + 1, || None);
        grads[self.id.0] = Some(vec![T::one()]);
        for idx in (0..=self.id.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                out.insert(NodeId(idx), g);
                continue;
            }
            let inputs: Vec<&Node<T>> = node.inputs.iter().map(|i| &nodes[i.0]).collect();
            let local = local_grads(node, &inputs, &g);
            for (input, gi) in node.inputs.iter().zip(local) {
                if !nodes[input.0].requires_grad {
                    continue;
                }
                let Some(gi) = gi else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Gradients keyed by leaf node.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    grads: BTreeMap<NodeId, Vec<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id).map(Vec::as_slice)
    }

    pub fn by_id(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[T])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn reduce_bcast<T: Scalar>(g: &[T], bcast_scalar: bool) -> Vec<T> {
    if bcast_scalar {
        vec![g.iter().copied().sum()]
    } else {
        g.to_vec()
    }
}

fn reduce_rows<T: Scalar>(g: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for (i, &v) in g.iter().enumerate() {
        out[i % cols] += v;
    }
    out
}

fn local_grads<T: Scalar>(node: &Node<T>, inputs: &[&Node<T>], g: &[T]) -> Vec<Option<Vec<T>>> {
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Binary(kind, bcast) => {
            let (a, b) = (&inputs[0].value, &inputs[1].value);
            let n = g.len();
            let av = |i: usize| {
                if *bcast == Bcast::LhsScalar {
                    a[0]
                } else {
                    a[i]
                }
            };
            let bv = |i: usize| match *bcast {
                Bcast::RhsScalar => b[0],
                Bcast::RhsRow(c) => b[i % c],
                _ => b[i],
            };
            let (ga, gb): (Vec<T>, Vec<T>) = match kind {
                Binary::Add => (g.to_vec(), g.to_vec()),
                Binary::Sub => (g.to_vec(), g.iter().map(|&x| -x).collect()),
                Binary::Mul => (
                    (0..n).map(|i| g[i] * bv(i)).collect(),
                    (0..n).map(|i| g[i] * av(i)).collect(),
                ),
                Binary::Div => (
                    (0..n).map(|i| g[i] / bv(i)).collect(),
                    (0..n).map(|i| -g[i] * av(i) / (bv(i) * bv(i))).collect(),
                ),
            };
            vec![
                Some(reduce_bcast(&ga, *bcast == Bcast::LhsScalar)),
                Some(match *bcast {
                    Bcast::RhsRow(c) => reduce_rows(&gb, c),
                    _ => reduce_bcast(&gb, *bcast == Bcast::RhsScalar),
                }),
            ]
        }
        Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
        Op::MulScalar(s) => vec![Some(g.iter().map(|&x| x * *s).collect())],
        Op::Unary(kind) => {
            let x = &inputs[0].value;
            let two = T::lit(2.0);
            let gi = g
                .iter()
                .enumerate()
                .map(|(i, &gv)| match kind {
                    Unary::Neg => -gv,
                    Unary::Exp => gv * y[i],
                    Unary::Log => gv / x[i],
                    Unary::Relu => {
                        if x[i] > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    }
                    Unary::Tanh => gv * (T::one() - y[i] * y[i]),
                    Unary::Square => gv * two * x[i],
                    Unary::Sqrt => {
                        if y[i] > T::zero() {
                            gv / (two * y[i])
                        } else {
                            T::zero()
                        }
                    }
                })
                .collect();
            vec![Some(gi)]
        }
        Op::Map(df) => {
            let x = &inputs[0].value;
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&gv, &xv)| gv * df(xv))
                    .collect(),
            )]
        }
        Op::MatMul { m, k, n } => {
            let (a, b) = (&inputs[0].value, &inputs[1].value);
            let ga = inputs[0]
                .requires_grad
                .then(|| matmul_raw(g, &transpose_raw(b, *k, *n), *m, *n, *k));
            let gb = inputs[1]
                .requires_grad
                .then(|| matmul_raw(&transpose_raw(a, *m, *k), g, *k, *m, *n));
            vec![ga, gb]
        }
        Op::Transpose { rows, cols } => vec![Some(transpose_raw(g, *cols, *rows))],
        Op::Sum { outer, len, inner } | Op::Mean { outer, len, inner } => {
            let scale = if matches!(node.op, Op::Mean { .. }) {
                T::one() / T::from_count(*len)
            } else {
                T::one()
            };
            let mut gi = vec![T::zero(); outer * len * inner];
            for o in 0..*outer {
                for l in 0..*len {
                    for i in 0..*inner {
                        gi[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            vec![Some(gi)]
        }
        Op::NormalizeRows { cols, norms } => {
            let mut gi = Vec::with_capacity(g.len());
            for (r, norm) in norms.iter().enumerate() {
                let yr = &y[r * cols..(r + 1) * cols];
                let gr = &g[r * cols..(r + 1) * cols];
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                gi.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * dot) / *norm));
            }
            vec![Some(gi)]
        }
        Op::SelectRows { index, cols } => {
            let mut gi = vec![T::zero(); inputs[0].value.len()];
            for (r, &src) in index.iter().enumerate() {
                for c in 0..*cols {
                    gi[src * cols + c] += g[r * cols + c];
                }
            }
            vec![Some(gi)]
        }
        Op::SegmentSum { segment, cols } => {
            let mut gi = Vec::with_capacity(segment.len() * cols);
            for &s in segment {
                gi.extend_from_slice(&g[s * cols..(s + 1) * cols]);
            }
            vec![Some(gi)]
        }
        Op::Concat { sizes } => {
            let mut offset = 0;
            sizes
                .iter()
                .map(|&n| {
                    let part = g[offset..offset + n].to_vec();
                    offset += n;
                    Some(part)
                })
                .collect()
        }
    }
}
