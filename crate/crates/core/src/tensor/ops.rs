use std::str::FromStr;

use super::{Node, Tensor, TensorError};
use crate::scalar::{exact_sum, Scalar};

/// Axis of a rank-2 tensor. `Rows` indexes rows (axis 0), `Cols` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// A tape operation together with its static parameters.
#[derive(Debug, Clone)]
pub enum Op<S> {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(S),
    Exp,
    Ln,
    /// ELU with unit saturation.
    Elu,
    /// Reduction over an axis of a rank-2 tensor, keeping the reduced axis
    /// with extent 1. Uses correctly rounded summation.
    Sum(Axis),
    Mean(Axis),
    /// Sum of every element into a rank-0 scalar.
    SumAll,
    Concat(Axis),
    Slice {
        axis: Axis,
        start: usize,
        end: usize,
    },
    SelectRows(Vec<usize>),
    /// Log-softmax over the last axis of a rank-2 tensor.
    LogSoftmax,
    /// Repeat a `[k]` or `1 × k` vector over `n` rows.
    BroadcastRows(usize),
    /// `x ⊙ mask` where the mask (second input) is an untracked constant.
    Dropout,
    Reshape(Vec<usize>),
    Clamp {
        lo: S,
        hi: S,
    },
}

/// Parameter-free tag of every differentiable op kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    Exp,
    Ln,
    Elu,
    Sum,
    Mean,
    SumAll,
    Concat,
    Slice,
    SelectRows,
    LogSoftmax,
    BroadcastRows,
    Dropout,
    Reshape,
    Clamp,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Exp,
        OpKind::Ln,
        OpKind::Elu,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumAll,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::SelectRows,
        OpKind::LogSoftmax,
        OpKind::BroadcastRows,
        OpKind::Dropout,
        OpKind::Reshape,
        OpKind::Clamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Elu => "elu",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumAll => "sum_all",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::SelectRows => "select_rows",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::BroadcastRows => "broadcast_rows",
            OpKind::Dropout => "dropout",
            OpKind::Reshape => "reshape",
            OpKind::Clamp => "clamp",
        }
    }
}

impl FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::UnknownOp(s.to_string()))
    }
}

impl<S> Op<S> {
    pub fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul => OpKind::MatMul,
            Op::Transpose => OpKind::Transpose,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::Exp => OpKind::Exp,
            Op::Ln => OpKind::Ln,
            Op::Elu => OpKind::Elu,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::SumAll => OpKind::SumAll,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::SelectRows(_) => OpKind::SelectRows,
            Op::LogSoftmax => OpKind::LogSoftmax,
            Op::BroadcastRows(_) => OpKind::BroadcastRows,
            Op::Dropout => OpKind::Dropout,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Clamp { .. } => OpKind::Clamp,
        })
    }

    fn name(&self) -> &'static str {
        self.kind().map(OpKind::name).unwrap_or("leaf")
    }
}

fn arity<S>(op: &Op<S>, inputs: &[&Tensor<S>], n: usize) -> Result<(), TensorError> {
    if inputs.len() != n {
        return Err(TensorError::InvalidArgument {
            op: op.name(),
            msg: format!("expected {n} inputs, got {}", inputs.len()),
        });
    }
    Ok(())
}

fn rank2<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::InvalidArgument {
            op,
            msg: format!("expected a rank-2 tensor, got shape {s:?}"),
        }),
    }
}

fn same_shape<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<S: Scalar>(a: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn reduce<S: Scalar>(a: &[S], r: usize, c: usize, axis: Axis) -> Vec<S> {
    match axis {
        Axis::Rows => (0..c)
            .map(|j| exact_sum((0..r).map(|i| a[i * c + j])))
            .collect(),
        Axis::Cols => (0..r)
            .map(|i| exact_sum(a[i * c..(i + 1) * c].iter().copied()))
            .collect(),
    }
}

fn elu<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub(super) fn forward<S: Scalar>(
    op: &Op<S>,
    inputs: &[&Tensor<S>],
) -> Result<(Vec<usize>, Vec<S>), TensorError> {
    let name = op.name();
    match op {
        Op::Leaf => Err(TensorError::InvalidArgument {
            op: name,
            msg: "leaves are created with Tape::leaf".into(),
        }),
        Op::MatMul => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let (n, k) = rank2(name, a)?;
            let (k2, m) = rank2(name, b)?;
            if k != k2 {
                return Err(TensorError::ShapeMismatch {
                    op: name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            Ok((vec![n, m], matmul_raw(a.data(), b.data(), n, k, m)))
        }
        Op::Transpose => {
            arity(op, inputs, 1)?;
            let (r, c) = rank2(name, inputs[0])?;
            Ok((vec![c, r], transpose_raw(inputs[0].data(), r, c)))
        }
        Op::Add | Op::Sub | Op::Mul => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(name, a, b)?;
            let f: fn(S, S) -> S = match op {
                Op::Add => |x, y| x + y,
                Op::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((a.shape().to_vec(), data))
        }
        Op::Dropout => {
            arity(op, inputs, 2)?;
            let (a, mask) = (inputs[0], inputs[1]);
            same_shape(name, a, mask)?;
            if mask.is_tracked() {
                return Err(TensorError::InvalidArgument {
                    op: name,
                    msg: "dropout mask must be an untracked constant".into(),
                });
            }
            let data = a.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
            Ok((a.shape().to_vec(), data))
        }
        Op::Scale(s) => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].shape().to_vec(), inputs[0].data().iter().map(|&x| x * *s).collect()))
        }
        Op::Exp | Op::Ln | Op::Elu => {
            arity(op, inputs, 1)?;
            let f: fn(S) -> S = match op {
                Op::Exp => S::exp,
                Op::Ln => S::ln,
                _ => elu,
            };
            Ok((inputs[0].shape().to_vec(), inputs[0].data().iter().map(|&x| f(x)).collect()))
        }
        Op::Clamp { lo, hi } => {
            arity(op, inputs, 1)?;
            if !(lo <= hi) {
                return Err(TensorError::InvalidArgument {
                    op: name,
                    msg: format!("empty clamp range [{lo}, {hi}]"),
                });
            }
            let data = inputs[0].data().iter().map(|&x| x.max(*lo).min(*hi)).collect();
            Ok((inputs[0].shape().to_vec(), data))
        }
        Op::Sum(axis) | Op::Mean(axis) => {
            arity(op, inputs, 1)?;
            let (r, c) = rank2(name, inputs[0])?;
            let mut data = reduce(inputs[0].data(), r, c, *axis);
            let (shape, n) = match axis {
                Axis::Rows => (vec![1, c], r),
                Axis::Cols => (vec![r, 1], c),
            };
            if matches!(op, Op::Mean(_)) {
                if n == 0 {
                    return Err(TensorError::InvalidArgument {
                        op: name,
                        msg: "mean over an empty axis".into(),
                    });
                }
                let n = S::of(n as f64);
                data.iter_mut().for_each(|v| *v = *v / n);
            }
            Ok((shape, data))
        }
        Op::SumAll => {
            arity(op, inputs, 1)?;
            Ok((vec![], vec![exact_sum(inputs[0].data().iter().copied())]))
        }
        Op::Concat(axis) => {
            if inputs.is_empty() {
                return Err(TensorError::InvalidArgument {
                    op: name,
                    msg: "nothing to concatenate".into(),
                });
            }
            let (r0, c0) = rank2(name, inputs[0])?;
            match axis {
                Axis::Rows => {
                    let mut rows = 0;
                    let mut data = Vec::new();
                    for t in inputs {
                        let (r, c) = rank2(name, t)?;
                        if c != c0 {
                            return Err(TensorError::ShapeMismatch {
                                op: name,
                                lhs: inputs[0].shape().to_vec(),
                                rhs: t.shape().to_vec(),
                            });
                        }
                        rows += r;
                        data.extend_from_slice(t.data());
                    }
                    Ok((vec![rows, c0], data))
                }
                Axis::Cols => {
                    let mut widths = Vec::with_capacity(inputs.len());
                    for t in inputs {
                        let (r, c) = rank2(name, t)?;
                        if r != r0 {
                            return Err(TensorError::ShapeMismatch {
                                op: name,
                                lhs: inputs[0].shape().to_vec(),
                                rhs: t.shape().to_vec(),
                            });
                        }
                        widths.push(c);
                    }
                    let cols: usize = widths.iter().sum();
                    let mut data = Vec::with_capacity(r0 * cols);
                    for i in 0..r0 {
                        for (t, &w) in inputs.iter().zip(&widths) {
                            data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
                        }
                    }
                    Ok((vec![r0, cols], data))
                }
            }
        }
        Op::Slice { axis, start, end } => {
            arity(op, inputs, 1)?;
            let (r, c) = rank2(name, inputs[0])?;
            let extent = if *axis == Axis::Rows { r } else { c };
            if start > end || *end > extent {
                return Err(TensorError::InvalidArgument {
                    op: name,
                    msg: format!("range {start}..{end} out of bounds for extent {extent}"),
                });
            }
            let a = inputs[0].data();
            match axis {
                Axis::Rows => Ok((vec![end - start, c], a[start * c..end * c].to_vec())),
                Axis::Cols => {
                    let w = end - start;
                    let mut data = Vec::with_capacity(r * w);
                    for i in 0..r {
                        data.extend_from_slice(&a[i * c + start..i * c + end]);
                    }
                    Ok((vec![r, w], data))
                }
            }
        }
        Op::SelectRows(rows) => {
            arity(op, inputs, 1)?;
            let (r, c) = rank2(name, inputs[0])?;
            let a = inputs[0].data();
            let mut data = Vec::with_capacity(rows.len() * c);
            for &i in rows {
                if i >= r {
                    return Err(TensorError::InvalidArgument {
                        op: name,
                        msg: format!("row {i} out of bounds for {r} rows"),
                    });
                }
                data.extend_from_slice(&a[i * c..(i + 1) * c]);
            }
            Ok((vec![rows.len(), c], data))
        }
        Op::LogSoftmax => {
            arity(op, inputs, 1)?;
            let (r, c) = rank2(name, inputs[0])?;
            let a = inputs[0].data();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = &a[i * c..(i + 1) * c];
                let mx = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
                let lse = mx + exact_sum(row.iter().map(|&v| (v - mx).exp())).ln();
                data.extend(row.iter().map(|&v| v - lse));
            }
            Ok((vec![r, c], data))
        }
        Op::BroadcastRows(n) => {
            arity(op, inputs, 1)?;
            let k = match inputs[0].shape() {
                [k] | [1, k] => *k,
                s => {
                    return Err(TensorError::InvalidArgument {
                        op: name,
                        msg: format!("expected a vector, got shape {s:?}"),
                    })
                }
            };
            let mut data = Vec::with_capacity(n * k);
            for _ in 0..*n {
                data.extend_from_slice(inputs[0].data());
            }
            Ok((vec![*n, k], data))
        }
        Op::Reshape(shape) => {
            arity(op, inputs, 1)?;
            if shape.iter().product::<usize>() != inputs[0].len() {
                return Err(TensorError::ShapeMismatch {
                    op: name,
                    lhs: inputs[0].shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            Ok((shape.clone(), inputs[0].data().to_vec()))
        }
    }
}

/// Vector-Jacobian products for each input of `node` given the output
/// gradient `g`. Entries for untracked inputs are `None`.
pub(super) fn backward<S: Scalar>(node: &Node<S>, g: &[S]) -> Result<Vec<Option<Vec<S>>>, TensorError> {
    let want = |i: usize| node.parents[i].is_some();
    let x = |i: usize| node.inputs[i].data();
    let out = node.output.data();
    let unary = |f: &dyn Fn(usize) -> S| -> Vec<Option<Vec<S>>> {
        vec![Some((0..g.len()).map(f).collect())]
    };
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::MatMul => {
            let (n, k) = (node.inputs[0].rows(), node.inputs[0].cols());
            let m = node.inputs[1].cols();
            let ga = want(0).then(|| matmul_raw(g, &transpose_raw(x(1), k, m), n, m, k));
            let gb = want(1).then(|| matmul_raw(&transpose_raw(x(0), n, k), g, k, n, m));
            vec![ga, gb]
        }
        Op::Transpose => {
            let (r, c) = (node.inputs[0].rows(), node.inputs[0].cols());
            vec![Some(transpose_raw(g, c, r))]
        }
        Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
        Op::Sub => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| g.iter().map(|&v| -v).collect()),
        ],
        Op::Mul => vec![
            want(0).then(|| g.iter().zip(x(1)).map(|(&a, &b)| a * b).collect()),
            want(1).then(|| g.iter().zip(x(0)).map(|(&a, &b)| a * b).collect()),
        ],
        Op::Dropout => vec![
            Some(g.iter().zip(x(1)).map(|(&a, &b)| a * b).collect()),
            None,
        ],
        Op::Scale(s) => unary(&|i| g[i] * *s),
        Op::Exp => unary(&|i| g[i] * out[i]),
        Op::Ln => unary(&|i| g[i] / x(0)[i]),
        Op::Elu => unary(&|i| {
            let v = x(0)[i];
            if v > S::zero() {
                g[i]
            } else {
                g[i] * v.exp()
            }
        }),
        Op::Clamp { lo, hi } => unary(&|i| {
            let v = x(0)[i];
            if v >= *lo && v <= *hi {
                g[i]
            } else {
                S::zero()
            }
        }),
        Op::Sum(axis) | Op::Mean(axis) => {
            let (r, c) = (node.inputs[0].rows(), node.inputs[0].cols());
            let scale = match (&node.op, axis) {
                (Op::Mean(_), Axis::Rows) => S::one() / S::of(r as f64),
                (Op::Mean(_), Axis::Cols) => S::one() / S::of(c as f64),
                _ => S::one(),
            };
            let mut gx = vec![S::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    let gv = match axis {
                        Axis::Rows => g[j],
                        Axis::Cols => g[i],
                    };
                    gx[i * c + j] = gv * scale;
                }
            }
            vec![Some(gx)]
        }
        Op::SumAll => vec![Some(vec![g[0]; node.inputs[0].len()])],
        Op::Concat(axis) => {
            let mut res = Vec::with_capacity(node.inputs.len());
            match axis {
                Axis::Rows => {
                    let mut off = 0;
                    for (i, t) in node.inputs.iter().enumerate() {
                        let n = t.len();
                        res.push(want(i).then(|| g[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Axis::Cols => {
                    let total = node.output.cols();
                    let rows = node.output.rows();
                    let mut col_off = 0;
                    for (i, t) in node.inputs.iter().enumerate() {
                        let w = t.cols();
                        res.push(want(i).then(|| {
                            let mut gi = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                gi.extend_from_slice(&g[r * total + col_off..r * total + col_off + w]);
                            }
                            gi
                        }));
                        col_off += w;
                    }
                }
            }
            res
        }
        Op::Slice { axis, start, end } => {
            let (r, c) = (node.inputs[0].rows(), node.inputs[0].cols());
            let mut gx = vec![S::zero(); r * c];
            match axis {
                Axis::Rows => gx[start * c..end * c].copy_from_slice(g),
                Axis::Cols => {
                    let w = end - start;
                    for i in 0..r {
                        gx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                }
            }
            vec![Some(gx)]
        }
        Op::SelectRows(rows) => {
            let (r, c) = (node.inputs[0].rows(), node.inputs[0].cols());
            let mut gx = vec![S::zero(); r * c];
            for (k, &i) in rows.iter().enumerate() {
                for j in 0..c {
                    gx[i * c + j] = gx[i * c + j] + g[k * c + j];
                }
            }
            vec![Some(gx)]
        }
        Op::LogSoftmax => {
            let (r, c) = (node.output.rows(), node.output.cols());
            let mut gx = vec![S::zero(); r * c];
            for i in 0..r {
                let gs = exact_sum(g[i * c..(i + 1) * c].iter().copied());
                for j in 0..c {
                    gx[i * c + j] = g[i * c + j] - out[i * c + j].exp() * gs;
                }
            }
            vec![Some(gx)]
        }
        Op::BroadcastRows(n) => {
            let k = node.inputs[0].len();
            let gx = (0..k)
                .map(|j| exact_sum((0..*n).map(|i| g[i * k + j])))
                .collect();
            vec![Some(gx)]
        }
        Op::Reshape(_) => vec![Some(g.to_vec())],
    })
}
