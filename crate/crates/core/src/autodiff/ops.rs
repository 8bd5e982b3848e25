//! Primitive operations and their forward kernels.

use super::{AutodiffError, Tensor, Var};

/// A primitive recorded on the tape together with its input handles.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    /// Adds a constant to every element.
    Shift(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    /// Sum of all elements into a scalar.
    Sum(Var),
    Mean(Var),
    /// Broadcasts a scalar to the given shape.
    Expand(Var, Vec<usize>),
    /// `[m, n] -> [n]`, summing over rows.
    SumRows(Var),
    /// `[m, n] -> [m]`, summing over columns.
    SumCols(Var),
    /// `[n] -> [m, n]`.
    BroadcastRows(Var, usize),
    /// `[m] -> [m, n]`.
    BroadcastCols(Var, usize),
    /// `[m, n] + [n]` applied to every row.
    BroadcastAddRow(Var, Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    /// Elementwise `max(0, x)`; same kernel as relu, kept separate for hinge terms.
    Max0(Var),
    Square(Var),
    Sqrt(Var),
    /// `1/x`, with the value (and derivative) defined as 0 where `x == 0`.
    RecipOrZero(Var),
    /// Euclidean norm of every row: `[m, n] -> [m]`.
    L2NormRows(Var),
    /// Column-wise concatenation of two matrices with equal row counts.
    Concat(Var, Var),
    /// Columns `start..end` of a matrix.
    SliceCols(Var, usize, usize),
    Reshape(Var, Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Expand(..) => "expand",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::BroadcastAddRow(..) => "broadcast_add_row",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Max0(..) => "max0",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::RecipOrZero(..) => "recip_or_zero",
            Op::L2NormRows(..) => "l2_norm_rows",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
        }
    }

    /// Input handles in positional order.
    pub fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::BroadcastAddRow(a, b)
            | Op::Concat(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Expand(a, _)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a, _)
            | Op::BroadcastCols(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Max0(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::RecipOrZero(a)
            | Op::L2NormRows(a)
            | Op::SliceCols(a, _, _)
            | Op::Reshape(a, _) => vec![a],
        }
    }
}

/// Overflow-free logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow or cancellation for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// `log(1 + e^x)`, i.e. `-log(sigmoid(-x))`.
pub fn softplus(x: f64) -> f64 {
    -log_sigmoid(-x)
}

fn mismatch(op: &Op, lhs: &Tensor, rhs: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn require_matrix(op: &Op, t: &Tensor) -> Result<(), AutodiffError> {
    if t.rank() == 2 {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op: op.name(),
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })
    }
}

fn same_shape<'a>(op: &Op, a: &'a Tensor, b: &'a Tensor) -> Result<(), AutodiffError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

/// Computes the forward value of `op`; `value` resolves input handles.
pub(crate) fn eval<'a>(
    op: &Op,
    value: impl Fn(Var) -> &'a Tensor,
) -> Result<Tensor, AutodiffError> {
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("leaves carry their own value"),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
            let (a, b) = (value(*a), value(*b));
            same_shape(op, a, b)?;
            match op {
                Op::Add(..) => a.zip_map(b, |x, y| x + y),
                Op::Sub(..) => a.zip_map(b, |x, y| x - y),
                Op::Mul(..) => a.zip_map(b, |x, y| x * y),
                _ => {
                    if b.data().iter().any(|&y| y == 0.0) {
                        return Err(AutodiffError::Domain { op: op.name() });
                    }
                    a.zip_map(b, |x, y| x / y)
                }
            }
        }
        Op::Neg(a) => value(*a).map(|x| -x),
        Op::Scale(a, c) => value(*a).map(|x| x * c),
        Op::Shift(a, c) => value(*a).map(|x| x + c),
        Op::MatMul(a, b) => {
            let (a, b) = (value(*a), value(*b));
            require_matrix(op, a)?;
            require_matrix(op, b)?;
            if a.cols() != b.rows() {
                return Err(mismatch(op, a, b));
            }
            a.matmul(b)
        }
        Op::Transpose(a) => {
            let a = value(*a);
            require_matrix(op, a)?;
            a.transposed()
        }
        Op::Sum(a) => Tensor::scalar(value(*a).sum()),
        Op::Mean(a) => {
            let a = value(*a);
            if a.is_empty() {
                return Err(AutodiffError::Domain { op: op.name() });
            }
            Tensor::scalar(a.mean())
        }
        Op::Expand(a, shape) => {
            let a = value(*a);
            if a.len() != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            Tensor::new(shape.clone(), vec![a.item(); shape.iter().product()])?
        }
        Op::SumRows(a) => {
            let a = value(*a);
            require_matrix(op, a)?;
            let (m, n) = (a.rows(), a.cols());
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (o, v) in out.iter_mut().zip(a.row(i)) {
                    *o += v;
                }
            }
            Tensor::vector(out)
        }
        Op::SumCols(a) => {
            let a = value(*a);
            require_matrix(op, a)?;
            Tensor::vector((0..a.rows()).map(|i| a.row(i).iter().sum()).collect())
        }
        Op::BroadcastRows(a, m) => {
            let a = value(*a);
            if a.rank() != 1 {
                return Err(mismatch(op, a, a));
            }
            let mut data = Vec::with_capacity(m * a.len());
            for _ in 0..*m {
                data.extend_from_slice(a.data());
            }
            Tensor::matrix(*m, a.len(), data)?
        }
        Op::BroadcastCols(a, n) => {
            let a = value(*a);
            if a.rank() != 1 {
                return Err(mismatch(op, a, a));
            }
            let mut data = Vec::with_capacity(n * a.len());
            for &v in a.data() {
                data.extend(std::iter::repeat_n(v, *n));
            }
            Tensor::matrix(a.len(), *n, data)?
        }
        Op::BroadcastAddRow(a, r) => {
            let (a, r) = (value(*a), value(*r));
            require_matrix(op, a)?;
            if r.rank() != 1 || r.len() != a.cols() {
                return Err(mismatch(op, a, r));
            }
            let n = a.cols();
            let mut out = a.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += r.data()[i % n];
            }
            out
        }
        Op::Exp(a) => value(*a).map(f64::exp),
        Op::Log(a) => {
            let a = value(*a);
            if a.data().iter().any(|&x| x <= 0.0) {
                return Err(AutodiffError::Domain { op: op.name() });
            }
            a.map(f64::ln)
        }
        Op::Sigmoid(a) => value(*a).map(sigmoid),
        Op::LogSigmoid(a) => value(*a).map(log_sigmoid),
        Op::Tanh(a) => value(*a).map(f64::tanh),
        Op::Relu(a) | Op::Max0(a) => value(*a).map(|x| x.max(0.0)),
        Op::LeakyRelu(a, alpha) => value(*a).map(|x| if x > 0.0 { x } else { alpha * x }),
        Op::Square(a) => value(*a).map(|x| x * x),
        Op::Sqrt(a) => {
            let a = value(*a);
            if a.data().iter().any(|&x| x < 0.0) {
                return Err(AutodiffError::Domain { op: op.name() });
            }
            a.map(f64::sqrt)
        }
        Op::RecipOrZero(a) => value(*a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x }),
        Op::L2NormRows(a) => {
            let a = value(*a);
            require_matrix(op, a)?;
            Tensor::vector(
                (0..a.rows())
                    .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect(),
            )
        }
        Op::Concat(a, b) => {
            let (a, b) = (value(*a), value(*b));
            require_matrix(op, a)?;
            require_matrix(op, b)?;
            if a.rows() != b.rows() {
                return Err(mismatch(op, a, b));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..a.rows() {
                data.extend_from_slice(a.row(i));
                data.extend_from_slice(b.row(i));
            }
            Tensor::matrix(a.rows(), a.cols() + b.cols(), data)?
        }
        Op::SliceCols(a, start, end) => {
            let a = value(*a);
            require_matrix(op, a)?;
            if start > end || *end > a.cols() {
                return Err(AutodiffError::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: vec![*start, *end],
                });
            }
            let mut data = Vec::with_capacity(a.rows() * (end - start));
            for i in 0..a.rows() {
                data.extend_from_slice(&a.row(i)[*start..*end]);
            }
            Tensor::matrix(a.rows(), end - start, data)?
        }
        Op::Reshape(a, shape) => {
            let a = value(*a);
            a.reshaped(shape).map_err(|_| AutodiffError::ShapeMismatch {
                op: op.name(),
                lhs: a.shape().to_vec(),
                rhs: shape.clone(),
            })?
        }
    };
    if !out.is_finite() {
        return Err(AutodiffError::NonFinite { op: op.name() });
    }
    Ok(out)
}
