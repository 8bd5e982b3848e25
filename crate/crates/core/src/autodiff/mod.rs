//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends a node to an explicit [`Tape`]. Backward rules are
//! themselves expressed as recorded primitives, so a gradient obtained from
//! [`Tape::grad`] is an ordinary differentiable value. That is what makes
//! penalties on input gradients (double backprop) work: differentiate the
//! critic with respect to its input, build a scalar from that gradient, and
//! differentiate again with respect to the weights.
//!
//! Tapes are cheap and meant to be rebuilt for every training step.

mod ops;
mod tensor;

use thiserror::Error;

pub use ops::{log_sigmoid, sigmoid, softplus, Op};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rank-{0} tensors are not supported")]
    Rank(usize),
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: input outside the domain of the operation")]
    Domain { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("differentiated output must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable {0} is not recorded on this tape")]
    UnknownVar(usize),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of primitive operations in topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by the variables they were requested for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMap {
    entries: Vec<(Var, Tensor)>,
}

impl GradMap {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.entries.iter().find(|(v, _)| *v == var).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.entries.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradient tensors in the order the variables were requested.
    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, t)| t).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op(&self, var: Var) -> &Op {
        &self.nodes[var.0].op
    }

    fn check(&self, var: Var) -> Result<(), AutodiffError> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownVar(var.0))
        }
    }

    /// Evaluates `op` on recorded inputs and appends the result.
    pub fn record(&mut self, op: Op) -> Result<Var, AutodiffError> {
        if matches!(op, Op::Leaf | Op::Constant) {
            return Err(AutodiffError::Domain { op: op.name() });
        }
        for input in op.inputs() {
            self.check(input)?;
        }
        let value = ops::eval(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push(op, value))
    }

    /// Recomputes every node from the stored leaves and constants.
    pub fn replay(&self) -> Result<Vec<Tensor>, AutodiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                ref op => ops::eval(op, |v| &values[v.0])?,
            };
            values.push(value);
        }
        Ok(values)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.record(Op::Scale(a, c))
    }
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.record(Op::Shift(a, c))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Transpose(a))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Mean(a))
    }
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.record(Op::Expand(a, shape.to_vec()))
    }
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::SumRows(a))
    }
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::SumCols(a))
    }
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, AutodiffError> {
        self.record(Op::BroadcastRows(a, rows))
    }
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var, AutodiffError> {
        self.record(Op::BroadcastCols(a, cols))
    }
    pub fn broadcast_add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.record(Op::BroadcastAddRow(a, row))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Log(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sigmoid(a))
    }
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::LogSigmoid(a))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Relu(a))
    }
    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var, AutodiffError> {
        self.record(Op::LeakyRelu(a, alpha))
    }
    pub fn max0(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Max0(a))
    }
    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Square(a))
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Sqrt(a))
    }
    pub fn recip_or_zero(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::RecipOrZero(a))
    }
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.record(Op::L2NormRows(a))
    }
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.record(Op::Concat(a, b))
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        self.record(Op::SliceCols(a, start, end))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.record(Op::Reshape(a, shape.to_vec()))
    }

    /// Gradients of a scalar `output` with respect to `wrt`, recorded as
    /// differentiable nodes on this tape.
    ///
    /// Variables that `output` does not depend on get a zero gradient.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        if !self.shape(output).is_empty() {
            return Err(AutodiffError::NotScalar(self.shape(output).to_vec()));
        }

        let end = output.0 + 1;
        // A node needs a gradient only if some requested variable lies in its subgraph.
        let mut needed = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                needed[w.0] = true;
            }
        }
        for i in 0..end {
            if !needed[i] && self.nodes[i].op.inputs().iter().any(|v| needed[v.0]) {
                needed[i] = true;
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if needed[output.0] {
            grads[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if wrt.contains(&Var(i)) && self.nodes[i].op.inputs().is_empty() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.backward_rule(&op, Var(i), g, &needed)? {
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Numeric gradients of a scalar `output` with respect to `leaves`.
    ///
    /// Nodes created while differentiating are discarded afterwards, so the
    /// tape is left exactly as it was.
    pub fn backward(&mut self, output: Var, leaves: &[Var]) -> Result<GradMap, AutodiffError> {
        let mark = self.nodes.len();
        let result = self.grad(output, leaves).map(|vars| GradMap {
            entries: leaves
                .iter()
                .zip(vars)
                .map(|(&leaf, g)| (leaf, self.value(g).clone()))
                .collect(),
        });
        self.nodes.truncate(mark);
        result
    }

    fn backward_rule(
        &mut self,
        op: &Op,
        out: Var,
        g: Var,
        needed: &[bool],
    ) -> Result<Vec<(Var, Var)>, AutodiffError> {
        let wants = |v: Var| needed[v.0];
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if wants(a) {
                    res.push((a, g));
                }
                if wants(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    res.push((a, g));
                }
                if wants(b) {
                    res.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if wants(b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Div(a, b) => {
                if wants(a) {
                    res.push((a, self.div(g, b)?));
                }
                if wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = self.div(out, b)?;
                    let t = self.mul(g, q)?;
                    res.push((b, self.neg(t)?));
                }
            }
            Op::Neg(a) => res.push((a, self.neg(g)?)),
            Op::Scale(a, c) => res.push((a, self.scale(g, c)?)),
            Op::Shift(a, _) => res.push((a, g)),
            Op::MatMul(a, b) => {
                if wants(a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if wants(b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => res.push((a, self.transpose(g)?)),
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.expand(g, &shape)?));
            }
            Op::Mean(a) => {
                let shape = self.shape(a).to_vec();
                let n = self.value(a).len() as f64;
                let e = self.expand(g, &shape)?;
                res.push((a, self.scale(e, 1.0 / n)?));
            }
            Op::Expand(a, _) => {
                let s = self.sum(g)?;
                let shape = self.shape(a).to_vec();
                res.push((a, self.reshape(s, &shape)?));
            }
            Op::SumRows(a) => {
                let rows = self.value(a).rows();
                res.push((a, self.broadcast_rows(g, rows)?));
            }
            Op::SumCols(a) => {
                let cols = self.value(a).cols();
                res.push((a, self.broadcast_cols(g, cols)?));
            }
            Op::BroadcastRows(a, _) => res.push((a, self.sum_rows(g)?)),
            Op::BroadcastCols(a, _) => res.push((a, self.sum_cols(g)?)),
            Op::BroadcastAddRow(a, r) => {
                if wants(a) {
                    res.push((a, g));
                }
                if wants(r) {
                    res.push((r, self.sum_rows(g)?));
                }
            }
            Op::Exp(a) => res.push((a, self.mul(g, out)?)),
            Op::Log(a) => res.push((a, self.div(g, a)?)),
            Op::Sigmoid(a) => {
                // s * (1 - s)
                let one_minus = self.neg(out)?;
                let one_minus = self.shift(one_minus, 1.0)?;
                let ds = self.mul(out, one_minus)?;
                res.push((a, self.mul(g, ds)?));
            }
            Op::LogSigmoid(a) => {
                // d/dx log sigmoid(x) = sigmoid(-x)
                let na = self.neg(a)?;
                let s = self.sigmoid(na)?;
                res.push((a, self.mul(g, s)?));
            }
            Op::Tanh(a) => {
                let sq = self.square(out)?;
                let d = self.neg(sq)?;
                let d = self.shift(d, 1.0)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Relu(a) | Op::Max0(a) => {
                // The mask is a constant, so the second derivative is 0 everywhere.
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                res.push((a, self.mul(g, mask)?));
            }
            Op::LeakyRelu(a, alpha) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { alpha });
                let mask = self.constant(mask);
                res.push((a, self.mul(g, mask)?));
            }
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0)?;
                res.push((a, self.mul(g, two_a)?));
            }
            Op::Sqrt(a) => {
                let q = self.div(g, out)?;
                res.push((a, self.scale(q, 0.5)?));
            }
            Op::RecipOrZero(a) => {
                let sq = self.square(out)?;
                let t = self.mul(g, sq)?;
                res.push((a, self.neg(t)?));
            }
            Op::L2NormRows(a) => {
                // x / ||x|| per row, with the derivative at a zero row defined as 0.
                let cols = self.value(a).cols();
                let inv = self.recip_or_zero(out)?;
                let w = self.mul(g, inv)?;
                let w = self.broadcast_cols(w, cols)?;
                res.push((a, self.mul(a, w)?));
            }
            Op::Concat(a, b) => {
                let p = self.value(a).cols();
                let q = self.value(b).cols();
                if wants(a) {
                    res.push((a, self.slice_cols(g, 0, p)?));
                }
                if wants(b) {
                    res.push((b, self.slice_cols(g, p, p + q)?));
                }
            }
            Op::SliceCols(a, start, end) => {
                let rows = self.value(a).rows();
                let cols = self.value(a).cols();
                let mut acc = g;
                if start > 0 {
                    let left = self.constant(Tensor::zeros(&[rows, start]));
                    acc = self.concat(left, acc)?;
                }
                if end < cols {
                    let right = self.constant(Tensor::zeros(&[rows, cols - end]));
                    acc = self.concat(acc, right)?;
                }
                res.push((a, acc));
            }
            Op::Reshape(a, _) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.reshape(g, &shape)?));
            }
        }
        res.retain(|(v, _)| needed[v.0]);
        Ok(res)
    }
}

/// Differentiates a function of an input gradient with respect to weights.
///
/// `critic_output` must be a scalar built from `input` (typically the sum of
/// per-sample critic values). Its gradient with respect to `input` is recorded
/// on the tape and handed to `penalty`, which turns it into a scalar. The
/// scalar's value and its gradients with respect to `weights` are returned.
pub fn grad_of_grad<F>(
    tape: &mut Tape,
    critic_output: Var,
    input: Var,
    weights: &[Var],
    penalty: F,
) -> Result<(f64, GradMap), AutodiffError>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let input_grad = tape.grad(critic_output, &[input])?[0];
    let p = penalty(tape, input_grad)?;
    let value = tape.value(p).item();
    let grads = tape.backward(p, weights)?;
    Ok((value, grads))
}
