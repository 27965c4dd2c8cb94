//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! A [`Tape`] records every op in execution order, so walking it backwards
//! is already a valid topological order. Leaves come in two flavours:
//! constants, which never receive gradients, and parameters, which carry
//! the index of a [`Parameter`] that `backward` accumulates into.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_into, Tensor};

/// Trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value: value.with_requires_grad(true),
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    /// Block-diagonal application of a constant square operator to the
    /// node-row blocks of the second operand.
    Propagate(Var, Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. It takes part in differentiation iff the tensor's
    /// `requires_grad` flag is set; its gradient is then readable through
    /// [`Tape::gradients`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let rg = value.requires_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Records a parameter leaf; `index` addresses the slice later handed
    /// to [`Tape::backward`].
    pub fn param(&mut self, p: &Parameter, index: usize) -> Var {
        self.push(p.value.clone(), Op::Param(index), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        xv.expect_matrix("add_bias")?;
        let n = xv.shape()[1];
        if bv.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone().with_requires_grad(false);
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).scale(c);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through so the layer check downstream can see it.
        let value = self.value(x).map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Column-wise concatenation of `a[m×p]` and `b[m×q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_matrix("concat_cols")?;
        bv.expect_matrix("concat_cols")?;
        if av.rows() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_raw(vec![m, p + q], out), Op::ConcatCols(a, b), rg))
    }

    /// Applies the square operator `s[n×n]` to each `n`-row block of
    /// `x[(B·n)×c]`, i.e. `S·X_b` for every sample `b` in the batch.
    /// Gradients flow to `x` only.
    pub fn propagate(&mut self, s: Var, x: Var) -> Result<Var> {
        let (sv, xv) = (self.value(s), self.value(x));
        sv.expect_matrix("propagate")?;
        xv.expect_matrix("propagate")?;
        let n = sv.rows();
        if sv.cols() != n || xv.rows() % n != 0 {
            return Err(Error::ShapeMismatch {
                op: "propagate",
                left: sv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        let out = block_apply(sv, xv, false);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Propagate(s, x), rg))
    }

    /// Mean of squared elementwise differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.expect_same_shape(t, "mse_loss")?;
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target), rg))
    }

    /// Gradients of the scalar `loss`, indexed by recording position. Only
    /// leaf entries are kept; interior gradients are consumed by the sweep.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.rg(loss) {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf | Op::Param(_) => {
                    // Leaf gradients stay readable after the sweep.
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(a) {
                        let ga = gemm(&g, false, self.value(b), true);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.rg(b) {
                        let gb = gemm(self.value(a), true, &g, false);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let ga = hadamard(&g, self.value(b));
                        accumulate(&mut grads, a, ga);
                    }
                    if self.rg(b) {
                        let gb = hadamard(&g, self.value(a));
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.rg(bias) {
                        let n = self.value(bias).len();
                        let mut gb = vec![0.0; n];
                        for row in g.data().chunks(n) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        let shape = self.value(bias).shape().to_vec();
                        accumulate(&mut grads, bias, Tensor::from_raw(shape, gb));
                    }
                    if self.rg(x) {
                        accumulate(&mut grads, x, g);
                    }
                }
                Op::Scale(x, c) => accumulate(&mut grads, x, g.scale(c)),
                Op::Relu(x) => {
                    let input = self.value(x);
                    let data = g
                        .data()
                        .iter()
                        .zip(input.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, Tensor::from_raw(input.shape().to_vec(), data));
                }
                Op::Sum(x) => {
                    let shape = self.value(x).shape().to_vec();
                    accumulate(&mut grads, x, Tensor::full(&shape, g.item()));
                }
                Op::Mean(x) => {
                    let xv = self.value(x);
                    let v = g.item() / xv.len() as f64;
                    accumulate(&mut grads, x, Tensor::full(xv.shape(), v));
                }
                Op::Reshape(x) => {
                    let shape = self.value(x).shape().to_vec();
                    accumulate(&mut grads, x, Tensor::from_raw(shape, g.into_data()));
                }
                Op::ConcatCols(a, b) => {
                    let (p, q) = (self.value(a).cols(), self.value(b).cols());
                    let m = g.rows();
                    let mut ga = Vec::with_capacity(m * p);
                    let mut gb = Vec::with_capacity(m * q);
                    for row in g.data().chunks(p + q) {
                        ga.extend_from_slice(&row[..p]);
                        gb.extend_from_slice(&row[p..]);
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, Tensor::from_raw(vec![m, p], ga));
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, Tensor::from_raw(vec![m, q], gb));
                    }
                }
                Op::Propagate(s, x) => {
                    let gx = block_apply(self.value(s), &g, true);
                    accumulate(&mut grads, x, gx);
                }
                Op::Mse(pred, target) => {
                    let (p, t) = (self.value(pred), self.value(target));
                    let c = 2.0 * g.item() / p.len() as f64;
                    let diff: Vec<f64> =
                        p.data().iter().zip(t.data()).map(|(a, b)| c * (a - b)).collect();
                    if self.rg(target) {
                        let neg = diff.iter().map(|v| -v).collect();
                        accumulate(&mut grads, target, Tensor::from_raw(t.shape().to_vec(), neg));
                    }
                    if self.rg(pred) {
                        accumulate(&mut grads, pred, Tensor::from_raw(p.shape().to_vec(), diff));
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Back-propagates from `loss` and adds the result into the `grad` of
    /// every parameter recorded with [`Tape::param`]. Calling it twice
    /// without zeroing accumulates.
    pub fn backward(&self, loss: Var, params: &mut [&mut Parameter]) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(index), Some(g)) = (&node.op, g) {
                let p = params.get_mut(*index).ok_or_else(|| {
                    Error::InvalidArgument(format!("parameter index {index} out of range"))
                })?;
                p.grad.expect_same_shape(&g, "backward")?;
                p.grad.add_assign(&g);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}

/// `op(S)·X_b` for each `n`-row block of `x`.
fn block_apply(s: &Tensor, x: &Tensor, transpose: bool) -> Tensor {
    let n = s.rows();
    let c = x.cols();
    let mut out = vec![0.0; x.len()];
    for (xb, ob) in x.data().chunks(n * c).zip(out.chunks_mut(n * c)) {
        gemm_into(s.data(), n, n, transpose, xb, n, c, false, ob, 0.0);
    }
    Tensor::from_raw(x.shape().to_vec(), out)
}
