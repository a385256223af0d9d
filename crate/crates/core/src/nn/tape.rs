//! Tensor-level reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] in evaluation order, which is a
//! topological order of the computation graph. [`Tape::backward`] walks the
//! nodes once in reverse and accumulates vector-Jacobian products into the
//! parents. Nodes that do not depend on a trainable leaf are skipped.

use std::rc::Rc;

use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};

/// Floor applied to predicted probabilities inside the KL loss.
pub const KL_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Discounted cash flows of a batch of contracts, laid out for the
/// expected-cash-flow operation.
///
/// `y00` and `y01` hold `steps + 1` values per sample: entry `k` is the cash
/// flow at iteration `k`. Sample `b` has `lengths[b] <= steps` valid
/// transitions; everything past it is padding and is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct CashFlowBatch {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    pub y00: Vec<f64>,
    pub y01: Vec<f64>,
}

impl CashFlowBatch {
    pub fn validate(&self) -> Result<()> {
        let per = self.steps + 1;
        if self.lengths.len() != self.batch
            || self.y00.len() != self.batch * per
            || self.y01.len() != self.batch * per
        {
            return Err(Error::Shape(format!(
                "cash-flow batch of {} samples x {} steps has inconsistent buffers",
                self.batch, self.steps
            )));
        }
        if let Some(&l) = self.lengths.iter().find(|&&l| l > self.steps) {
            return Err(Error::Shape(format!("length {l} exceeds {} steps", self.steps)));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Softmax(Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    KlDiv(Var, Rc<Tensor>),
    ExpectedCashFlow(Var, Rc<CashFlowBatch>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needs one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros if the output does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.len() != b.len() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Mean over rows of `sum_j p_j ln(p_j / q_j)`, `0 ln 0 = 0`, `q` floored at [`KL_EPS`].
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> f64 {
    let rows = p.rows().max(1);
    let total: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .filter(|(&pj, _)| pj > 0.0)
        .map(|(&pj, &qj)| pj * (pj / qj.max(KL_EPS)).ln())
        .sum();
    total / rows as f64
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// `x + b` with the row vector `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not match {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut value = xv.clone();
        let cols = xv.cols();
        for row in value.data_mut().chunks_mut(cols) {
            for (v, bb) in row.iter_mut().zip(bv.data()) {
                *v += bb;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddRow(x, b), needs))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(av, bv, what)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, factor), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let needs = self.needs(x);
        self.push(value, Op::Tanh(x), needs)
    }

    /// Rows `start..start + count` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + count > xv.rows() {
            return Err(Error::Shape(format!(
                "rows {start}..{} of a {}-row matrix",
                start + count,
                xv.rows()
            )));
        }
        let cols = xv.cols();
        let data = xv.data()[start * cols..(start + count) * cols].to_vec();
        let value = Tensor::matrix(count, cols, data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceRows(x, start), needs))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Shape(format!("concat: {} vs {cols} columns", v.cols())));
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        let needs = self.needs(x);
        self.push(value, Op::Softmax(x), needs)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let needs = self.needs(x);
        self.push(value, Op::Abs(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len().max(1) as f64);
        let needs = self.needs(x);
        self.push(value, Op::Mean(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let needs = self.needs(x);
        self.push(value, Op::Sum(x), needs)
    }

    /// KL divergence of the predicted rows `q` from the target rows, averaged over rows.
    pub fn kl_div(&mut self, q: Var, target: Tensor) -> Result<Var> {
        check_same(self.value(q), &target, "kl_div")?;
        let value = Tensor::scalar(kl_divergence(&target, self.value(q)));
        let needs = self.needs(q);
        Ok(self.push(value, Op::KlDiv(q, Rc::new(target)), needs))
    }

    /// Expected discounted cash flow per sample.
    ///
    /// `probs` holds the alive-state rows `(p00, p01)` in step-major order:
    /// row `k * batch + b` is the transition out of iteration `k` for sample
    /// `b`. The result is a `batch x 1` column with
    /// `y00[0] + sum_{k < len} A_k (p00_k y00[k+1] + p01_k y01[k+1])`, where
    /// `A_k` is the probability of being alive at iteration `k`.
    pub fn expected_cash_flow(&mut self, probs: Var, flows: Rc<CashFlowBatch>) -> Result<Var> {
        flows.validate()?;
        let pv = self.value(probs);
        if pv.cols() != 2 || pv.rows() != flows.batch * flows.steps {
            return Err(Error::Shape(format!(
                "probabilities {:?} for {} samples x {} steps",
                pv.shape(),
                flows.batch,
                flows.steps
            )));
        }
        let p = pv.data();
        let per = flows.steps + 1;
        let mut out = Vec::with_capacity(flows.batch);
        for b in 0..flows.batch {
            let y00 = &flows.y00[b * per..(b + 1) * per];
            let y01 = &flows.y01[b * per..(b + 1) * per];
            let mut alive = 1.0;
            let mut total = y00[0];
            for k in 0..flows.lengths[b] {
                let row = 2 * (k * flows.batch + b);
                let (p00, p01) = (p[row], p[row + 1]);
                total += alive * (p00 * y00[k + 1] + p01 * y01[k + 1]);
                alive *= p00;
            }
            out.push(total);
        }
        let value = Tensor::matrix(flows.batch, 1, out)?;
        let needs = self.needs(probs);
        Ok(self.push(value, Op::ExpectedCashFlow(probs, flows), needs))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.value(output).shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl Fn(usize) -> f64) {
        if let Some(slot) = self.slot(grads, v) {
            for (i, s) in slot.data_mut().iter_mut().enumerate() {
                *s += f(i);
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(slot) = self.slot(grads, *a) {
                    gemm(1.0, MatRef::plain(g), MatRef::transposed(bv), 1.0, slot.data_mut());
                }
                if let Some(slot) = self.slot(grads, *b) {
                    gemm(1.0, MatRef::transposed(av), MatRef::plain(g), 1.0, slot.data_mut());
                }
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, |i| gd[i]);
                if let Some(slot) = self.slot(grads, *b) {
                    let cols = g.cols();
                    for row in gd.chunks(cols) {
                        for (s, gg) in slot.data_mut().iter_mut().zip(row) {
                            *s += gg;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |i| gd[i]);
                self.accumulate(grads, *b, |i| gd[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |i| gd[i]);
                self.accumulate(grads, *b, |i| -gd[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |i| gd[i] * bv[i]);
                self.accumulate(grads, *b, |i| gd[i] * av[i]);
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, |i| gd[i] * f),
            Op::Relu(x) => self.accumulate(grads, *x, |i| if out[i] > 0.0 { gd[i] } else { 0.0 }),
            Op::Sigmoid(x) => self.accumulate(grads, *x, |i| gd[i] * out[i] * (1.0 - out[i])),
            Op::Tanh(x) => self.accumulate(grads, *x, |i| gd[i] * (1.0 - out[i] * out[i])),
            Op::SliceRows(x, start) => {
                if let Some(slot) = self.slot(grads, *x) {
                    let offset = start * g.cols();
                    for (s, gg) in slot.data_mut()[offset..offset + gd.len()].iter_mut().zip(gd) {
                        *s += gg;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |i| gd[offset + i]);
                    offset += n;
                }
            }
            Op::Softmax(x) => {
                if let Some(slot) = self.slot(grads, *x) {
                    let cols = g.cols();
                    for ((s, y), gg) in slot
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(out.chunks(cols))
                        .zip(gd.chunks(cols))
                    {
                        let dot: f64 = y.iter().zip(gg).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            s[j] += y[j] * (gg[j] - dot);
                        }
                    }
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                // Subgradient 0 at exactly 0.
                self.accumulate(grads, *x, |i| {
                    if xv[i] > 0.0 {
                        gd[i]
                    } else if xv[i] < 0.0 {
                        -gd[i]
                    } else {
                        0.0
                    }
                });
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                let gg = gd[0] / n;
                self.accumulate(grads, *x, |_| gg);
            }
            Op::Sum(x) => {
                let gg = gd[0];
                self.accumulate(grads, *x, |_| gg);
            }
            Op::KlDiv(q, target) => {
                let qv = self.value(*q).data();
                let pv = target.data();
                let rows = target.rows().max(1) as f64;
                let gg = gd[0];
                self.accumulate(grads, *q, |i| {
                    if pv[i] > 0.0 && qv[i] >= KL_EPS {
                        -gg * pv[i] / qv[i] / rows
                    } else {
                        0.0
                    }
                });
            }
            Op::ExpectedCashFlow(probs, flows) => {
                let p = self.value(*probs).data();
                if let Some(slot) = self.slot(grads, *probs) {
                    let sd = slot.data_mut();
                    let per = flows.steps + 1;
                    let batch = flows.batch;
                    let mut alive = vec![0.0; flows.steps + 1];
                    for b in 0..batch {
                        let gb = gd[b];
                        if gb == 0.0 {
                            continue;
                        }
                        let len = flows.lengths[b];
                        let y00 = &flows.y00[b * per..(b + 1) * per];
                        let y01 = &flows.y01[b * per..(b + 1) * per];
                        alive[0] = 1.0;
                        for k in 0..len {
                            alive[k + 1] = alive[k] * p[2 * (k * batch + b)];
                        }
                        // rest = sum_{j > k} (A_j / A_{k+1}) c_j, built from the back.
                        let mut rest = 0.0;
                        for k in (0..len).rev() {
                            let row = 2 * (k * batch + b);
                            let (p00, p01) = (p[row], p[row + 1]);
                            sd[row] += gb * alive[k] * (y00[k + 1] + rest);
                            sd[row + 1] += gb * alive[k] * y01[k + 1];
                            rest = p00 * y00[k + 1] + p01 * y01[k + 1] + p00 * rest;
                        }
                    }
                }
            }
        }
    }
}
