//! Reverse-mode automatic differentiation over a per-step operation tape.
//!
//! Every primitive records its inputs on the [`Graph`]. Gradients are
//! themselves built out of graph primitives, so the result of [`Graph::grad`]
//! can be differentiated again. The gradient penalty relies on this: the
//! penalty is a function of `d critic / d input`, and the critic update needs
//! its derivative with respect to the critic weights.
//!
//! Node ids are assigned in creation order, which is a topological order of
//! the DAG. A backward sweep walks ids in decreasing order and visits each
//! node at most once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    SumAll(Var),
    Expand(Var),
    SumLast(Var),
    BroadcastLast(Var),
    SumLeading(Var),
    BroadcastLeading(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Sqrt(Var),
    Softplus(Var),
    ClampMin(Var, f64),
    SoftmaxLast(Var),
    LogSumExpLast(Var),
}

impl Op {
    fn inputs(&self) -> (Option<Var>, Option<Var>) {
        use Op::*;
        match *self {
            Leaf => (None, None),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | BatchMatMul(a, b) => {
                (Some(a), Some(b))
            }
            Neg(a) | Scale(a, _) | AddConst(a) | Transpose(a) | TransposeLast2(a)
            | Reshape(a) | SumAll(a) | Expand(a) | SumLast(a) | BroadcastLast(a)
            | SumLeading(a) | BroadcastLeading(a) | LeakyRelu(a, _) | Tanh(a) | Sigmoid(a)
            | Exp(a) | Log(a) | Recip(a) | Sqrt(a) | Softplus(a) | ClampMin(a, _) | SoftmaxLast(a)
            | LogSumExpLast(a) => (Some(a), None),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// An operation tape. Build one per training step and drop it afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: BTreeMap<Var, Tensor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let (a, b) = op.inputs();
        let requires_grad = a.map_or(false, |v| self.nodes[v.0].requires_grad)
            || b.map_or(false, |v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| -x);
        self.push("neg", v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_const", v, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push("transpose", v, Op::Transpose(a))
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).batch_matmul(self.value(b))?;
        self.push("batch_matmul", v, Op::BatchMatMul(a, b))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose_last2()?;
        self.push("transpose_last2", v, Op::TransposeLast2(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push("reshape", v, Op::Reshape(a))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.value(a).len() != 1 {
            return Err(Error::shape("expand", format!("{:?} is not a scalar", self.shape(a))));
        }
        let v = Tensor::full(shape, self.value(a).item());
        self.push("expand", v, Op::Expand(a))
    }

    /// Sums over the last axis: `[.., n] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let Some((&n, lead)) = t.shape().split_last() else {
            return Err(Error::shape("sum_last", "scalar input"));
        };
        let data = if n == 0 {
            vec![0.0; lead.iter().product()]
        } else {
            t.data().chunks(n).map(|c| c.iter().sum()).collect()
        };
        let v = Tensor::from_parts(lead.to_vec(), data);
        self.push("sum_last", v, Op::SumLast(a))
    }

    /// Repeats along a new trailing axis of length `n`.
    pub fn broadcast_last(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        let mut shape = t.shape().to_vec();
        shape.push(n);
        let mut data = Vec::with_capacity(t.len() * n);
        for &x in t.data() {
            data.extend(std::iter::repeat(x).take(n));
        }
        let v = Tensor::from_parts(shape, data);
        self.push("broadcast_last", v, Op::BroadcastLast(a))
    }

    /// Sums over the first axis: `[b, ..] -> [..]`.
    pub fn sum_leading(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let Some((_, rest)) = t.shape().split_first() else {
            return Err(Error::shape("sum_leading", "scalar input"));
        };
        let width: usize = rest.iter().product();
        let mut data = vec![0.0; width];
        if width > 0 {
            for chunk in t.data().chunks(width) {
                for (d, &x) in data.iter_mut().zip(chunk) {
                    *d += x;
                }
            }
        }
        let v = Tensor::from_parts(rest.to_vec(), data);
        self.push("sum_leading", v, Op::SumLeading(a))
    }

    /// Repeats along a new leading axis of length `b`.
    pub fn broadcast_leading(&mut self, a: Var, b: usize) -> Result<Var> {
        let t = self.value(a);
        let mut shape = vec![b];
        shape.extend_from_slice(t.shape());
        let mut data = Vec::with_capacity(t.len() * b);
        for _ in 0..b {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_parts(shape, data);
        self.push("broadcast_leading", v, Op::BroadcastLeading(a))
    }

    /// `x + bias` where `bias` has the shape of one row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let b = self.shape(x).first().copied().unwrap_or(1);
        let bb = self.broadcast_leading(bias, b)?;
        self.add(x, bb)
    }

    /// `x * scale` where `scale` has the shape of one row of `x`.
    pub fn mul_row(&mut self, x: Var, scale: Var) -> Result<Var> {
        let b = self.shape(x).first().copied().unwrap_or(1);
        let sb = self.broadcast_leading(scale, b)?;
        self.mul(x, sb)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push("leaky_relu", v, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(stable_sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push("recip", v, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sqrt);
        self.push("sqrt", v, Op::Sqrt(a))
    }

    /// `ln(1 + e^x)` evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(stable_softplus);
        self.push("softplus", v, Op::Softplus(a))
    }

    /// `max(x, floor)` elementwise; the gradient is passed where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(floor));
        self.push("clamp_min", v, Op::ClampMin(a, floor))
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax_last", "scalar input"))?;
        let mut data = t.data().to_vec();
        if n > 0 {
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
        }
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("softmax_last", v, Op::SoftmaxLast(a))
    }

    /// Log-sum-exp over the last axis: `[.., n] -> [..]`.
    pub fn logsumexp_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let Some((&n, lead)) = t.shape().split_last() else {
            return Err(Error::shape("logsumexp_last", "scalar input"));
        };
        if n == 0 {
            return Err(Error::shape("logsumexp_last", "empty last axis"));
        }
        let data = t.data().chunks(n).map(logsumexp).collect();
        let v = Tensor::from_parts(lead.to_vec(), data);
        self.push("logsumexp_last", v, Op::LogSumExpLast(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax_last(&mut self, a: Var) -> Result<Var> {
        let n = *self
            .shape(a)
            .last()
            .ok_or_else(|| Error::shape("log_softmax_last", "scalar input"))?;
        let lse = self.logsumexp_last(a)?;
        let lse = self.broadcast_last(lse, n)?;
        self.sub(a, lse)
    }

    /// Gradients of a scalar `output` with respect to each of `wrt`.
    ///
    /// The returned vars live on this graph and can be differentiated again.
    /// A `wrt` entry that `output` does not depend on, or that does not
    /// require gradients, gets a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(output).len() != 1 {
            return Err(Error::contract(format!(
                "gradient requested of non-scalar output with shape {:?}",
                self.shape(output)
            )));
        }
        let end = output.0 + 1;
        let mut reaches = vec![false; end];
        for w in wrt {
            if w.0 < end && self.nodes[w.0].requires_grad {
                reaches[w.0] = true;
            }
        }
        for i in 0..end {
            if reaches[i] {
                continue;
            }
            let (a, b) = self.nodes[i].op.inputs();
            reaches[i] = a.map_or(false, |v| reaches[v.0]) || b.map_or(false, |v| reaches[v.0]);
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if reaches[output.0] {
            let shape = self.shape(output).to_vec();
            grads[output.0] = Some(self.constant(Tensor::ones(&shape)));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !reaches[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (a, b) = op.inputs();
            let need_a = a.map_or(false, |v| reaches[v.0]);
            let need_b = b.map_or(false, |v| reaches[v.0]);
            if !need_a && !need_b {
                continue;
            }
            let (ga, gb) = self.vjp(Var(i), &op, g, need_a, need_b)?;
            if let (Some(a), Some(ga)) = (a, ga) {
                grads[a.0] = Some(self.accumulate(grads[a.0], ga)?);
            }
            if let (Some(b), Some(gb)) = (b, gb) {
                grads[b.0] = Some(self.accumulate(grads[b.0], gb)?);
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(*w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Backpropagates a scalar loss into every `requires_grad` leaf.
    ///
    /// Values are added into per-leaf buffers, so calling this twice without
    /// [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let grads = self.grad(loss, &leaves)?;
        for (leaf, g) in leaves.into_iter().zip(grads) {
            let value = self.value(g).clone();
            match self.leaf_grads.get_mut(&leaf) {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(value.data()) {
                        *a += v;
                    }
                }
                None => {
                    self.leaf_grads.insert(leaf, value);
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn leaf_grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Gradient values of `output` with respect to `wrt`, detached from the tape.
    pub fn grad_values(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let gs = self.grad(output, wrt)?;
        Ok(gs.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn accumulate(&mut self, existing: Option<Var>, new: Var) -> Result<Var> {
        match existing {
            Some(e) => self.add(e, new),
            None => Ok(new),
        }
    }

    /// Vector-Jacobian product of one node, expressed with graph primitives.
    fn vjp(
        &mut self,
        out: Var,
        op: &Op,
        g: Var,
        need_a: bool,
        need_b: bool,
    ) -> Result<(Option<Var>, Option<Var>)> {
        use Op::*;
        let r = match *op {
            Leaf => (None, None),
            Add(_, _) => (need_a.then_some(g), need_b.then_some(g)),
            Sub(_, _) => {
                let gb = if need_b { Some(self.neg(g)?) } else { None };
                (need_a.then_some(g), gb)
            }
            Mul(a, b) => {
                let ga = if need_a { Some(self.mul(g, b)?) } else { None };
                let gb = if need_b { Some(self.mul(g, a)?) } else { None };
                (ga, gb)
            }
            Neg(_) => (Some(self.neg(g)?), None),
            Scale(_, c) => (Some(self.scale(g, c)?), None),
            AddConst(_) => (Some(g), None),
            MatMul(a, b) => {
                let ga = if need_a {
                    let bt = self.transpose(b)?;
                    Some(self.matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if need_b {
                    let at = self.transpose(a)?;
                    Some(self.matmul(at, g)?)
                } else {
                    None
                };
                (ga, gb)
            }
            Transpose(_) => (Some(self.transpose(g)?), None),
            BatchMatMul(a, b) => {
                let ga = if need_a {
                    let bt = self.transpose_last2(b)?;
                    Some(self.batch_matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if need_b {
                    let at = self.transpose_last2(a)?;
                    Some(self.batch_matmul(at, g)?)
                } else {
                    None
                };
                (ga, gb)
            }
            TransposeLast2(_) => (Some(self.transpose_last2(g)?), None),
            Reshape(a) => {
                let shape = self.shape(a).to_vec();
                (Some(self.reshape(g, &shape)?), None)
            }
            SumAll(a) => {
                let shape = self.shape(a).to_vec();
                (Some(self.expand(g, &shape)?), None)
            }
            Expand(_) => (Some(self.sum(g)?), None),
            SumLast(a) => {
                let n = *self.shape(a).last().expect("sum_last input has rank >= 1");
                (Some(self.broadcast_last(g, n)?), None)
            }
            BroadcastLast(_) => (Some(self.sum_last(g)?), None),
            SumLeading(a) => {
                let b = self.shape(a)[0];
                (Some(self.broadcast_leading(g, b)?), None)
            }
            BroadcastLeading(_) => (Some(self.sum_leading(g)?), None),
            LeakyRelu(a, slope) => {
                // piecewise-linear: the local slope is a constant of the input
                let mask = self.value(a).map(|x| if x >= 0.0 { 1.0 } else { slope });
                let m = self.constant(mask);
                (Some(self.mul(g, m)?), None)
            }
            Tanh(_) => {
                let y2 = self.mul(out, out)?;
                let ny2 = self.neg(y2)?;
                let d = self.add_const(ny2, 1.0)?;
                (Some(self.mul(g, d)?), None)
            }
            Sigmoid(_) => {
                let ny = self.neg(out)?;
                let one_minus = self.add_const(ny, 1.0)?;
                let d = self.mul(out, one_minus)?;
                (Some(self.mul(g, d)?), None)
            }
            Exp(_) => (Some(self.mul(g, out)?), None),
            Log(a) => {
                let r = self.recip(a)?;
                (Some(self.mul(g, r)?), None)
            }
            Recip(_) => {
                let y2 = self.mul(out, out)?;
                let t = self.mul(g, y2)?;
                (Some(self.neg(t)?), None)
            }
            Sqrt(_) => {
                let r = self.recip(out)?;
                let half = self.scale(r, 0.5)?;
                (Some(self.mul(g, half)?), None)
            }
            Softplus(a) => {
                let s = self.sigmoid(a)?;
                (Some(self.mul(g, s)?), None)
            }
            ClampMin(a, floor) => {
                let mask = self.value(a).map(|x| if x > floor { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                (Some(self.mul(g, m)?), None)
            }
            SoftmaxLast(_) => {
                let n = *self.shape(out).last().expect("softmax input has rank >= 1");
                let gy = self.mul(g, out)?;
                let s = self.sum_last(gy)?;
                let sb = self.broadcast_last(s, n)?;
                let diff = self.sub(g, sb)?;
                (Some(self.mul(out, diff)?), None)
            }
            LogSumExpLast(a) => {
                let n = *self.shape(a).last().expect("logsumexp input has rank >= 1");
                let gb = self.broadcast_last(g, n)?;
                let p = self.softmax_last(a)?;
                (Some(self.mul(gb, p)?), None)
            }
        };
        Ok(r)
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
