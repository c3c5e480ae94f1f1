//! Recorded computation and reverse-mode gradients.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::ops::{self, gemm, is_row_broadcast};
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    SubRow(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    ClampMax(Var, f64),
    MaxAxis(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    Concat(Vec<Var>, usize),
    IndexSelect(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order, so backward is a single reverse sweep.
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

    /// Records a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum, or matrix plus `[1, n]` bias row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let op = if va.shape() != vb.shape() && is_row_broadcast(va, vb) {
            Op::AddRow(a, b)
        } else {
            Op::Add(a, b)
        };
        let out = ops::add(va, vb)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let op = if va.shape() != vb.shape() && is_row_broadcast(va, vb) {
            Op::SubRow(a, b)
        } else {
            Op::Sub(a, b)
        };
        let out = ops::sub(va, vb)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::div(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = ops::scale(self.value(a), c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = ops::add_scalar(self.value(a), c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = ops::relu(self.value(a));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = ops::tanh(self.value(a));
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = ops::exp(self.value(a));
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = ops::log(self.value(a));
        self.push(out, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = ops::square(self.value(a));
        self.push(out, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = ops::sqrt(self.value(a));
        self.push(out, Op::Sqrt(a), &[a])
    }

    /// `min(x, cap)`; the gradient is zero wherever the cap is active.
    pub fn clamp_max(&mut self, a: Var, cap: f64) -> Var {
        let out = ops::clamp_max(self.value(a), cap);
        self.push(out, Op::ClampMax(a, cap), &[a])
    }

    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (out, arg) = ops::max_over_axis(self.value(a), axis)?;
        Ok(self.push(out, Op::MaxAxis(a, arg), &[a]))
    }

    /// Flat argmax indices recorded by a `max_over_axis` node.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxAxis(_, arg) => Some(arg),
            _ => None,
        }
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = ops::softmax(self.value(a))?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = ops::log_softmax(self.value(a))?;
        Ok(self.push(out, Op::LogSoftmax(a), &[a]))
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let out = ops::logsumexp_rows(self.value(a))?;
        Ok(self.push(out, Op::LogSumExp(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = ops::sum(self.value(a));
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = ops::sum_axis(self.value(a), axis)?;
        Ok(self.push(out, Op::SumAxis(a, axis), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = ops::mean(self.value(a))?;
        Ok(self.push(out, Op::Mean(a), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat(&values, axis)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn index_select(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let out = ops::index_select(self.value(a), rows)?;
        Ok(self.push(out, Op::IndexSelect(a, rows.to_vec()), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Digest of every data-dependent branch taken in the forward pass: relu
    /// signs, max argmaxes and active clamps. Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.value(*a).data() {
                        (x > 0.0).hash(&mut h);
                    }
                }
                Op::MaxAxis(_, arg) => arg.hash(&mut h),
                Op::ClampMax(a, cap) => {
                    for &x in self.value(*a).data() {
                        (x < *cap).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut da, 0.0);
                    acc(*a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut db, 0.0);
                    acc(*b, Tensor::new(vec![k, n], db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, ops::scale(g, -1.0));
            }
            Op::AddRow(a, b) | Op::SubRow(a, b) => {
                acc(*a, g.clone());
                let col = ops::sum_axis(g, 0).expect("rank 2");
                let sign = if matches!(node.op, Op::AddRow(..)) { 1.0 } else { -1.0 };
                acc(*b, ops::scale(&col, sign));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, elementwise(vb, &|bv, gv| bv * gv));
                acc(*b, elementwise(va, &|av, gv| av * gv));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, elementwise(vb, &|bv, gv| gv / bv));
                let db: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .zip(g.data())
                    .map(|((&av, &bv), &gv)| -gv * av / (bv * bv))
                    .collect();
                acc(*b, Tensor::new(vb.shape().to_vec(), db).expect("shape"));
            }
            Op::Scale(a, c) => acc(*a, ops::scale(g, *c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, elementwise(self.value(*a), &|x, gv| if x > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => acc(*a, elementwise(y, &|t, gv| gv * (1.0 - t * t))),
            Op::Exp(a) => acc(*a, elementwise(y, &|e, gv| gv * e)),
            Op::Log(a) => acc(*a, elementwise(self.value(*a), &|x, gv| gv / x)),
            Op::Square(a) => acc(*a, elementwise(self.value(*a), &|x, gv| 2.0 * x * gv)),
            Op::Sqrt(a) => acc(*a, elementwise(y, &|s, gv| gv / (2.0 * s))),
            Op::ClampMax(a, cap) => {
                let cap = *cap;
                acc(*a, elementwise(self.value(*a), &|x, gv| if x < cap { gv } else { 0.0 }))
            }
            Op::MaxAxis(a, arg) => {
                let mut da = Tensor::zeros(self.value(*a).shape());
                let d = da.data_mut();
                for (&idx, &gv) in arg.iter().zip(g.data()) {
                    d[idx] += gv;
                }
                acc(*a, da);
            }
            Op::Softmax(a) => {
                let n = y.shape()[1];
                let mut da = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    da.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), da).expect("shape"));
            }
            Op::LogSoftmax(a) => {
                let n = y.shape()[1];
                let mut da = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                    let total: f64 = gr.iter().sum();
                    da.extend(yr.iter().zip(gr).map(|(ly, q)| q - ly.exp() * total));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), da).expect("shape"));
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let n = x.shape()[1];
                let mut da = Vec::with_capacity(x.len());
                for ((xr, &l), &gv) in x.data().chunks_exact(n).zip(y.data()).zip(g.data()) {
                    da.extend(xr.iter().map(|&xi| gv * (xi - l).exp()));
                }
                acc(*a, Tensor::new(x.shape().to_vec(), da).expect("shape"));
            }
            Op::Sum(a) => acc(*a, Tensor::full(self.value(*a).shape(), g.item())),
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.item() / x.len() as f64));
            }
            Op::SumAxis(a, axis) => {
                let x = self.value(*a);
                let (m, n) = (x.shape()[0], x.shape()[1]);
                let mut da = Vec::with_capacity(m * n);
                for r in 0..m {
                    for c in 0..n {
                        da.push(if *axis == 0 { g.data()[c] } else { g.data()[r] });
                    }
                }
                acc(*a, Tensor::new(vec![m, n], da).expect("shape"));
            }
            Op::Concat(parts, axis) => {
                let (rows, cols) = (g.shape()[0], g.shape()[1]);
                let mut offset = 0;
                for p in parts {
                    let ps = self.value(*p).shape();
                    let (pm, pn) = (ps[0], ps[1]);
                    let mut dp = Vec::with_capacity(pm * pn);
                    if *axis == 0 {
                        dp.extend_from_slice(&g.data()[offset * cols..(offset + pm) * cols]);
                        offset += pm;
                    } else {
                        for r in 0..rows {
                            let start = r * cols + offset;
                            dp.extend_from_slice(&g.data()[start..start + pn]);
                        }
                        offset += pn;
                    }
                    acc(*p, Tensor::new(vec![pm, pn], dp).expect("shape"));
                }
            }
            Op::IndexSelect(a, rows) => {
                let x = self.value(*a);
                let n = x.shape()[1];
                let mut da = Tensor::zeros(x.shape());
                let d = da.data_mut();
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..n {
                        d[r * n + c] += g.data()[i * n + c];
                    }
                }
                acc(*a, da);
            }
            Op::Reshape(a) => acc(*a, g.reshape(self.value(*a).shape()).expect("same size")),
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }
}
