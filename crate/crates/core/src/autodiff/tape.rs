//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is an arena of nodes appended in evaluation order, so a reverse
//! sweep over the arena is a valid reverse topological order. Handles into the
//! arena are [`Var`]s. Parameters enter the tape as leaves tagged with their
//! [`ParamId`]; [`Tape::backward`] collects their gradients into a
//! [`GradientMap`]. Constants (data, prototypes, mixing masks) are leaves
//! without a tag and never receive gradient.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::kernels::{self, NORM_FLOOR};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Stable identity of a trainable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Gradients keyed by parameter identity.
pub type GradientMap = BTreeMap<ParamId, Tensor>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Axis along which [`Tape::l2_normalize`] normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Every row becomes a unit vector.
    Rows,
    /// Every column becomes a unit vector.
    Cols,
}

/// The primitive set reachable through [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Exp,
    Log,
    Mean,
    Sum,
    ConcatRows,
    SelectRows(Vec<usize>),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Mean(Var),
    Sum(Var),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Softmax {
        input: Var,
        temperature: f64,
    },
    L2Normalize {
        input: Var,
        axis: Axis,
        norms: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Tensor,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
    grad: Option<Tensor>,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// A trainable leaf; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, Some(id))
    }

    /// An untagged leaf that records gradient, readable via [`Tape::grad`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg, None)
    }

    /// Dispatches a primitive by kind.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize, name: &'static str| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} takes {n} input(s), got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match kind {
            Primitive::MatMul => {
                arity(2, "matmul")?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2, "add")?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2, "sub")?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2, "mul")?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Scale(c) => {
                arity(1, "scale")?;
                Ok(self.scale(inputs[0], c))
            }
            Primitive::Relu => {
                arity(1, "relu")?;
                Ok(self.relu(inputs[0]))
            }
            Primitive::Exp => {
                arity(1, "exp")?;
                Ok(self.exp(inputs[0]))
            }
            Primitive::Log => {
                arity(1, "log")?;
                self.log(inputs[0])
            }
            Primitive::Mean => {
                arity(1, "mean")?;
                Ok(self.mean(inputs[0]))
            }
            Primitive::Sum => {
                arity(1, "sum")?;
                Ok(self.sum(inputs[0]))
            }
            Primitive::ConcatRows => self.concat_rows(inputs),
            Primitive::SelectRows(idx) => {
                arity(1, "select_rows")?;
                self.select_rows(inputs[0], &idx)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    fn broadcast_binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa == sb {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            return Tensor::from_vec(sa.rows, sa.cols, data);
        }
        if sb.is_scalar() {
            let y = tb.data()[0];
            return Ok(ta.map(|x| f(x, y)));
        }
        if sa.is_scalar() {
            let x = ta.data()[0];
            return Ok(tb.map(|y| f(x, y)));
        }
        Err(Error::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        })
    }

    /// Elementwise sum; a `1x1` operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise difference; a `1x1` operand broadcasts.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product; a `1x1` operand broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.derived(out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.derived(out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::exp);
        self.derived(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                value: bad,
            });
        }
        let out = self.value(a).map(libm::log);
        Ok(self.derived(out, Op::Log(a), &[a]))
    }

    /// Mean of all entries as a `1x1` tensor. The mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len();
        let mut s = 0.0;
        for &v in t.data() {
            s += v;
        }
        let m = if n == 0 { 0.0 } else { s / n as f64 };
        self.derived(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = 0.0;
        for &v in self.value(a).data() {
            s += v;
        }
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("concat_rows of zero tensors".into()));
        };
        let cols = self.shape(*first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(*first),
                    rhs: t.shape(),
                });
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.derived(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(a).select_rows(idx)?;
        Ok(self.derived(out, Op::SelectRows(a, idx.to_vec()), &[a]))
    }

    /// Row-wise softmax of `a / temperature`.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Result<Var> {
        kernels::check_temperature(temperature)?;
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            kernels::softmax_into(t.row_slice(r), temperature, out.row_slice_mut(r));
        }
        Ok(self.derived(
            out,
            Op::Softmax {
                input: a,
                temperature,
            },
            &[a],
        ))
    }

    /// Scales every slice along `axis` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = t.clone();
        let norms = match axis {
            Axis::Rows => {
                let mut norms = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = out.row_slice_mut(r);
                    let n = kernels::norm(row);
                    if !(n > NORM_FLOOR) {
                        return Err(Error::DegenerateVector { op: "l2_normalize" });
                    }
                    for v in row.iter_mut() {
                        *v /= n;
                    }
                    norms.push(n);
                }
                norms
            }
            Axis::Cols => {
                let mut norms = Vec::with_capacity(cols);
                for c in 0..cols {
                    let mut s = 0.0;
                    for r in 0..rows {
                        let v = t.get(r, c);
                        s += v * v;
                    }
                    let n = libm::sqrt(s);
                    if !(n > NORM_FLOOR) {
                        return Err(Error::DegenerateVector { op: "l2_normalize" });
                    }
                    for r in 0..rows {
                        out.set(r, c, t.get(r, c) / n);
                    }
                    norms.push(n);
                }
                norms
            }
        };
        Ok(self.derived(
            out,
            Op::L2Normalize {
                input: a,
                axis,
                norms,
            },
            &[a],
        ))
    }

    /// `1 - <a, b> / (|a| |b|)` for two equally shaped vectors, as a `1x1` node.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.rows != 1 {
            return Err(Error::ShapeMismatch {
                op: "cosine_distance",
                lhs: sa,
                rhs: sb,
            });
        }
        let na = self.l2_normalize(a, Axis::Rows)?;
        let nb = self.l2_normalize(b, Axis::Rows)?;
        let prod = self.mul(na, nb)?;
        let sim = self.sum(prod);
        let one = self.constant(Tensor::scalar(1.0));
        self.sub(one, sim)
    }

    /// Mean over rows of `-Σ_k targets · log softmax(logits)`. Target rows must
    /// be nonnegative and sum to one within 1e-6.
    pub fn cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lt = self.value(logits);
        if lt.shape() != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: lt.shape(),
                rhs: targets.shape(),
            });
        }
        for (i, row) in targets.rows_iter().enumerate() {
            let mut s = 0.0;
            for &v in row {
                if !(v >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "cross_entropy: target row {i} has a negative entry"
                    )));
                }
                s += v;
            }
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "cross_entropy: target row {i} sums to {s}, expected 1"
                )));
            }
        }
        let (n, k) = (lt.rows(), lt.cols());
        let mut logp = alloc::vec![0.0; k];
        let mut probs = Tensor::zeros(n, k);
        let mut total = 0.0;
        for r in 0..n {
            kernels::log_softmax_into(lt.row_slice(r), &mut logp);
            let trow = targets.row_slice(r);
            let mut row_loss = 0.0;
            for c in 0..k {
                row_loss -= trow[c] * logp[c];
                probs.set(r, c, libm::exp(logp[c]));
            }
            total += row_loss;
        }
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        let op = Op::CrossEntropy {
            logits,
            targets: targets.clone(),
            probs,
        };
        Ok(self.derived(Tensor::scalar(loss), op, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every
    /// parameter leaf reachable from it; a parameter bound more than once has
    /// its gradients summed.
    pub fn backward(&mut self, loss: Var) -> Result<GradientMap> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(Error::NotScalar(shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g)?;
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }

        let mut out = GradientMap::new();
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                match out.get_mut(&id) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        out.insert(id, g.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut Tensor, &Tensor)) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let mut acc = node
            .grad
            .take()
            .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
        f(&mut acc, &node.value);
        self.nodes[v.0].grad = Some(acc);
    }

    /// Adds `g` into the gradient of `v`, summing over the broadcast when `v` is `1x1`.
    fn accumulate_broadcast(&mut self, v: Var, g: &Tensor, sign: f64) {
        let scalar = self.shape(v).is_scalar() && !g.shape().is_scalar();
        self.accumulate(v, |acc, _| {
            if scalar {
                let mut s = 0.0;
                for &x in g.data() {
                    s += x;
                }
                acc.data_mut()[0] += sign * s;
            } else {
                for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += sign * x;
                }
            }
        });
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Tensor) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).clone();
                    self.accumulate(*a, |acc, _| kernels::matmul_grad_lhs(g, &bv, acc));
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).clone();
                    self.accumulate(*b, |acc, _| kernels::matmul_grad_rhs(&av, g, acc));
                }
            }
            Op::Add(a, b) => {
                self.accumulate_broadcast(*a, g, 1.0);
                self.accumulate_broadcast(*b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(*a, g, 1.0);
                self.accumulate_broadcast(*b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                let ga = product_grad(g, &bv);
                let gb = product_grad(g, &av);
                self.accumulate_broadcast(*a, &ga, 1.0);
                self.accumulate_broadcast(*b, &gb, 1.0);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(*a, |acc, _| {
                    for (x, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *x += c * gv;
                    }
                });
            }
            Op::Relu(a) => self.accumulate(*a, |acc, input| {
                for ((x, &gv), &iv) in acc.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
                    if iv > 0.0 {
                        *x += gv;
                    }
                }
            }),
            Op::Exp(a) => {
                let out = self.nodes[idx].value.clone();
                self.accumulate(*a, |acc, _| {
                    for ((x, &gv), &ov) in acc.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gv * ov;
                    }
                });
            }
            Op::Log(a) => self.accumulate(*a, |acc, input| {
                for ((x, &gv), &iv) in acc.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
                    *x += gv / iv;
                }
            }),
            Op::Mean(a) => {
                let gv = g.data()[0];
                self.accumulate(*a, |acc, _| {
                    let n = acc.len() as f64;
                    for x in acc.data_mut() {
                        *x += gv / n;
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(*a, |acc, _| {
                    for x in acc.data_mut() {
                        *x += gv;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).rows;
                    let slice = &g.data()[offset * cols..(offset + rows) * cols];
                    self.accumulate(p, |acc, _| {
                        for (x, &gv) in acc.data_mut().iter_mut().zip(slice) {
                            *x += gv;
                        }
                    });
                    offset += rows;
                }
            }
            Op::SelectRows(a, idx) => self.accumulate(*a, |acc, _| {
                for (out_row, &src) in idx.iter().enumerate() {
                    let grow = g.row_slice(out_row);
                    for (x, &gv) in acc.row_slice_mut(src).iter_mut().zip(grow) {
                        *x += gv;
                    }
                }
            }),
            Op::Softmax { input, temperature } => {
                let y = self.nodes[idx].value.clone();
                let t = *temperature;
                self.accumulate(*input, |acc, _| {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let inner = kernels::dot(yr, gr);
                        for ((x, &yv), &gv) in acc.row_slice_mut(r).iter_mut().zip(yr).zip(gr) {
                            *x += yv * (gv - inner) / t;
                        }
                    }
                });
            }
            Op::L2Normalize { input, axis, norms } => {
                let y = self.nodes[idx].value.clone();
                match axis {
                    Axis::Rows => self.accumulate(*input, |acc, _| {
                        for r in 0..y.rows() {
                            let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                            let inner = kernels::dot(yr, gr);
                            let n = norms[r];
                            for ((x, &yv), &gv) in acc.row_slice_mut(r).iter_mut().zip(yr).zip(gr) {
                                *x += (gv - yv * inner) / n;
                            }
                        }
                    }),
                    Axis::Cols => self.accumulate(*input, |acc, _| {
                        for c in 0..y.cols() {
                            let mut inner = 0.0;
                            for r in 0..y.rows() {
                                inner += y.get(r, c) * g.get(r, c);
                            }
                            let n = norms[c];
                            for r in 0..y.rows() {
                                let v = acc.get(r, c) + (g.get(r, c) - y.get(r, c) * inner) / n;
                                acc.set(r, c, v);
                            }
                        }
                    }),
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let gv = g.data()[0];
                let n = probs.rows().max(1) as f64;
                self.accumulate(*logits, |acc, _| {
                    for r in 0..probs.rows() {
                        let (pr, tr) = (probs.row_slice(r), targets.row_slice(r));
                        let mut mass = 0.0;
                        for &t in tr {
                            mass += t;
                        }
                        for ((x, &p), &t) in acc.row_slice_mut(r).iter_mut().zip(pr).zip(tr) {
                            *x += gv * (p * mass - t) / n;
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

/// `g ⊙ other`; `g` has the full output shape and `other` is either the same
/// shape or a broadcast `1x1`.
fn product_grad(g: &Tensor, other: &Tensor) -> Tensor {
    if other.shape().is_scalar() && !g.shape().is_scalar() {
        let c = other.data()[0];
        return g.map(|x| x * c);
    }
    let data = g
        .data()
        .iter()
        .zip(other.data())
        .map(|(a, b)| a * b)
        .collect();
    Tensor::from_vec(g.rows(), g.cols(), data).expect("operands share a shape")
}
