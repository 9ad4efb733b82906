//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into the [`ParamStore`] for every parameter node. Graphs are single-use:
//! a second backward pass requires [`Graph::reset`].

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Axis selector for reductions, concatenation and slicing of rank-2 tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Along dimension 0 (stack rows / reduce over rows).
    Rows,
    /// Along dimension 1 (join columns / reduce over columns).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LogSumExp(Var, Axis),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Pick(Var, usize, usize),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// How `rhs` broadcasts against `lhs` in add/sub.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    let (m, n) = a.require_rank2(op)?;
    let (bm, bn) = b.require_rank2(op)?;
    Ok(match (bm, bn) {
        _ if bm == m && bn == n => Broadcast::Same,
        (1, 1) => Broadcast::Scalar,
        (1, c) if c == n => Broadcast::Row,
        (r, 1) if r == m => Broadcast::Col,
        _ => return Err(mismatch(op, a, b)),
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop every node so the graph can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.grads.clear();
        self.backward_done = false;
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::InvalidTensor(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose gradient is kept on the graph (see [`Graph::grad`]).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Bring a stored parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = broadcast_kind(name, ta, tb)?;
        let n = ta.cols();
        let mut out = ta.clone();
        for (idx, x) in out.data_mut().iter_mut().enumerate() {
            let (i, j) = (idx / n, idx % n);
            let y = match kind {
                Broadcast::Same => tb.data()[idx],
                Broadcast::Row => tb.data()[j],
                Broadcast::Col => tb.data()[i],
                Broadcast::Scalar => tb.data()[0],
            };
            *x = f(*x, y);
        }
        Ok(out)
    }

    /// Elementwise `a + b`; `b` may also be a `[1, n]` row, `[m, 1]` column or `[1, 1]` scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Elementwise `a - b` with the same broadcasting as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x *= s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x = x.tanh());
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x = sigmoid(*x));
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Numerically stable `log Σ exp` over `axis` (max-subtracted).
    /// `Axis::Rows` reduces `[m, n]` to `[1, n]`, `Axis::Cols` to `[m, 1]`.
    pub fn log_sum_exp(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.require_rank2("log_sum_exp")?;
        let value = match axis {
            Axis::Rows => {
                let out = (0..n)
                    .map(|j| log_sum_exp((0..m).map(|i| t.get(i, j))))
                    .collect();
                Tensor::matrix(1, n, out)?
            }
            Axis::Cols => {
                let out = (0..m).map(|i| log_sum_exp(t.row_slice(i).iter().copied())).collect();
                Tensor::matrix(m, 1, out)?
            }
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSumExp(a, axis), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of zero tensors".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let (m0, n0) = self.value(first).require_rank2("concat")?;
        let value = match axis {
            Axis::Cols => {
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (m, n) = self.value(p).require_rank2("concat")?;
                    if m != m0 {
                        return Err(mismatch("concat", self.value(first), self.value(p)));
                    }
                    widths.push(n);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(m0 * total);
                for i in 0..m0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::matrix(m0, total, data)?
            }
            Axis::Rows => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let (m, n) = self.value(p).require_rank2("concat")?;
                    if n != n0 {
                        return Err(mismatch("concat", self.value(first), self.value(p)));
                    }
                    rows += m;
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, n0, data)?
            }
        };
        let rg = self.rg(parts);
        self.push(value, Op::Concat(parts.to_vec(), axis), rg)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.require_rank2("slice")?;
        let limit = if axis == Axis::Rows { m } else { n };
        if start >= end || end > limit {
            return Err(Error::InvalidTensor(format!(
                "slice {start}..{end} out of range for shape {:?}",
                t.shape()
            )));
        }
        let value = match axis {
            Axis::Rows => Tensor::matrix(end - start, n, t.data()[start * n..end * n].to_vec())?,
            Axis::Cols => {
                let mut data = Vec::with_capacity(m * (end - start));
                for i in 0..m {
                    data.extend_from_slice(&t.row_slice(i)[start..end]);
                }
                Tensor::matrix(m, end - start, data)?
            }
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::Slice(a, axis, start), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Row lookup: `[table[i] for i in rows]` stacked into `[rows.len(), n]`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (m, n) = t.require_rank2("gather_rows")?;
        if rows.is_empty() {
            return Err(Error::InvalidTensor("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::InvalidTensor(format!(
                    "row index {r} out of range for shape {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), n, data)?;
        let rg = self.rg(&[table]);
        self.push(value, Op::GatherRows(table, rows.to_vec()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Single element `a[r, c]` as a `[1, 1]` scalar.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.require_rank2("pick")?;
        if r >= m || c >= n {
            return Err(Error::InvalidTensor(format!(
                "pick ({r}, {c}) out of range for shape {:?}",
                t.shape()
            )));
        }
        let value = Tensor::scalar(t.get(r, c));
        let rg = self.rg(&[a]);
        self.push(value, Op::Pick(a, r, c), rg)
    }

    /// Inverted dropout: each entry is zeroed with probability `rate` and
    /// survivors are scaled by `1 / (1 - rate)`. Rate 0 returns `a` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidTensor(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(a, mask)
    }

    /// Dropout with an explicit multiplicative mask.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// Reverse pass from a scalar `loss`, accumulating parameter gradients
    /// into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(shape, vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads, store)?;
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let val = |v: &Var| &nodes[v.0].value;
        let mut send = |v: Var, t: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                if nodes[a.0].requires_grad {
                    send(*a, g.matmul(&val(b).transpose()?)?);
                }
                if nodes[b.0].requires_grad {
                    send(*b, val(a).transpose()?.matmul(g)?);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[idx].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, g.clone());
                if nodes[b.0].requires_grad {
                    let kind = broadcast_kind("add", val(a), val(b))?;
                    let mut gb = reduce_broadcast(g, kind, val(b).shape())?;
                    if sign < 0.0 {
                        gb.data_mut().iter_mut().for_each(|x| *x = -*x);
                    }
                    send(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(b), |x, y| x * y);
                let gb = zip_map(g, val(a), |x, y| x * y);
                send(*a, ga);
                send(*b, gb);
            }
            Op::Scale(a, s) => {
                let mut ga = g.clone();
                ga.data_mut().iter_mut().for_each(|x| *x *= s);
                send(*a, ga);
            }
            Op::Tanh(a) => {
                let y = &nodes[idx].value;
                send(*a, zip_map(g, y, |gx, yx| gx * (1.0 - yx * yx)));
            }
            Op::Sigmoid(a) => {
                let y = &nodes[idx].value;
                send(*a, zip_map(g, y, |gx, yx| gx * yx * (1.0 - yx)));
            }
            Op::LogSumExp(a, axis) => {
                let x = val(a);
                let y = &nodes[idx].value;
                let n = x.cols();
                let mut ga = x.clone();
                for (k, v) in ga.data_mut().iter_mut().enumerate() {
                    let (i, j) = (k / n, k % n);
                    let (yy, gg) = match axis {
                        Axis::Rows => (y.data()[j], g.data()[j]),
                        Axis::Cols => (y.data()[i], g.data()[i]),
                    };
                    *v = gg * (*v - yy).exp();
                }
                send(*a, ga);
            }
            Op::Concat(parts, axis) => {
                let (m, n) = (g.rows(), g.cols());
                let mut offset = 0;
                for p in parts {
                    let shape = val(p).shape();
                    let (pm, pn) = (shape[0], shape[1]);
                    let part = match axis {
                        Axis::Cols => {
                            let mut data = Vec::with_capacity(m * pn);
                            for i in 0..m {
                                data.extend_from_slice(&g.row_slice(i)[offset..offset + pn]);
                            }
                            offset += pn;
                            Tensor::matrix(m, pn, data)?
                        }
                        Axis::Rows => {
                            let data = g.data()[offset * n..(offset + pm) * n].to_vec();
                            offset += pm;
                            Tensor::matrix(pm, n, data)?
                        }
                    };
                    send(*p, part);
                }
            }
            Op::Slice(a, axis, start) => {
                let mut ga = Tensor::zeros(val(a).shape());
                let n = ga.cols();
                match axis {
                    Axis::Rows => {
                        ga.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        for i in 0..g.rows() {
                            for (j, &x) in g.row_slice(i).iter().enumerate() {
                                ga.set(i, start + j, x);
                            }
                        }
                    }
                }
                send(*a, ga);
            }
            Op::Transpose(a) => send(*a, g.transpose()?),
            Op::GatherRows(a, rows) => {
                let mut ga = Tensor::zeros(val(a).shape());
                let n = ga.cols();
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        ga.data_mut()[r * n + j] += g.data()[k * n + j];
                    }
                }
                send(*a, ga);
            }
            Op::Sum(a) => {
                let mut ga = Tensor::zeros(val(a).shape());
                ga.fill(g.data()[0]);
                send(*a, ga);
            }
            Op::Pick(a, r, c) => {
                let mut ga = Tensor::zeros(val(a).shape());
                ga.set(*r, *c, g.data()[0]);
                send(*a, ga);
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                send(*a, Tensor::new(g.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::LogSumExp(..) => "log_sum_exp",
        Op::Concat(..) => "concat",
        Op::Slice(..) => "slice",
        Op::Transpose(_) => "transpose",
        Op::GatherRows(..) => "gather_rows",
        Op::Sum(_) => "sum",
        Op::Pick(..) => "pick",
        Op::Dropout(..) => "dropout",
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x = f(*x, *y);
    }
    out
}

fn reduce_broadcast(g: &Tensor, kind: Broadcast, shape: &[usize]) -> Result<Tensor> {
    let (m, n) = (g.rows(), g.cols());
    Ok(match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::new(shape.to_vec(), vec![g.sum()])?,
        Broadcast::Row => {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (o, x) in out.iter_mut().zip(g.row_slice(i)) {
                    *o += x;
                }
            }
            Tensor::new(shape.to_vec(), out)?
        }
        Broadcast::Col => {
            let out = (0..m).map(|i| g.row_slice(i).iter().sum()).collect();
            Tensor::new(shape.to_vec(), out)?
        }
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(x)` with max subtraction. Empty input yields `-inf`.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}
