//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s in execution
//! order. [`Tape::backward`] walks that record once in reverse and returns
//! the gradient of a scalar root with respect to every node that requires
//! one. Values registered with [`Tape::constant`] are detached: no gradient
//! flows into them and querying one yields `None`.
//!
//! ```
//! use dccl_core::{autodiff::Tape, tensor::Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let y = x.mul(x).unwrap().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{broadcast_index, broadcast_shape, reduce_broadcast, Tensor};

/// Smallest row norm accepted by [`Var::l2_normalize_rows`].
pub const NORM_FLOOR: f64 = 1e-12;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId),
    L2NormalizeRows(NodeId),
    LogSumExpRows(NodeId, Option<Rc<[bool]>>),
    Gather(NodeId, Rc<[usize]>),
    ConcatRows(Vec<NodeId>),
    SelectRows(NodeId, Rc<[usize]>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable leaf.
    pub fn param(&self, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// A detached leaf; gradients never flow into it.
    pub fn constant(&self, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of a scalar `root` with respect to every node that requires one.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::full(root_value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contrib) in backward_rule(&nodes, id, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(contrib.data())
                        .for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` for detached or unreached nodes.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn with_shape(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("shape preserved by construction")
}

fn backward_rule(nodes: &[Node], id: NodeId, g: &Tensor) -> Vec<(NodeId, Tensor)> {
    let val = |i: NodeId| -> &Tensor { &nodes[i].value };
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, reduce_broadcast(g, val(*a).shape())),
            (*b, reduce_broadcast(g, val(*b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, reduce_broadcast(g, val(*a).shape())),
            (*b, reduce_broadcast(&g.map(|v| -v), val(*b).shape())),
        ],
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ia = broadcast_index(va.shape(), g.shape());
            let ib = broadcast_index(vb.shape(), g.shape());
            let is_div = matches!(nodes[id].op, Op::Div(..));
            let mut ga = Vec::with_capacity(g.len());
            let mut gb = Vec::with_capacity(g.len());
            for ((&gv, &pa), &pb) in g.data().iter().zip(&ia).zip(&ib) {
                let (x, y) = (va.data()[pa], vb.data()[pb]);
                if is_div {
                    ga.push(gv / y);
                    gb.push(-gv * x / (y * y));
                } else {
                    ga.push(gv * y);
                    gb.push(gv * x);
                }
            }
            vec![
                (*a, reduce_broadcast(&with_shape(g.shape(), ga), va.shape())),
                (*b, reduce_broadcast(&with_shape(g.shape(), gb), vb.shape())),
            ]
        }
        Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let bt = transpose_raw(vb.data(), k, m);
            let at = transpose_raw(va.data(), n, k);
            vec![
                (*a, with_shape(&[n, k], matmul_raw(g.data(), &bt, n, m, k))),
                (*b, with_shape(&[k, m], matmul_raw(&at, g.data(), k, n, m))),
            ]
        }
        Op::Transpose(a) => {
            let s = out.shape();
            vec![(*a, with_shape(&[s[1], s[0]], transpose_raw(g.data(), s[0], s[1])))]
        }
        Op::Exp(a) => vec![(*a, zip_map(g, out, |gv, y| gv * y))],
        Op::Log(a) => vec![(*a, zip_map(g, val(*a), |gv, x| gv / x))],
        Op::Softplus(a) => vec![(*a, zip_map(g, val(*a), |gv, x| gv * sigmoid(x)))],
        Op::Relu(a) => vec![(
            *a,
            zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
        )],
        Op::Sqrt(a) => vec![(*a, zip_map(g, out, |gv, y| gv * 0.5 / y))],
        Op::Square(a) => vec![(*a, zip_map(g, val(*a), |gv, x| 2.0 * gv * x))],
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
        }
        Op::SumAxis(a) => {
            let src = val(*a).shape();
            let idx = broadcast_index(g.shape(), src);
            let data = idx.iter().map(|&i| g.data()[i]).collect();
            vec![(*a, with_shape(src, data))]
        }
        Op::L2NormalizeRows(a) => {
            let x = val(*a);
            let (n, d) = (x.rows(), x.cols());
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                let xr = x.row(i);
                let yr = out.row(i);
                let gr = &g.data()[i * d..(i + 1) * d];
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for j in 0..d {
                    data[i * d + j] = (gr[j] - yr[j] * dot) / norm;
                }
            }
            vec![(*a, with_shape(x.shape(), data))]
        }
        Op::LogSumExpRows(a, mask) => {
            let x = val(*a);
            let (n, m) = (x.rows(), x.cols());
            let mut data = vec![0.0; n * m];
            for i in 0..n {
                let lse = out.data()[i];
                let gi = g.data()[i];
                for j in 0..m {
                    if mask.as_ref().map_or(true, |mk| mk[i * m + j]) {
                        data[i * m + j] = gi * (x.data()[i * m + j] - lse).exp();
                    }
                }
            }
            vec![(*a, with_shape(x.shape(), data))]
        }
        Op::Gather(a, cols) => {
            let x = val(*a);
            let m = x.cols();
            let mut data = vec![0.0; x.len()];
            for (i, &c) in cols.iter().enumerate() {
                data[i * m + c] += g.data()[i];
            }
            vec![(*a, with_shape(x.shape(), data))]
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let s = val(p).shape();
                    let len = val(p).len();
                    let t = with_shape(s, g.data()[offset..offset + len].to_vec());
                    offset += len;
                    (p, t)
                })
                .collect()
        }
        Op::SelectRows(a, idx) => {
            let x = val(*a);
            let c = x.cols();
            let mut data = vec![0.0; x.len()];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    data[i * c + j] += g.data()[k * c + j];
                }
            }
            vec![(*a, with_shape(x.shape(), data))]
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    with_shape(x.shape(), data)
}

impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    /// Borrow the value without bumping the reference count.
    pub fn with_value<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes: Ref<'_, Vec<Node>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn requires_grad(self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn elementwise(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok(with_shape(a.shape(), data));
        }
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let ia = broadcast_index(a.shape(), &shape);
        let ib = broadcast_index(b.shape(), &shape);
        let data = ia
            .iter()
            .zip(&ib)
            .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
            .collect();
        Ok(with_shape(&shape, data))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(other, "div", |x, y| x / y)?;
        Ok(self.binary(other, Op::Div(self.id, other.id), v))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    /// Matrix product of two 2-D operands.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let v = with_shape(&[n, m], matmul_raw(a.data(), b.data(), n, k, m));
        Ok(self.binary(other, Op::MatMul(self.id, other.id), v))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                left: a.shape().to_vec(),
                right: vec![],
            });
        }
        let (n, m) = (a.shape()[0], a.shape()[1]);
        let v = with_shape(&[m, n], transpose_raw(a.data(), n, m));
        Ok(self.unary(Op::Transpose(self.id), v))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    /// Natural log; non-positive entries are rejected.
    pub fn log(self) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Degenerate {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        let v = a.map(f64::ln);
        Ok(self.unary(Op::Log(self.id), v))
    }

    pub fn softplus(self) -> Var<'t> {
        let v = self.value().map(softplus);
        self.unary(Op::Softplus(self.id), v)
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(Op::Relu(self.id), v)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Degenerate {
                op: "sqrt",
                detail: format!("non-positive entry {bad}"),
            });
        }
        let v = a.map(f64::sqrt);
        Ok(self.unary(Op::Sqrt(self.id), v))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.unary(Op::Square(self.id), v)
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().data().iter().sum());
        self.unary(Op::Sum(self.id), v)
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let v = Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64);
        self.unary(Op::Mean(self.id), v)
    }

    /// Sum of a 2-D operand along `axis`, keeping the reduced dimension.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 || axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "sum_axis",
                left: a.shape().to_vec(),
                right: vec![axis],
            });
        }
        let (n, m) = (a.shape()[0], a.shape()[1]);
        let v = if axis == 0 {
            let mut s = vec![0.0; m];
            for i in 0..n {
                s.iter_mut().zip(a.row(i)).for_each(|(s, x)| *s += x);
            }
            with_shape(&[1, m], s)
        } else {
            with_shape(&[n, 1], (0..n).map(|i| a.row(i).iter().sum()).collect())
        };
        Ok(self.unary(Op::SumAxis(self.id), v))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let n = self.with_value(|a| a.shape().get(axis).copied().unwrap_or(1));
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Divide every row by its Euclidean norm. Rows with norm below
    /// [`NORM_FLOOR`] are rejected.
    pub fn l2_normalize_rows(self) -> Result<Var<'t>> {
        let a = self.value();
        let (n, d) = (a.rows(), a.cols());
        let mut data = Vec::with_capacity(a.len());
        for i in 0..n {
            let r = a.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= NORM_FLOOR) {
                return Err(Error::Degenerate {
                    op: "l2_normalize",
                    detail: format!("row {i} has norm {norm:e}"),
                });
            }
            data.extend(r.iter().map(|v| v / norm));
        }
        debug_assert_eq!(data.len(), n * d);
        let v = with_shape(a.shape(), data);
        Ok(self.unary(Op::L2NormalizeRows(self.id), v))
    }

    /// Row-wise log-sum-exp of an `n x m` operand, over the columns
    /// selected by `mask` (row-major `n*m`), or all columns when `None`.
    /// Returns `n x 1`. A row with no selected column is rejected.
    pub fn logsumexp_rows(self, mask: Option<Rc<[bool]>>) -> Result<Var<'t>> {
        let a = self.value();
        let (n, m) = (a.rows(), a.cols());
        if let Some(mk) = &mask {
            if mk.len() != n * m {
                return Err(Error::ShapeMismatch {
                    op: "logsumexp_rows",
                    left: a.shape().to_vec(),
                    right: vec![mk.len()],
                });
            }
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let selected = |j: usize| mask.as_ref().map_or(true, |mk| mk[i * m + j]);
            let row = a.row(i);
            let max = (0..m)
                .filter(|&j| selected(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if !(0..m).any(selected) {
                return Err(Error::Degenerate {
                    op: "logsumexp_rows",
                    detail: format!("row {i} selects no entries"),
                });
            }
            // Non-finite rows propagate so the caller sees a non-finite loss.
            if (0..m).any(|j| selected(j) && row[j].is_nan()) {
                out.push(f64::NAN);
                continue;
            }
            if max.is_infinite() {
                out.push(max);
                continue;
            }
            let argmax = (0..m).find(|&j| selected(j) && row[j] == max).expect("max is attained");
            let rest: f64 = (0..m)
                .filter(|&j| j != argmax && selected(j))
                .map(|j| (row[j] - max).exp())
                .sum();
            out.push(max + rest.ln_1p());
        }
        let v = with_shape(&[n, 1], out);
        Ok(self.unary(Op::LogSumExpRows(self.id, mask), v))
    }

    /// Picks `self[i, cols[i]]` for every row; returns `n x 1`.
    pub fn gather(self, cols: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let (n, m) = (a.rows(), a.cols());
        if cols.len() != n || cols.iter().any(|&c| c >= m) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: a.shape().to_vec(),
                right: vec![cols.len()],
            });
        }
        let data = cols.iter().enumerate().map(|(i, &c)| a.data()[i * m + c]).collect();
        let v = with_shape(&[n, 1], data);
        Ok(self.unary(Op::Gather(self.id, cols.into()), v))
    }

    pub fn select_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                left: a.shape().to_vec(),
                right: vec![bad],
            });
        }
        let v = a.select_rows(idx);
        Ok(self.unary(Op::SelectRows(self.id, idx.into()), v))
    }
}

/// Stack 2-D operands with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().expect("concat_rows needs at least one part");
    let tape = first.tape;
    let cols = first.with_value(Tensor::cols);
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let v = p.value();
        if v.shape().len() != 2 || v.cols() != cols {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                left: first.shape(),
                right: v.shape().to_vec(),
            });
        }
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    let rg = parts.iter().any(|p| p.requires_grad());
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(with_shape(&[rows, cols], data), Op::ConcatRows(ids), rg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_values() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(&t(&[2, 1], &[1.0, 1.0]));
        let c = a.matmul(b).unwrap();
        assert_eq!(c.value().data(), &[3.0, 7.0]);
        assert_eq!(c.shape(), vec![2, 1]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch_naming_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(&t(&[2, 2], &[0.0; 4]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn normalize_three_four_five() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[2], &[3.0, 4.0]));
        let y = x.l2_normalize_rows().unwrap();
        let v = y.value();
        assert!((v.data()[0] - 0.6).abs() < 1e-15);
        assert!((v.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(
            x.l2_normalize_rows(),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::scalar(0.0));
        assert!((x.softplus().value().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn quadratic_gradient() {
        let tape = Tape::new();
        let x = tape.param(&t(&[3], &[1.0, 2.0, 3.0]));
        let y = x.mul(x).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn detached_leaf_has_no_gradient() {
        let tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.0, 2.0]));
        let c = tape.constant(&t(&[2], &[3.0, 4.0]));
        let y = x.mul(c).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let y = x.add(x).unwrap().mul(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 12.0);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::new();
        let a = tape.param(&t(&[3, 2], &[0.0; 6]));
        let b = tape.param(&t(&[1, 2], &[1.0, 2.0]));
        let y = a.add(b).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(g.get(a).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn masked_logsumexp_empty_row_rejected() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 2], &[0.0, 1.0]));
        let mask: Rc<[bool]> = vec![false, false].into();
        assert!(x.logsumexp_rows(Some(mask)).is_err());
    }

    #[test]
    fn logsumexp_is_stable_at_large_logits() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 2], &[1000.0, 1000.0]));
        let v = x.logsumexp_rows(None).unwrap().value().item();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_propagates_non_finite_rows() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[3, 2], &[f64::NAN, 1.0, f64::INFINITY, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]));
        let v = x.logsumexp_rows(None).unwrap().value();
        assert!(v.data()[0].is_nan());
        assert_eq!(v.data()[1], f64::INFINITY);
        assert_eq!(v.data()[2], f64::NEG_INFINITY);
    }
}
