use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::gemm::gemm;
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    MatMul(usize, usize),
    AddRow(usize, usize),
    ScaleRows(usize, usize),
    Sum(usize),
    Mean(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Pow(usize, f64),
    Clamp(usize, f64, f64),
    Maximum(usize, usize),
    Select(Rc<Vec<bool>>, usize, usize),
    CosSin(usize),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize, usize),
    Index(usize, usize),
    Reshape(usize),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// Append-only record of operations.
///
/// Nodes are stored in recording order, which is also a topological order,
/// so backward is a single reverse sweep. A tape is single-threaded; build one
/// per thread when evaluating in parallel.
pub struct Tape {
    id: u64,
    recording: bool,
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("recording", &self.recording)
            .field("len", &self.len())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &node.shape)
            .field("op", &node.op)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape.len() {
        2 => Some((shape[0], shape[1])),
        _ => None,
    }
}

/// Fetch (allocating zeros on first touch) the gradient buffer of `id`,
/// or `None` if that node does not take gradients.
fn grad_buf<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

/// Accumulate an element-wise contribution, summing it down if the target is
/// a broadcast scalar.
fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    len: usize,
    f: impl Fn(usize) -> f64,
) {
    if let Some(buf) = grad_buf(grads, nodes, id) {
        if buf.len() == 1 && len > 1 {
            buf[0] += (0..len).map(f).sum::<f64>();
        } else {
            for (i, b) in buf.iter_mut().enumerate() {
                *b += f(i);
            }
        }
    }
}

impl Tape {
    /// A tape that records gradients for every parameter bound to it.
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            inner: RefCell::new(Inner::default()),
        }
    }

    /// A tape whose parameters never require gradients. Forward values are
    /// computed by exactly the same kernels as on a recording tape.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape,
            value: Rc::new(value),
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Leaf that receives gradients (on a recording tape).
    pub fn param(&self, tensor: &Tensor) -> Var<'_> {
        self.push(
            Op::Leaf,
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            self.recording,
        )
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        let shape = tensor.shape().to_vec();
        self.push(Op::Leaf, shape, tensor.into_data(), false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, Vec::new(), vec![value], false)
    }

    /// Constant column vector (`n x 1`).
    pub fn column(&self, values: Vec<f64>) -> Var<'_> {
        let n = values.len();
        self.push(Op::Leaf, vec![n, 1], values, false)
    }

    /// Stack scalars (or 1-element vars) into a vector of shape `[n]`.
    pub fn stack<'a>(&'a self, items: &[Var<'a>]) -> Result<Var<'a>> {
        let mut parts = Vec::with_capacity(items.len());
        for v in items {
            self.check(v)?;
            if v.numel() != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack",
                    lhs: vec![1],
                    rhs: v.shape(),
                });
            }
            parts.push(v.reshape(&[1])?);
        }
        Var::concat(&parts, 0)
    }

    fn check(&self, v: &Var<'_>) -> Result<()> {
        if v.tape.id == self.id {
            Ok(())
        } else {
            Err(AutodiffError::ForeignTape)
        }
    }

    fn meta(&self, id: usize) -> (Vec<usize>, Rc<Vec<f64>>, bool) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[id];
        (n.shape.clone(), n.value.clone(), n.requires_grad)
    }

    /// Propagate `d loss / d node` to every node that requires gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check(&loss)?;
        let mut guard = self.inner.borrow_mut();
        let inner = &mut *guard;
        if inner.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        let loss_shape = inner.nodes[loss.id].shape.clone();
        if numel(&loss_shape) != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        inner.backward_done = true;
        let nodes = &inner.nodes;
        let grads = &mut inner.grads;
        grads.clear();
        grads.resize(nodes.len(), None);
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(node, &g, nodes, grads);
            grads[id] = Some(g);
        }
        Ok(())
    }

    fn grad_of(&self, id: usize) -> Option<Tensor> {
        let inner = self.inner.borrow();
        if !inner.backward_done || !inner.nodes[id].requires_grad {
            return None;
        }
        let node = &inner.nodes[id];
        let data = inner
            .grads
            .get(id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        Some(Tensor::new(node.shape.clone(), data).expect("grad shape"))
    }
}

fn backprop_node(node: &Node, g: &[f64], nodes: &[Node], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    let len = g.len();
    match node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let ga = |i: usize| g[i];
            accumulate(grads, nodes, a, len, ga);
            accumulate(grads, nodes, b, len, ga);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, a, len, |i| g[i]);
            accumulate(grads, nodes, b, len, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
            let pick = |v: &Rc<Vec<f64>>, i: usize| if v.len() == 1 { v[0] } else { v[i] };
            accumulate(grads, nodes, a, len, |i| g[i] * pick(&vb, i));
            accumulate(grads, nodes, b, len, |i| g[i] * pick(&va, i));
        }
        Op::Div(a, b) => {
            let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
            let pick = |v: &Rc<Vec<f64>>, i: usize| if v.len() == 1 { v[0] } else { v[i] };
            accumulate(grads, nodes, a, len, |i| g[i] / pick(&vb, i));
            accumulate(grads, nodes, b, len, |i| {
                let d = pick(&vb, i);
                -g[i] * pick(&va, i) / (d * d)
            });
        }
        Op::Neg(a) => accumulate(grads, nodes, a, len, |i| -g[i]),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, nodes, a, len, |i| g[i]),
        Op::MulScalar(a, c) => accumulate(grads, nodes, a, len, |i| c * g[i]),
        Op::MatMul(a, b) => {
            let (m, k) = dims2(&nodes[a].shape).expect("matmul lhs");
            let n = nodes[b].shape[1];
            let va = nodes[a].value.clone();
            let vb = nodes[b].value.clone();
            if let Some(buf) = grad_buf(grads, nodes, a) {
                gemm(m, n, k, g, false, &vb, true, 1.0, buf);
            }
            if let Some(buf) = grad_buf(grads, nodes, b) {
                gemm(k, m, n, &va, true, g, false, 1.0, buf);
            }
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, a, len, |i| g[i]);
            let cols = nodes[b].value.len();
            if let Some(buf) = grad_buf(grads, nodes, b) {
                for row in g.chunks_exact(cols) {
                    for (acc, x) in buf.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
            }
        }
        Op::ScaleRows(a, s) => {
            let cols = node.shape[1];
            let vs = nodes[s].value.clone();
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| g[i] * vs[i / cols]);
            if let Some(buf) = grad_buf(grads, nodes, s) {
                for (r, acc) in buf.iter_mut().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    *acc += g[span.clone()]
                        .iter()
                        .zip(&va[span])
                        .map(|(x, y)| x * y)
                        .sum::<f64>();
                }
            }
        }
        Op::Sum(a) => {
            let n = nodes[a].value.len();
            accumulate(grads, nodes, a, n, |_| g[0]);
        }
        Op::Mean(a) => {
            let n = nodes[a].value.len();
            let scale = g[0] / n as f64;
            accumulate(grads, nodes, a, n, |_| scale);
        }
        Op::Sin(a) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| g[i] * va[i].cos());
        }
        Op::Cos(a) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| -g[i] * va[i].sin());
        }
        Op::Exp(a) => accumulate(grads, nodes, a, len, |i| g[i] * out[i]),
        Op::Log(a) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| g[i] / va[i]);
        }
        Op::Sqrt(a) => accumulate(grads, nodes, a, len, |i| 0.5 * g[i] / out[i]),
        Op::Relu(a) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| if va[i] > 0.0 { g[i] } else { 0.0 });
        }
        Op::Sigmoid(a) => accumulate(grads, nodes, a, len, |i| g[i] * out[i] * (1.0 - out[i])),
        Op::Softplus(a) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| g[i] * sigmoid(va[i]));
        }
        Op::Pow(a, p) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| g[i] * p * va[i].powf(p - 1.0));
        }
        Op::Clamp(a, lo, hi) => {
            let va = nodes[a].value.clone();
            accumulate(grads, nodes, a, len, |i| {
                if va[i] >= lo && va[i] <= hi {
                    g[i]
                } else {
                    0.0
                }
            });
        }
        Op::Maximum(a, b) => {
            let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
            accumulate(grads, nodes, a, len, |i| if va[i] >= vb[i] { g[i] } else { 0.0 });
            accumulate(grads, nodes, b, len, |i| if va[i] >= vb[i] { 0.0 } else { g[i] });
        }
        Op::Select(ref cond, a, b) => {
            accumulate(grads, nodes, a, len, |i| if cond[i] { g[i] } else { 0.0 });
            accumulate(grads, nodes, b, len, |i| if cond[i] { 0.0 } else { g[i] });
        }
        Op::CosSin(a) => {
            let cols = nodes[a].shape[1];
            accumulate(grads, nodes, a, nodes[a].value.len(), |i| {
                let (r, c) = (i / cols, i % cols);
                let cos_i = r * 2 * cols + c;
                let sin_i = cos_i + cols;
                // d cos = -sin, d sin = cos
                -g[cos_i] * out[sin_i] + g[sin_i] * out[cos_i]
            });
        }
        Op::Concat(ref parts, axis) => {
            if node.shape.len() == 1 || axis == 0 {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    let o = offset;
                    accumulate(grads, nodes, p, n, |i| g[o + i]);
                    offset += n;
                }
            } else {
                let total = node.shape[1];
                let mut col0 = 0;
                for &p in parts {
                    let w = nodes[p].shape[1];
                    let c0 = col0;
                    accumulate(grads, nodes, p, nodes[p].value.len(), |i| {
                        g[(i / w) * total + c0 + i % w]
                    });
                    col0 += w;
                }
            }
        }
        Op::Slice(a, axis, start, _end) => {
            let src = &nodes[a].shape;
            if src.len() == 1 || axis == 0 {
                let row = if src.len() == 2 { src[1] } else { 1 };
                let base = start * row;
                if let Some(buf) = grad_buf(grads, nodes, a) {
                    for (i, x) in g.iter().enumerate() {
                        buf[base + i] += x;
                    }
                }
            } else {
                let (src_cols, w) = (src[1], node.shape[1]);
                if let Some(buf) = grad_buf(grads, nodes, a) {
                    for (i, x) in g.iter().enumerate() {
                        buf[(i / w) * src_cols + start + i % w] += x;
                    }
                }
            }
        }
        Op::Index(a, idx) => {
            if let Some(buf) = grad_buf(grads, nodes, a) {
                buf[idx] += g[0];
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
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

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Shared handle to the forward values.
    pub fn values(&self) -> Rc<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn value(&self) -> Tensor {
        let (shape, value, _) = self.tape.meta(self.id);
        Tensor::new(shape, value.as_ref().clone()).expect("node shape")
    }

    /// First element of the value; the scalar itself for scalar vars.
    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value[0]
    }

    /// Accumulated gradient after [`Tape::backward`]; `None` for constants.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad_of(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if self.tape.id == other.tape.id {
            Ok(())
        } else {
            Err(AutodiffError::ForeignTape)
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value, rg) = self.tape.meta(self.id);
        let out = value.iter().map(|&x| f(x)).collect();
        self.tape.push(op, shape, out, rg)
    }

    fn binary(&self, other: Var<'t>, kind: BinKind) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (sa, va, ra) = self.tape.meta(self.id);
        let (sb, vb, rb) = self.tape.meta(other.id);
        let name = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        };
        let shape = if sa == sb {
            sa.clone()
        } else if va.len() == 1 {
            sb.clone()
        } else if vb.len() == 1 {
            sa.clone()
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        };
        let n = numel(&shape);
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let out: Vec<f64> = if va.len() == vb.len() {
            va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else if va.len() == 1 {
            vb.iter().map(|&y| f(va[0], y)).collect()
        } else {
            va.iter().map(|&x| f(x, vb[0])).collect()
        };
        debug_assert_eq!(out.len(), n);
        let op = match kind {
            BinKind::Add => Op::Add(self.id, other.id),
            BinKind::Sub => Op::Sub(self.id, other.id),
            BinKind::Mul => Op::Mul(self.id, other.id),
            BinKind::Div => Op::Div(self.id, other.id),
        };
        Ok(self.tape.push(op, shape, out, ra || rb))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Mul)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Div)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::MulScalar(self.id, c), |x| x * c)
    }

    /// `1 - self`, common enough in blending and BCE to deserve a name.
    pub fn one_minus(&self) -> Var<'t> {
        self.neg().add_scalar(1.0)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (sa, va, ra) = self.tape.meta(self.id);
        let (sb, vb, rb) = self.tape.meta(other.id);
        let (m, k, n) = match (dims2(&sa), dims2(&sb)) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &va, false, &vb, false, 0.0, &mut out);
        Ok(self
            .tape
            .push(Op::MatMul(self.id, other.id), vec![m, n], out, ra || rb))
    }

    /// `self[i, j] + row[j]` for a matrix `self` and a vector `row`.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let (sa, va, ra) = self.tape.meta(self.id);
        let (sb, vb, rb) = self.tape.meta(row.id);
        match dims2(&sa) {
            Some((_, cols)) if vb.len() == cols && sb.iter().filter(|&&d| d != 1).count() <= 1 => {
                let mut out = va.as_ref().clone();
                for r in out.chunks_exact_mut(cols) {
                    for (x, b) in r.iter_mut().zip(vb.iter()) {
                        *x += b;
                    }
                }
                Ok(self
                    .tape
                    .push(Op::AddRow(self.id, row.id), sa, out, ra || rb))
            }
            _ => Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: sa,
                rhs: sb,
            }),
        }
    }

    /// `self[i, j] * scale[i]` for a matrix `self` and a per-row column `scale`.
    pub fn scale_rows(&self, scale: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&scale)?;
        let (sa, va, ra) = self.tape.meta(self.id);
        let (sb, vb, rb) = self.tape.meta(scale.id);
        match dims2(&sa) {
            Some((rows, cols)) if vb.len() == rows => {
                let mut out = va.as_ref().clone();
                for (r, s) in out.chunks_exact_mut(cols.max(1)).zip(vb.iter()) {
                    for x in r.iter_mut() {
                        *x *= s;
                    }
                }
                Ok(self
                    .tape
                    .push(Op::ScaleRows(self.id, scale.id), sa, out, ra || rb))
            }
            _ => Err(AutodiffError::ShapeMismatch {
                op: "scale_rows",
                lhs: sa,
                rhs: sb,
            }),
        }
    }

    pub fn sum(&self) -> Var<'t> {
        let (_, value, rg) = self.tape.meta(self.id);
        let s = value.iter().sum();
        self.tape.push(Op::Sum(self.id), Vec::new(), vec![s], rg)
    }

    pub fn mean(&self) -> Var<'t> {
        let (_, value, rg) = self.tape.meta(self.id);
        let s = value.iter().sum::<f64>() / value.len() as f64;
        self.tape.push(Op::Mean(self.id), Vec::new(), vec![s], rg)
    }

    pub fn sin(&self) -> Var<'t> {
        self.unary(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(&self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f64::cos)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    fn check_positive(&self, op: &'static str) -> Result<()> {
        let v = self.values();
        match v.iter().find(|&&x| !(x > 0.0)) {
            Some(&bad) => Err(AutodiffError::Domain { op, value: bad }),
            None => Ok(()),
        }
    }

    /// Natural log; non-positive inputs are an error rather than NaN.
    pub fn ln(&self) -> Result<Var<'t>> {
        self.check_positive("log")?;
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    /// Square root; non-positive inputs are an error.
    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.check_positive("sqrt")?;
        Ok(self.unary(Op::Sqrt(self.id), f64::sqrt))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    /// Element-wise `x^p` for a constant exponent.
    pub fn powf(&self, p: f64) -> Result<Var<'t>> {
        let v = self.values();
        let integral = p.fract() == 0.0;
        if let Some(&bad) = v
            .iter()
            .find(|&&x| (x < 0.0 && !integral) || (x == 0.0 && p < 1.0))
        {
            return Err(AutodiffError::Domain {
                op: "power",
                value: bad,
            });
        }
        Ok(self.unary(Op::Pow(self.id, p), |x| x.powf(p)))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Element-wise maximum; ties go to `self`.
    pub fn maximum(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (sa, va, ra) = self.tape.meta(self.id);
        let (sb, vb, rb) = self.tape.meta(other.id);
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op: "maximum",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = va
            .iter()
            .zip(vb.iter())
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        Ok(self
            .tape
            .push(Op::Maximum(self.id, other.id), sa, out, ra || rb))
    }

    /// `cond[i] ? self[i] : other[i]` with a constant condition.
    pub fn select(&self, cond: Rc<Vec<bool>>, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (sa, va, ra) = self.tape.meta(self.id);
        let (sb, vb, rb) = self.tape.meta(other.id);
        if sa != sb || cond.len() != va.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "select",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = cond
            .iter()
            .zip(va.iter().zip(vb.iter()))
            .map(|(&c, (&x, &y))| if c { x } else { y })
            .collect();
        Ok(self
            .tape
            .push(Op::Select(cond, self.id, other.id), sa, out, ra || rb))
    }

    /// Row-wise `[cos(x), sin(x)]` of an `n x f` matrix, giving `n x 2f`.
    pub fn cos_sin(&self) -> Result<Var<'t>> {
        let (sa, va, ra) = self.tape.meta(self.id);
        let (rows, cols) = dims2(&sa).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: "cos_sin",
            lhs: sa.clone(),
            rhs: vec![],
        })?;
        let mut out = vec![0.0; rows * cols * 2];
        for (src, dst) in va.chunks_exact(cols.max(1)).zip(out.chunks_exact_mut(2 * cols.max(1))) {
            let (c, s) = dst.split_at_mut(cols);
            for ((x, cv), sv) in src.iter().zip(c.iter_mut()).zip(s.iter_mut()) {
                let (sn, cs) = x.sin_cos();
                *cv = cs;
                *sv = sn;
            }
        }
        Ok(self
            .tape
            .push(Op::CosSin(self.id), vec![rows, 2 * cols], out, ra))
    }

    /// Concatenate along `axis` (0 = rows, 1 = columns). Vectors only
    /// concatenate along axis 0.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Invalid("concat of zero parts".into()))?;
        let tape = first.tape;
        let mut metas = Vec::with_capacity(parts.len());
        for p in parts {
            first.same_tape(p)?;
            metas.push(tape.meta(p.id));
        }
        let s0 = metas[0].0.clone();
        let rg = metas.iter().any(|m| m.2);
        let mismatch = |s: &Vec<usize>| AutodiffError::ShapeMismatch {
            op: "concat",
            lhs: s0.clone(),
            rhs: s.clone(),
        };
        let ids = parts.iter().map(|p| p.id).collect::<Vec<_>>();
        match (s0.len(), axis) {
            (1, 0) | (2, 0) => {
                let tail = &s0[1..];
                let mut lead = 0;
                let mut out = Vec::new();
                for (s, v, _) in &metas {
                    if s.len() != s0.len() || &s[1..] != tail {
                        return Err(mismatch(s));
                    }
                    lead += s[0];
                    out.extend_from_slice(v);
                }
                let mut shape = vec![lead];
                shape.extend_from_slice(tail);
                Ok(tape.push(Op::Concat(ids, 0), shape, out, rg))
            }
            (2, 1) => {
                let rows = s0[0];
                let mut total = 0;
                for (s, _, _) in &metas {
                    if s.len() != 2 || s[0] != rows {
                        return Err(mismatch(s));
                    }
                    total += s[1];
                }
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (s, v, _) in &metas {
                        out.extend_from_slice(&v[r * s[1]..(r + 1) * s[1]]);
                    }
                }
                Ok(tape.push(Op::Concat(ids, 1), vec![rows, total], out, rg))
            }
            _ => Err(AutodiffError::Invalid(format!(
                "concat along axis {axis} of rank-{} tensors",
                s0.len()
            ))),
        }
    }

    /// Sub-range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let (sa, va, ra) = self.tape.meta(self.id);
        let bad = || {
            AutodiffError::Invalid(format!(
                "slice {start}..{end} along axis {axis} of shape {sa:?}"
            ))
        };
        if axis >= sa.len() || start > end || end > sa[axis] {
            return Err(bad());
        }
        let (shape, out) = match (sa.len(), axis) {
            (1, 0) => (vec![end - start], va[start..end].to_vec()),
            (2, 0) => {
                let cols = sa[1];
                (vec![end - start, cols], va[start * cols..end * cols].to_vec())
            }
            (2, 1) => {
                let cols = sa[1];
                let out = va
                    .chunks_exact(cols.max(1))
                    .flat_map(|r| r[start..end].iter().copied())
                    .collect();
                (vec![sa[0], end - start], out)
            }
            _ => return Err(bad()),
        };
        Ok(self
            .tape
            .push(Op::Slice(self.id, axis, start, end), shape, out, ra))
    }

    /// Flat element `idx` as a scalar.
    pub fn at(&self, idx: usize) -> Result<Var<'t>> {
        let (sa, va, ra) = self.tape.meta(self.id);
        if idx >= va.len() {
            return Err(AutodiffError::Invalid(format!(
                "index {idx} out of range for shape {sa:?}"
            )));
        }
        Ok(self
            .tape
            .push(Op::Index(self.id, idx), Vec::new(), vec![va[idx]], ra))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let (sa, va, ra) = self.tape.meta(self.id);
        if numel(shape) != va.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: sa,
                rhs: shape.to_vec(),
            });
        }
        Ok(self.tape.push(
            Op::Reshape(self.id),
            shape.to_vec(),
            va.as_ref().clone(),
            ra,
        ))
    }
}
