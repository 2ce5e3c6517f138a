use std::cell::RefCell;
use std::sync::Arc;

use super::kernels::{col2im, gemm, im2col, sigmoid, softmax_in_place, topk_columns};
use super::param::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Records every differentiable operation of one forward pass.
///
/// Nodes are appended in execution order; [`Tape::backward`] walks them in
/// reverse, so each recorded operation is visited at most once.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, usize),
    Affine(usize, f64),
    MulConst(usize, Arc<Vec<f64>>),
    AddConst(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    SoftmaxRows(usize),
    Transpose(usize),
    TopK(usize, Vec<usize>),
    Conv1d {
        x: usize,
        kernel: usize,
        bias: Option<usize>,
        pad: usize,
        cols: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SelectRows(usize, Vec<usize>),
    Reshape(usize),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        gold: Vec<usize>,
        probs: Vec<f64>,
    },
}

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of a backward pass: one gradient slot per tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    order: Vec<usize>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub(crate) fn by_id(&self, id: usize) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Node ids of the operations replayed, in the order they were visited.
    pub fn visit_order(&self) -> &[usize] {
        &self.order
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(dim_err(op, other, &[0, 0])),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, None)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, None)
    }

    /// Binds a stored parameter. Its buffer is shared, not copied.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let value = store.get(id).tensor.clone();
        self.push(value, Op::Leaf, true, Some(id))
    }

    pub(crate) fn bindings(&self) -> Vec<(ParamId, usize)> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool, param: Option<ParamId>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let needs = self.needs(inputs);
        self.push(value, op, needs, None)
    }

    /// Reverse pass from a single-element loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut order = Vec::new();
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            order.push(id);
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, order })
    }
}

fn slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| nodes[i].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].value.rows(), nodes[*a].value.cols());
            let n = nodes[*b].value.cols();
            if let Some(da) = slot(nodes, grads, *a) {
                gemm(m, n, k, g, false, val(*b), true, da, true);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                gemm(k, m, n, val(*a), true, g, false, db, true);
            }
        }
        Op::Add(a, b) => {
            for i in [*a, *b] {
                if let Some(d) = slot(nodes, grads, i) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = slot(nodes, grads, *b) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            if let Some(d) = slot(nodes, grads, *a) {
                for ((d, g), y) in d.iter_mut().zip(g).zip(val(*b)) {
                    *d += g * y;
                }
            }
            if let Some(d) = slot(nodes, grads, *b) {
                for ((d, g), x) in d.iter_mut().zip(g).zip(val(*a)) {
                    *d += g * x;
                }
            }
        }
        Op::AddRow(x, b) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = slot(nodes, grads, *b) {
                let c = d.len();
                for (i, gv) in g.iter().enumerate() {
                    d[i % c] += gv;
                }
            }
        }
        Op::Scale(x, s) => {
            let sv = val(*s)[0];
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g * sv);
            }
            if let Some(d) = slot(nodes, grads, *s) {
                d[0] += g.iter().zip(val(*x)).map(|(g, x)| g * x).sum::<f64>();
            }
        }
        Op::Affine(x, alpha) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += alpha * g);
            }
        }
        Op::MulConst(x, mask) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, g), m) in d.iter_mut().zip(g).zip(mask.iter()) {
                    *d += g * m;
                }
            }
        }
        Op::AddConst(x) | Op::Reshape(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
        Op::Sigmoid(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += g * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += g * (1.0 - y * y);
                }
            }
        }
        Op::Relu(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }
        }
        Op::SoftmaxRows(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                let cols = out.cols();
                let y = out.data();
                for r in 0..out.rows() {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f64 = g[span.clone()]
                        .iter()
                        .zip(&y[span.clone()])
                        .map(|(g, y)| g * y)
                        .sum();
                    for i in span {
                        d[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        }
        Op::Transpose(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                let (r, c) = (out.rows(), out.cols());
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        Op::TopK(x, index) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for (gv, &src) in g.iter().zip(index) {
                    d[src] += gv;
                }
            }
        }
        Op::Conv1d {
            x,
            kernel,
            bias,
            pad,
            cols,
        } => {
            let kshape = nodes[*kernel].value.shape();
            let (k, d_in, d_out) = (kshape[0], kshape[1], kshape[2]);
            let len = nodes[*x].value.rows();
            let out_len = out.rows();
            let width = k * d_in;
            if let Some(dw) = slot(nodes, grads, *kernel) {
                gemm(width, out_len, d_out, cols, true, g, false, dw, true);
            }
            if let Some(dx) = slot(nodes, grads, *x) {
                let mut dcols = vec![0.0; out_len * width];
                gemm(out_len, d_out, width, g, false, val(*kernel), true, &mut dcols, false);
                col2im(&dcols, len, d_in, k, *pad, dx);
            }
            if let Some(b) = bias {
                if let Some(db) = slot(nodes, grads, *b) {
                    for (i, gv) in g.iter().enumerate() {
                        db[i % d_out] += gv;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p].value.cols();
                if let Some(d) = slot(nodes, grads, p) {
                    for r in 0..rows {
                        for j in 0..c {
                            d[r * c + j] += g[r * total + offset + j];
                        }
                    }
                }
                offset += c;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                if let Some(d) = slot(nodes, grads, p) {
                    d.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(d, g)| *d += g);
                }
                offset += n;
            }
        }
        Op::SliceCols(x, start) => {
            if let Some(d) = slot(nodes, grads, *x) {
                let src_cols = nodes[*x].value.cols();
                let c = out.cols();
                for r in 0..out.rows() {
                    for j in 0..c {
                        d[r * src_cols + start + j] += g[r * c + j];
                    }
                }
            }
        }
        Op::SelectRows(x, rows) => {
            if let Some(d) = slot(nodes, grads, *x) {
                let c = out.cols();
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += g[i * c + j];
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::CrossEntropy {
            logits,
            gold,
            probs,
        } => {
            if let Some(d) = slot(nodes, grads, *logits) {
                let batch = gold.len();
                let c = probs.len() / batch;
                let scale = g[0] / batch as f64;
                for (b, &y) in gold.iter().enumerate() {
                    for j in 0..c {
                        let target = if j == y { 1.0 } else { 0.0 };
                        d[b * c + j] += scale * (probs[b * c + j] - target);
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.data().to_vec()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let data = x.data().iter().map(|&v| f(v)).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.tape.record(value, op, &[self.id])
    }

    fn zip_with(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(dim_err(name, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.tape.record(value, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(&other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(&other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(&other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    /// `alpha·x + beta` with constant coefficients.
    pub fn affine(&self, alpha: f64, beta: f64) -> Var<'t> {
        self.unary(Op::Affine(self.id, alpha), |v| alpha * v + beta)
    }

    /// Elementwise product with a constant (dropout masks, padding masks).
    pub fn mul_const(&self, mask: &Tensor) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.len() != mask.len() {
                return Err(dim_err("mul_const", x.shape(), mask.shape()));
            }
            let data = x.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let mask = Arc::new(mask.data().to_vec());
        Ok(self.tape.record(value, Op::MulConst(self.id, mask), &[self.id]))
    }

    pub fn add_const(&self, offset: &Tensor) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.len() != offset.len() {
                return Err(dim_err("add_const", x.shape(), offset.shape()));
            }
            let data = x.data().iter().zip(offset.data()).map(|(a, b)| a + b).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.tape.record(value, Op::AddConst(self.id), &[self.id]))
    }

    /// Adds a length-`c` bias to every row of an `r×c` matrix.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let (_, c) = require_matrix("add_row", x)?;
            if b.len() != c {
                return Err(dim_err("add_row", x.shape(), b.shape()));
            }
            let bd = b.data();
            let data = x.data().iter().enumerate().map(|(i, v)| v + bd[i % c]).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self
            .tape
            .record(value, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    /// Multiplies by a single-element var.
    pub fn scale(&self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&s);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, sv) = (&nodes[self.id].value, &nodes[s.id].value);
            if sv.len() != 1 {
                return Err(dim_err("scale", x.shape(), sv.shape()));
            }
            let f = sv.data()[0];
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * f).collect())?
        };
        Ok(self.tape.record(value, Op::Scale(self.id, s.id), &[self.id, s.id]))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (m, k) = require_matrix("matmul", a).map_err(|_| dim_err("matmul", a.shape(), b.shape()))?;
            let (k2, n) = require_matrix("matmul", b).map_err(|_| dim_err("matmul", a.shape(), b.shape()))?;
            if k != k2 {
                return Err(dim_err("matmul", a.shape(), b.shape()));
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
            Tensor::matrix(m, n, c)?
        };
        Ok(self
            .tape
            .record(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = require_matrix("transpose", x)?;
            let d = x.data();
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = d[i * c + j];
                }
            }
            Tensor::matrix(c, r, t)?
        };
        Ok(self.tape.record(value, Op::Transpose(self.id), &[self.id]))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (_, c) = require_matrix("softmax_rows", x)?;
            let mut data = x.data().to_vec();
            data.chunks_mut(c).for_each(softmax_in_place);
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.tape.record(value, Op::SoftmaxRows(self.id), &[self.id]))
    }

    /// k-max pooling over rows of an `N×d` matrix; output has `k·d` entries,
    /// all `k` values of feature 0 first, then feature 1, and so on.
    pub fn topk_pool(&self, k: usize) -> Result<Var<'t>> {
        let (value, index) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (n, d) = require_matrix("topk_pool", x)?;
            if k == 0 || k > n {
                return Err(Error::Argument(format!(
                    "topk_pool: k = {k} must be in 1..={n}"
                )));
            }
            let index = topk_columns(x.data(), n, d, k);
            let data = index.iter().map(|&i| x.data()[i]).collect();
            (Tensor::vector(data)?, index)
        };
        Ok(self.tape.record(value, Op::TopK(self.id, index), &[self.id]))
    }

    /// 1-D convolution over rows. `kernel` is `[k, d_in, d_out]`; the input is
    /// zero-padded by `pad` rows on both ends, giving `N + 2·pad − k + 1`
    /// output rows.
    pub fn conv1d(&self, kernel: Var<'t>, bias: Option<Var<'t>>, pad: usize) -> Result<Var<'t>> {
        self.same_tape(&kernel);
        let (value, cols) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let w = &nodes[kernel.id].value;
            let (len, d_in) = require_matrix("conv1d", x)?;
            let [k, kd_in, d_out] = *w.shape() else {
                return Err(dim_err("conv1d", x.shape(), w.shape()));
            };
            if kd_in != d_in {
                return Err(dim_err("conv1d", x.shape(), w.shape()));
            }
            if k > len + 2 * pad {
                return Err(Error::Window {
                    op: "conv1d",
                    window: k,
                    length: len + 2 * pad,
                });
            }
            if let Some(b) = bias {
                let bv = &nodes[b.id].value;
                if bv.len() != d_out {
                    return Err(dim_err("conv1d bias", w.shape(), bv.shape()));
                }
            }
            let out_len = len + 2 * pad + 1 - k;
            let cols = im2col(x.data(), len, d_in, k, pad);
            let mut out = vec![0.0; out_len * d_out];
            gemm(out_len, k * d_in, d_out, &cols, false, w.data(), false, &mut out, false);
            if let Some(b) = bias {
                let bd = nodes[b.id].value.data();
                for row in out.chunks_mut(d_out) {
                    row.iter_mut().zip(bd).for_each(|(o, b)| *o += b);
                }
            }
            (Tensor::matrix(out_len, d_out, out)?, cols)
        };
        let mut inputs = vec![self.id, kernel.id];
        inputs.extend(bias.map(|b| b.id));
        let op = Op::Conv1d {
            x: self.id,
            kernel: kernel.id,
            bias: bias.map(|b| b.id),
            pad,
            cols,
        };
        Ok(self.tape.record(value, op, &inputs))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[first.id].value.rows();
            let mut total = 0;
            for p in parts {
                first.same_tape(p);
                let v = &nodes[p.id].value;
                let (r, c) = require_matrix("concat_cols", v)?;
                if r != rows {
                    return Err(dim_err("concat_cols", nodes[first.id].value.shape(), v.shape()));
                }
                total += c;
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.record(value, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let cols = nodes[first.id].value.cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                first.same_tape(p);
                let v = &nodes[p.id].value;
                let (r, c) = require_matrix("concat_rows", v)?;
                if c != cols {
                    return Err(dim_err("concat_rows", nodes[first.id].value.shape(), v.shape()));
                }
                rows += r;
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.record(value, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Concatenates vectors (any shape, flattened) into one vector.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let rows: Vec<Var<'t>> = parts
            .iter()
            .map(|p| {
                let n = p.value().len();
                p.reshape([1, n])
            })
            .collect::<Result<_>>()?;
        let joined = Var::concat_cols(&rows)?;
        let n = joined.value().len();
        joined.reshape([n])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = require_matrix("slice_cols", x)?;
            if start >= end || end > c {
                return Err(Error::Argument(format!(
                    "slice_cols {start}..{end} out of range for {c} columns"
                )));
            }
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&x.row(i)[start..end]);
            }
            Tensor::matrix(r, end - start, data)?
        };
        Ok(self
            .tape
            .record(value, Op::SliceCols(self.id, start), &[self.id]))
    }

    /// Gathers rows by index (repeats allowed); doubles as embedding lookup.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (n, c) = require_matrix("select_rows", x)?;
            if rows.is_empty() {
                return Err(Error::Argument("select_rows with no rows".into()));
            }
            if let Some(bad) = rows.iter().find(|&&r| r >= n) {
                return Err(Error::Argument(format!(
                    "select_rows: row {bad} out of range for {n} rows"
                )));
            }
            let mut data = Vec::with_capacity(rows.len() * c);
            for &r in rows {
                data.extend_from_slice(x.row(r));
            }
            Tensor::matrix(rows.len(), c, data)?
        };
        Ok(self
            .tape
            .record(value, Op::SelectRows(self.id, rows.to_vec()), &[self.id]))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.tape.nodes.borrow()[self.id].value.reshape(shape)?;
        Ok(self.tape.record(value, Op::Reshape(self.id), &[self.id]))
    }

    pub fn sum(&self) -> Var<'t> {
        let total: f64 = self.tape.nodes.borrow()[self.id].value.data().iter().sum();
        self.tape
            .record(Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    /// Mean over the batch of `−log softmax(logits)[gold]`.
    pub fn cross_entropy(&self, gold: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (b, c) = require_matrix("cross_entropy", x)?;
            if gold.len() != b {
                return Err(dim_err("cross_entropy", x.shape(), &[gold.len()]));
            }
            if let Some(bad) = gold.iter().find(|&&g| g >= c) {
                return Err(Error::Label(format!(
                    "gold index {bad} out of range for {c} classes"
                )));
            }
            let mut probs = x.data().to_vec();
            let mut total = 0.0;
            for (row, (&y, logits)) in probs
                .chunks_mut(c)
                .zip(gold.iter().zip(x.data().chunks(c)))
            {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - logits[y];
                softmax_in_place(row);
            }
            (total / b as f64, probs)
        };
        let op = Op::CrossEntropy {
            logits: self.id,
            gold: gold.to_vec(),
            probs,
        };
        Ok(self.tape.record(Tensor::scalar(loss), op, &[self.id]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_trivial_cases() {
        let tape = Tape::new();
        let eye = tape.constant(m(2, 2, &[1., 0., 0., 1.]));
        let col = tape.constant(m(2, 1, &[3., 4.]));
        assert_eq!(eye.matmul(col).unwrap().to_vec(), vec![3., 4.]);
        let row = tape.constant(m(1, 2, &[1., 2.]));
        assert_eq!(row.matmul(col).unwrap().to_vec(), vec![11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv1d_pointwise_and_window_sums() {
        let tape = Tape::new();
        let x = tape.constant(m(3, 1, &[1., 2., 3.]));
        let k = tape.constant(Tensor::new([1, 1, 1], vec![2.]).unwrap());
        assert_eq!(x.conv1d(k, None, 0).unwrap().to_vec(), vec![2., 4., 6.]);

        let ones = tape.constant(m(3, 1, &[1., 1., 1.]));
        let k3 = tape.constant(Tensor::full([3, 1, 1], 1.0));
        assert_eq!(ones.conv1d(k3, None, 1).unwrap().to_vec(), vec![2., 3., 2.]);
    }

    #[test]
    fn conv1d_window_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 1]));
        let k = tape.constant(Tensor::zeros([5, 1, 1]));
        assert!(matches!(x.conv1d(k, None, 1), Err(Error::Window { .. })));
    }

    #[test]
    fn softmax_rows_cases() {
        let tape = Tape::new();
        let s = tape.constant(m(1, 2, &[0., 0.])).softmax_rows().unwrap();
        assert_eq!(s.to_vec(), vec![0.5, 0.5]);
        let s = tape.constant(m(1, 2, &[1000., 1000.])).softmax_rows().unwrap();
        assert_eq!(s.to_vec(), vec![0.5, 0.5]);
        let s = tape
            .constant(m(1, 2, &[0., 3f64.ln()]))
            .softmax_rows()
            .unwrap()
            .to_vec();
        assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn topk_pool_cases() {
        let tape = Tape::new();
        let x = tape.constant(m(3, 1, &[1., 3., 2.]));
        assert_eq!(x.topk_pool(2).unwrap().to_vec(), vec![3., 2.]);
        let x = tape.constant(m(3, 2, &[1., 9., 4., 8., 2., 7.]));
        assert_eq!(x.topk_pool(2).unwrap().to_vec(), vec![4., 2., 9., 8.]);
        assert_eq!(x.topk_pool(3).unwrap().to_vec(), vec![4., 2., 1., 9., 8., 7.]);
        assert!(matches!(x.topk_pool(4), Err(Error::Argument(_))));
    }

    #[test]
    fn elementwise_cases() {
        let tape = Tape::new();
        assert_eq!(tape.constant(Tensor::scalar(0.0)).sigmoid().to_vec(), vec![0.5]);
        let x = tape.constant(Tensor::vector(vec![-2., 3.]).unwrap());
        assert_eq!(x.relu().to_vec(), vec![0., 3.]);
        let y = tape.constant(Tensor::vector(vec![1., 2., 3.]).unwrap());
        assert!(matches!(x.add(y), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_cases() {
        let tape = Tape::new();
        let l = tape.constant(m(1, 2, &[0., 0.])).cross_entropy(&[0]).unwrap();
        assert!((l.to_vec()[0] - 2f64.ln()).abs() < 1e-15);
        let l = tape.constant(m(1, 2, &[10., -10.])).cross_entropy(&[0]).unwrap();
        assert!(l.to_vec()[0] < 1e-4);
        let bad = tape.constant(m(1, 2, &[0., 0.])).cross_entropy(&[2]);
        assert!(matches!(bad, Err(Error::Label(_))));
    }

    #[test]
    fn backward_trivial_cases() {
        let tape = Tape::new();
        let x = tape.leaf(m(2, 3, &[1., -2., 3., 0.5, 0., -1.]));
        let s = x.sum();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0; 6]);

        let tape = Tape::new();
        let x = tape.leaf(m(2, 3, &[1., -2., 3., 0.5, 0., -1.]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        let want: Vec<f64> = x.to_vec().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.wrt(x).unwrap(), want.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_visits_in_reverse_order_once() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -0.2]).unwrap());
        let a = x.tanh();
        let b = a.mul(x).unwrap();
        let c = b.add(a).unwrap();
        let loss = c.sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.visit_order(), &[loss.id(), c.id(), b.id(), a.id()]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let k = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let loss = x.mul(k).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(k).is_none());
        assert_eq!(g.wrt(x).unwrap(), &[3.0, 4.0]);
    }
}
