//! Tape-based reverse-mode automatic differentiation over [`Mat`].

#![allow(clippy::needless_range_loop)]

use std::cell::RefCell;
use std::rc::Rc;

use super::mat::gemm;
use super::{Mat, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph<'g>,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Gelu(usize),
    Sigmoid(usize),
    Relu(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Mat, rstd: Vec<f64> },
    Attention { q: usize, k: usize, v: usize, heads: usize, probs: Vec<Mat> },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
    Transpose(usize),
    GatherRows(usize, Rc<[usize]>),
    RowL2Normalize { x: usize, norms: Vec<f64> },
    LogSoftmaxRows(usize),
    Sum(usize),
    BceWithLogits { logits: usize, targets: Mat },
}

struct Node {
    value: Rc<Mat>,
    op: Op,
}

/// A single forward computation. Values live as long as the graph.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: RefCell<Vec<Node>>,
}

/// Gradients with respect to each parameter of a store. Entries are `None` for
/// parameters that did not influence the output.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm over all present gradients.
    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Accumulates another gradient set into this one.
    pub fn accumulate(&mut self, other: &Grads) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads { grads: vec![None; store.len()] }
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: RefCell::new(Vec::with_capacity(256)) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Mat, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op });
        Var { id: nodes.len() - 1, graph: self }
    }

    fn val(&self, id: usize) -> Rc<Mat> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A constant input.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn param(&self, id: ParamId) -> Var<'_> {
        self.push(self.params.get(id).clone(), Op::Param(id))
    }

    /// Runs backpropagation from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; output.id + 1];
        grads[output.id] = Some(Mat::scalar(1.0));
        let mut param_grads = Grads::zeros_like(self.params);

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut send = |to: usize, delta: Mat| match &mut grads[to] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            let v = |i: usize| -> &Mat { &nodes[i].value };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => match &mut param_grads.grads[pid.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (v(*a), v(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let mut ga = Mat::zeros(m, k);
                    gemm(m, n, k, 1.0, (g.data(), n as isize, 1), (bv.data(), 1, n as isize), 0.0, ga.data_mut());
                    let mut gb = Mat::zeros(k, n);
                    gemm(k, m, n, 1.0, (av.data(), 1, k as isize), (g.data(), n as isize, 1), 0.0, gb.data_mut());
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.scale(-1.0));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip(&g, v(*b), |x, y| x * y);
                    let gb = zip(&g, v(*a), |x, y| x * y);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::AddRow(a, row) => {
                    send(*row, col_sums(&g));
                    send(*a, g);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (v(*a), v(*row));
                    let mut ga = g.clone();
                    let mut gr = Mat::zeros(1, rv.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, c, g.get(r, c) * rv.get(0, c));
                            gr.data_mut()[c] += g.get(r, c) * av.get(r, c);
                        }
                    }
                    send(*a, ga);
                    send(*row, gr);
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::AddScalar(a) => send(*a, g),
                Op::Gelu(a) => send(*a, zip(&g, v(*a), |gi, x| gi * gelu_grad(x))),
                Op::Sigmoid(a) => send(*a, zip(&g, &node.value, |gi, s| gi * s * (1.0 - s))),
                Op::Relu(a) => send(*a, zip(&g, v(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let gv = v(*gamma);
                    let (rows, cols) = g.shape();
                    let mut gx = Mat::zeros(rows, cols);
                    let mut ggamma = Mat::zeros(1, cols);
                    let mut gbeta = Mat::zeros(1, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let mut sum_dy = 0.0;
                        let mut sum_dy_x = 0.0;
                        for c in 0..cols {
                            let dy = gr[c] * gv.get(0, c);
                            sum_dy += dy;
                            sum_dy_x += dy * xr[c];
                            ggamma.data_mut()[c] += gr[c] * xr[c];
                            gbeta.data_mut()[c] += gr[c];
                        }
                        let n = cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let dy = gr[c] * gv.get(0, c);
                            out[c] = rstd[r] * (dy - sum_dy / n - xr[c] * sum_dy_x / n);
                        }
                    }
                    send(*x, gx);
                    send(*gamma, ggamma);
                    send(*beta, gbeta);
                }
                Op::Attention { q, k, v: vv, heads, probs } => {
                    let (gq, gk, gv) = attention_backward(&g, v(*q), v(*k), v(*vv), *heads, probs);
                    send(*q, gq);
                    send(*k, gk);
                    send(*vv, gv);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = v(p).rows();
                        let cols = g.cols();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        send(p, Mat::from_vec(rows, cols, slice));
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = v(p).cols();
                        let mut part = Mat::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        send(p, part);
                        offset += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = v(*a);
                    let mut ga = Mat::zeros(av.rows(), av.cols());
                    let cols = av.cols();
                    ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    send(*a, ga);
                }
                Op::SliceCols(a, start) => {
                    let av = v(*a);
                    let mut ga = Mat::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    send(*a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = v(*a).shape();
                    send(*a, g.reshaped(r, c));
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::GatherRows(table, idx) => {
                    let tv = v(*table);
                    let mut gt = Mat::zeros(tv.rows(), tv.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, s) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    send(*table, gt);
                }
                Op::RowL2Normalize { x, norms } => {
                    let y = &node.value;
                    let mut gx = Mat::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        let out = gx.row_mut(r);
                        for c in 0..out.len() {
                            out[c] = (g.get(r, c) - y.get(r, c) * dot) / norms[r];
                        }
                    }
                    send(*x, gx);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let s: f64 = g.row(r).iter().sum();
                        let out = ga.row_mut(r);
                        for c in 0..out.len() {
                            out[c] = g.get(r, c) - y.get(r, c).exp() * s;
                        }
                    }
                    send(*a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = v(*a).shape();
                    send(*a, Mat::filled(r, c, g.item()));
                }
                Op::BceWithLogits { logits, targets } => {
                    let lv = v(*logits);
                    let n = lv.len() as f64;
                    let gi = g.item();
                    send(*logits, zip(lv, targets, |z, t| gi * (sigmoid(z) - t) / n));
                }
            }
        }
        param_grads
    }
}

#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Snapshot of the forward value.
    pub fn value(&self) -> Rc<Mat> {
        self.graph.val(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// A constant on the same graph as `self`.
    pub fn graph_constant(&self, value: Mat) -> Var<'g> {
        self.graph.constant(value)
    }

    fn unary(self, value: Mat, op: Op) -> Var<'g> {
        self.graph.push(value, op)
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let out = self.value().matmul(&other.value());
        self.unary(out, Op::MatMul(self.id, other.id))
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let out = zip(&self.value(), &other.value(), |a, b| a + b);
        self.unary(out, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let out = zip(&self.value(), &other.value(), |a, b| a - b);
        self.unary(out, Op::Sub(self.id, other.id))
    }

    /// Elementwise product of equally shaped operands.
    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let out = zip(&self.value(), &other.value(), |a, b| a * b);
        self.unary(out, Op::Mul(self.id, other.id))
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'g>) -> Var<'g> {
        let (a, r) = (self.value(), row.value());
        assert_eq!((1, a.cols()), r.shape(), "add_row shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.unary(out, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a `1 × cols` row.
    pub fn mul_row(self, row: Var<'g>) -> Var<'g> {
        let (a, r) = (self.value(), row.value());
        assert_eq!((1, a.cols()), r.shape(), "mul_row shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *x *= b;
            }
        }
        self.unary(out, Op::MulRow(self.id, row.id))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let out = self.value().scale(s);
        self.unary(out, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        let out = self.value().map(|x| x + s);
        self.unary(out, Op::AddScalar(self.id))
    }

    /// `x · w + b` with `w: in × out` and `b: 1 × out`.
    pub fn linear(self, w: Var<'g>, b: Var<'g>) -> Var<'g> {
        self.matmul(w).add_row(b)
    }

    pub fn gelu(self) -> Var<'g> {
        let out = self.value().map(gelu);
        self.unary(out, Op::Gelu(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let out = self.value().map(sigmoid);
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        let out = self.value().map(|x| x.max(0.0));
        self.unary(out, Op::Relu(self.id))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (`1 × cols`).
    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>) -> Var<'g> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let (rows, cols) = x.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let xr = x.row(r);
            let mean = xr.iter().sum::<f64>() / cols as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            for c in 0..cols {
                let h = (xr[c] - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * gv.get(0, c) + bv.get(0, c));
            }
        }
        self.unary(out, Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd })
    }

    /// Scaled dot-product attention over already projected `q`, `k`, `v`,
    /// split into `heads` column groups. `mask[i * lk + j]` allows query `i` to
    /// attend key `j`; a query with no allowed key yields a zero row.
    pub fn attention(self, k: Var<'g>, v: Var<'g>, heads: usize, mask: Option<&[bool]>) -> Var<'g> {
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let (out, probs) = attention_forward(&qv, &kv, &vv, heads, mask);
        self.unary(out, Op::Attention { q: self.id, k: k.id, v: v.id, heads, probs })
    }

    pub fn concat_rows(parts: &[Var<'g>]) -> Var<'g> {
        let graph = parts[0].graph;
        let values: Vec<Rc<Mat>> = parts.iter().map(Var::value).collect();
        let refs: Vec<&Mat> = values.iter().map(|m| m.as_ref()).collect();
        let out = Mat::stack_rows(&refs);
        graph.push(out, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
    }

    pub fn concat_cols(parts: &[Var<'g>]) -> Var<'g> {
        let graph = parts[0].graph;
        let values: Vec<Rc<Mat>> = parts.iter().map(Var::value).collect();
        let rows = values[0].rows();
        let cols: usize = values.iter().map(|m| m.cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for m in &values {
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
                offset += m.cols();
            }
        }
        graph.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        assert!(start + len <= x.rows(), "slice_rows {start}+{len} out of {}", x.rows());
        let cols = x.cols();
        let out = Mat::from_vec(len, cols, x.data()[start * cols..(start + len) * cols].to_vec());
        self.unary(out, Op::SliceRows(self.id, start))
    }

    pub fn row(self, r: usize) -> Var<'g> {
        self.slice_rows(r, 1)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        assert!(start + len <= x.cols());
        let mut out = Mat::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.unary(out, Op::SliceCols(self.id, start))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'g> {
        let out = (*self.value()).clone().reshaped(rows, cols);
        self.unary(out, Op::Reshape(self.id))
    }

    pub fn transpose(self) -> Var<'g> {
        let out = self.value().transpose();
        self.unary(out, Op::Transpose(self.id))
    }

    /// Row lookup, as used by embedding tables.
    pub fn gather_rows(self, indices: &[usize]) -> Var<'g> {
        let t = self.value();
        let mut out = Mat::zeros(indices.len(), t.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.unary(out, Op::GatherRows(self.id, indices.into()))
    }

    pub fn l2_normalize_rows(self) -> Var<'g> {
        let x = self.value();
        let mut out = (*x).clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        self.unary(out, Op::RowL2Normalize { x: self.id, norms })
    }

    pub fn log_softmax_rows(self) -> Var<'g> {
        let x = self.value();
        let mut out = (*x).clone();
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.unary(out, Op::LogSoftmaxRows(self.id))
    }

    pub fn sum(self) -> Var<'g> {
        let out = Mat::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean binary cross-entropy of `self` (logits) against constant targets.
    pub fn bce_with_logits(self, targets: &Mat) -> Var<'g> {
        let z = self.value();
        assert_eq!(z.shape(), targets.shape());
        let total: f64 = z.data().iter().zip(targets.data()).map(|(&z, &t)| softplus(z) - t * z).sum();
        let out = Mat::scalar(total / z.len() as f64);
        self.unary(out, Op::BceWithLogits { logits: self.id, targets: targets.clone() })
    }
}

fn zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Mat::from_vec(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn col_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn attention_forward(q: &Mat, k: &Mat, v: &Mat, heads: usize, mask: Option<&[bool]>) -> (Mat, Vec<Mat>) {
    let (lq, d) = q.shape();
    let lk = k.rows();
    assert_eq!(k.cols(), d);
    assert_eq!(v.shape(), (lk, d));
    assert_eq!(d % heads, 0, "model width {d} not divisible by {heads} heads");
    if let Some(m) = mask {
        assert_eq!(m.len(), lq * lk, "attention mask size");
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros(lq, d);
    let mut probs = Vec::with_capacity(heads);
    let mut scores = Mat::zeros(lq, lk);
    let mut head_out = Mat::zeros(lq, dh);
    for h in 0..heads {
        let off = h * dh;
        gemm(lq, dh, lk, scale, (&q.data()[off..], d as isize, 1), (&k.data()[off..], 1, d as isize), 0.0, scores.data_mut());
        let mut p = scores.clone();
        for i in 0..lq {
            let row = p.row_mut(i);
            let allowed = |j: usize| mask.is_none_or(|m| m[i * lk + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter().enumerate() {
                if allowed(j) && *s > max {
                    max = *s;
                }
            }
            if max == f64::NEG_INFINITY {
                row.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let mut z = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                *s = if allowed(j) { (*s - max).exp() } else { 0.0 };
                z += *s;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        gemm(lq, lk, dh, 1.0, (p.data(), lk as isize, 1), (&v.data()[off..], d as isize, 1), 0.0, head_out.data_mut());
        for i in 0..lq {
            out.row_mut(i)[off..off + dh].copy_from_slice(head_out.row(i));
        }
        probs.push(p);
    }
    (out, probs)
}

fn attention_backward(g: &Mat, q: &Mat, k: &Mat, v: &Mat, heads: usize, probs: &[Mat]) -> (Mat, Mat, Mat) {
    let (lq, d) = q.shape();
    let lk = k.rows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = Mat::zeros(lq, d);
    let mut gk = Mat::zeros(lk, d);
    let mut gv = Mat::zeros(lk, d);
    let mut dp = Mat::zeros(lq, lk);
    let mut tmp_q = Mat::zeros(lq, dh);
    let mut tmp_k = Mat::zeros(lk, dh);
    for (h, p) in probs.iter().enumerate() {
        let off = h * dh;
        // dV_h = P^T dO_h
        gemm(lk, lq, dh, 1.0, (p.data(), 1, lk as isize), (&g.data()[off..], d as isize, 1), 0.0, tmp_k.data_mut());
        for j in 0..lk {
            gv.row_mut(j)[off..off + dh].copy_from_slice(tmp_k.row(j));
        }
        // dP = dO_h V_h^T
        gemm(lq, dh, lk, 1.0, (&g.data()[off..], d as isize, 1), (&v.data()[off..], 1, d as isize), 0.0, dp.data_mut());
        // dS = P * (dP - rowsum(dP * P))
        for i in 0..lq {
            let pr = p.row(i);
            let dr = dp.row_mut(i);
            let s: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for j in 0..lk {
                dr[j] = pr[j] * (dr[j] - s);
            }
        }
        // dQ_h = dS K_h * scale ; dK_h = dS^T Q_h * scale
        gemm(lq, lk, dh, scale, (dp.data(), lk as isize, 1), (&k.data()[off..], d as isize, 1), 0.0, tmp_q.data_mut());
        for i in 0..lq {
            gq.row_mut(i)[off..off + dh].copy_from_slice(tmp_q.row(i));
        }
        gemm(lk, lq, dh, scale, (dp.data(), 1, lk as isize), (&q.data()[off..], d as isize, 1), 0.0, tmp_k.data_mut());
        for j in 0..lk {
            gk.row_mut(j)[off..off + dh].copy_from_slice(tmp_k.row(j));
        }
    }
    (gq, gk, gv)
}
