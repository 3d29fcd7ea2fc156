//! A small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! Forward computations are recorded on a [`Tape`] as they run; every node keeps
//! its value plus whatever it needs for the adjoint. [`Tape::backward`] walks the
//! tape in reverse once and returns gradients for the leaves. Tapes are meant to
//! live for one training step.
//!
//! Tensors have rank 1 or 2. Elementwise binary ops broadcast a size-1 row or
//! column (numpy style, restricted to two dimensions); row-wise ops such as the
//! VSA kernels treat each row of a `[batch, d]` tensor as one hypervector.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::memory::hopfield_attention;
use crate::vsa;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} must have rank 1 or 2 with positive dims"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n]).expect("valid shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)`, with rank-1 tensors read as a single row.
    pub fn dims(&self) -> (usize, usize) {
        dims(&self.shape)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims();
        &self.data[i * c..(i + 1) * c]
    }

    /// First element; meant for scalars.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("rank checked at construction"),
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine(usize, f64),
    MatMul(usize, usize),
    Bilinear { x: usize, w: usize, y: usize, b: usize },
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    SliceCols { x: usize, start: usize },
    Sum(usize),
    Mean(usize),
    CircConv(usize, usize),
    UnitaryProject(usize),
    Involution(usize),
    VtbBind(usize, usize),
    VtbUnbind(usize, usize),
    Hopfield {
        q: usize,
        patterns: Vec<usize>,
        weights: Vec<usize>,
        beta: f64,
        attention: Vec<Vec<f64>>,
    },
    Mse { pred: usize, target: Vec<f64> },
    SoftmaxCrossEntropy { logits: usize, targets: Vec<usize> },
    Bernoulli { s: usize, straight_through: bool },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::Bilinear { .. } => "bilinear",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Concat(_) => "concat",
            Op::SliceCols { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::CircConv(..) => "circ_conv",
            Op::UnitaryProject(_) => "unitary_project",
            Op::Involution(_) => "involution",
            Op::VtbBind(..) => "vtb_bind",
            Op::VtbUnbind(..) => "vtb_unbind",
            Op::Hopfield { .. } => "hopfield",
            Op::Mse { .. } => "mse",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Bernoulli { .. } => "bernoulli",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of one backward pass, indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let rg = self.requires_grad(inputs);
        self.push(value, op, rg)
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(self, v.tape) && v.id < self.len()
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !self.owns(loss) {
            return Err(Error::NotOnTape);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape.clone();
        if shape != [1] && shape != [1, 1] {
            return Err(Error::NotScalar(shape));
        }
        let n = nodes.len();
        let mut buf: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut out: Vec<Option<Tensor>> = vec![None; n];
        buf[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = buf[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out[id] = Some(Tensor {
                    shape: node.value.shape.clone(),
                    data: g,
                });
                continue;
            }
            backprop(&nodes, id, &g, &mut buf)?;
        }
        Ok(Gradients {
            grads: out,
            shapes: nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }
}

fn accumulate(nodes: &[Node], buf: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut buf[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient back down to `(rows, cols)`.
fn reduce_to(g: &[f64], out: (usize, usize), target: (usize, usize)) -> Vec<f64> {
    if out == target {
        return g.to_vec();
    }
    let mut r = vec![0.0; target.0 * target.1];
    for i in 0..out.0 {
        for j in 0..out.1 {
            let ti = if target.0 == 1 { 0 } else { i };
            let tj = if target.1 == 1 { 0 } else { j };
            r[ti * target.1 + tj] += g[i * out.1 + j];
        }
    }
    r
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], buf: &mut [Option<Vec<f64>>]) -> Result<()> {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let out_dims = node.value.dims();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let ga = reduce_to(g, out_dims, val(*a).dims());
            let gb: Vec<f64> = reduce_to(g, out_dims, val(*b).dims())
                .into_iter()
                .map(|v| sign * v)
                .collect();
            accumulate(nodes, buf, *a, ga);
            accumulate(nodes, buf, *b, gb);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (ad, bd) = (av.dims(), bv.dims());
            if ad == bd {
                accumulate(nodes, buf, *a, g.iter().zip(&bv.data).map(|(g, b)| g * b).collect());
                accumulate(nodes, buf, *b, g.iter().zip(&av.data).map(|(g, a)| g * a).collect());
                return Ok(());
            }
            let mut ga_full = vec![0.0; g.len()];
            let mut gb_full = vec![0.0; g.len()];
            for i in 0..out_dims.0 {
                for j in 0..out_dims.1 {
                    let k = i * out_dims.1 + j;
                    ga_full[k] = g[k] * bv.data[bidx(bd, i, j)];
                    gb_full[k] = g[k] * av.data[bidx(ad, i, j)];
                }
            }
            accumulate(nodes, buf, *a, reduce_to(&ga_full, out_dims, ad));
            accumulate(nodes, buf, *b, reduce_to(&gb_full, out_dims, bd));
        }
        Op::Affine(x, scale) => {
            accumulate(nodes, buf, *x, g.iter().map(|v| v * scale).collect());
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims();
            let n = bv.dims().1;
            // dA = G Bᵀ, dB = Aᵀ G
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, (n as isize, 1), &bv.data, (1, n as isize), &mut ga);
                accumulate(nodes, buf, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, &av.data, (1, k as isize), g, (n as isize, 1), &mut gb);
                accumulate(nodes, buf, *b, gb);
            }
        }
        Op::Bilinear { x, w, y, b } => {
            let (xv, wv, yv) = (val(*x), val(*w), val(*y));
            let (rows, h1) = xv.dims();
            let h2 = yv.dims().1;
            // yWᵀ and xW, each [rows, ·]
            let mut ywt = vec![0.0; rows * h1];
            gemm(rows, h2, h1, &yv.data, (h2 as isize, 1), &wv.data, (1, h2 as isize), &mut ywt);
            let mut xw = vec![0.0; rows * h2];
            gemm(rows, h1, h2, &xv.data, (h1 as isize, 1), &wv.data, (h2 as isize, 1), &mut xw);
            let mut gx = vec![0.0; rows * h1];
            let mut gy = vec![0.0; rows * h2];
            let mut gw = vec![0.0; h1 * h2];
            for r in 0..rows {
                let gr = g[r];
                for i in 0..h1 {
                    gx[r * h1 + i] = gr * ywt[r * h1 + i];
                    let gxr = gr * xv.data[r * h1 + i];
                    if gxr != 0.0 {
                        for j in 0..h2 {
                            gw[i * h2 + j] += gxr * yv.data[r * h2 + j];
                        }
                    }
                }
                for j in 0..h2 {
                    gy[r * h2 + j] = gr * xw[r * h2 + j];
                }
            }
            accumulate(nodes, buf, *x, gx);
            accumulate(nodes, buf, *y, gy);
            accumulate(nodes, buf, *w, gw);
            accumulate(nodes, buf, *b, vec![g.iter().sum()]);
        }
        Op::Sigmoid(x) => {
            let s = &node.value.data;
            accumulate(nodes, buf, *x, g.iter().zip(s).map(|(g, s)| g * s * (1.0 - s)).collect());
        }
        Op::Tanh(x) => {
            let t = &node.value.data;
            accumulate(nodes, buf, *x, g.iter().zip(t).map(|(g, t)| g * (1.0 - t * t)).collect());
        }
        Op::Softmax(x) => {
            let s = &node.value.data;
            let (rows, cols) = out_dims;
            let mut gx = vec![0.0; g.len()];
            for r in 0..rows {
                let sl = r * cols..(r + 1) * cols;
                let inner = vsa::dot(&g[sl.clone()], &s[sl.clone()]);
                for k in sl {
                    gx[k] = s[k] * (g[k] - inner);
                }
            }
            accumulate(nodes, buf, *x, gx);
        }
        Op::Concat(parts) => {
            let (rows, cols) = out_dims;
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).dims().1;
                let mut gp = Vec::with_capacity(rows * pc);
                for r in 0..rows {
                    gp.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                }
                accumulate(nodes, buf, p, gp);
                offset += pc;
            }
        }
        Op::SliceCols { x, start } => {
            let (rows, cols) = val(*x).dims();
            let w = out_dims.1;
            let mut gx = vec![0.0; rows * cols];
            for r in 0..rows {
                gx[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            accumulate(nodes, buf, *x, gx);
        }
        Op::Sum(x) => {
            accumulate(nodes, buf, *x, vec![g[0]; val(*x).len()]);
        }
        Op::Mean(x) => {
            let n = val(*x).len();
            accumulate(nodes, buf, *x, vec![g[0] / n as f64; n]);
        }
        Op::CircConv(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (rows, d) = out_dims;
            let mut ga = vec![0.0; rows * d];
            let mut gb = vec![0.0; rows * d];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let ar = av.row(if av.dims().0 == 1 { 0 } else { r });
                let br = bv.row(if bv.dims().0 == 1 { 0 } else { r });
                ga[r * d..(r + 1) * d].copy_from_slice(&vsa::circular_correlation(gr, br));
                gb[r * d..(r + 1) * d].copy_from_slice(&vsa::circular_correlation(gr, ar));
            }
            if nodes[*a].requires_grad {
                accumulate(nodes, buf, *a, reduce_to(&ga, out_dims, av.dims()));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, buf, *b, reduce_to(&gb, out_dims, bv.dims()));
            }
        }
        Op::UnitaryProject(x) => {
            let xv = val(*x);
            let (rows, d) = out_dims;
            let mut gx = Vec::with_capacity(rows * d);
            for r in 0..rows {
                gx.extend(vsa::unitary_projection_adjoint(xv.row(r), &g[r * d..(r + 1) * d])?);
            }
            accumulate(nodes, buf, *x, gx);
        }
        Op::Involution(x) => {
            let (rows, d) = out_dims;
            let mut gx = Vec::with_capacity(rows * d);
            for r in 0..rows {
                gx.extend(vsa::involution(&g[r * d..(r + 1) * d]));
            }
            accumulate(nodes, buf, *x, gx);
        }
        Op::VtbBind(x, y) | Op::VtbUnbind(x, y) => {
            let bind = matches!(node.op, Op::VtbBind(..));
            let (xv, yv) = (val(*x), val(*y));
            let (rows, d) = out_dims;
            let side = vsa::vtb_side(d)?;
            let mut gx = vec![0.0; rows * d];
            let mut gy = vec![0.0; rows * d];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let xr = xv.row(if xv.dims().0 == 1 { 0 } else { r });
                let yr = yv.row(if yv.dims().0 == 1 { 0 } else { r });
                let (dx, dy) = if bind {
                    (vsa::vtb_unbind(gr, yr, side), vsa::vtb_bind_grad_y(xr, gr, side))
                } else {
                    (vsa::vtb_bind(gr, yr, side), vsa::vtb_unbind_grad_y(xr, gr, side))
                };
                gx[r * d..(r + 1) * d].copy_from_slice(&dx);
                gy[r * d..(r + 1) * d].copy_from_slice(&dy);
            }
            accumulate(nodes, buf, *x, reduce_to(&gx, out_dims, xv.dims()));
            accumulate(nodes, buf, *y, reduce_to(&gy, out_dims, yv.dims()));
        }
        Op::Hopfield {
            q,
            patterns,
            weights,
            beta,
            attention,
        } => {
            let (rows, d) = out_dims;
            let qv = val(*q);
            let n = patterns.len();
            let mut gq = vec![0.0; rows * d];
            let mut gp = vec![vec![0.0; rows * d]; n];
            let mut gw = vec![vec![0.0; rows]; n];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let a = &attention[r];
                let dots: Vec<f64> = patterns.iter().map(|&p| vsa::dot(gr, val(p).row(r))).collect();
                let mean: f64 = a.iter().zip(&dots).map(|(a, s)| a * s).sum();
                for i in 0..n {
                    if a[i] == 0.0 {
                        continue;
                    }
                    let e = a[i] * (dots[i] - mean);
                    let pr = val(patterns[i]).row(r);
                    let qr = qv.row(r);
                    for k in 0..d {
                        gp[i][r * d + k] += a[i] * gr[k] + e * beta * qr[k];
                        gq[r * d + k] += e * beta * pr[k];
                    }
                    gw[i][r] = e / val(weights[i]).data[r];
                }
            }
            accumulate(nodes, buf, *q, gq);
            for (i, (gp, gw)) in gp.into_iter().zip(gw).enumerate() {
                accumulate(nodes, buf, patterns[i], gp);
                accumulate(nodes, buf, weights[i], gw);
            }
        }
        Op::Mse { pred, target } => {
            let pv = val(*pred);
            let n = pv.len() as f64;
            let gp = pv
                .data
                .iter()
                .zip(target)
                .map(|(p, t)| g[0] * 2.0 * (p - t) / n)
                .collect();
            accumulate(nodes, buf, *pred, gp);
        }
        Op::SoftmaxCrossEntropy { logits, targets } => {
            let lv = val(*logits);
            let (rows, cols) = lv.dims();
            let mut gl = vec![0.0; rows * cols];
            for r in 0..rows {
                let sm = softmax_row(lv.row(r));
                for (k, s) in sm.iter().enumerate() {
                    let onehot = if k == targets[r] { 1.0 } else { 0.0 };
                    gl[r * cols + k] = g[0] * (s - onehot) / rows as f64;
                }
            }
            accumulate(nodes, buf, *logits, gl);
        }
        Op::Bernoulli { s, straight_through } => {
            if !nodes[*s].requires_grad {
                return Ok(());
            }
            if !*straight_through {
                return Err(Error::NonDifferentiable(node.op.name()));
            }
            accumulate(nodes, buf, *s, g.to_vec());
        }
    }
    Ok(())
}

fn bidx(d: (usize, usize), i: usize, j: usize) -> usize {
    let r = if d.0 == 1 { 0 } else { i };
    let c = if d.1 == 1 { 0 } else { j };
    r * d.1 + c
}

fn broadcast_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, (usize, usize))> {
    let (ad, bd) = (dims(a), dims(b));
    let pick = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (pick(ad.0, bd.0), pick(ad.1, bd.1)) {
        (Some(r), Some(c)) => {
            let shape = if (r, c) == ad {
                a.to_vec()
            } else if (r, c) == bd {
                b.to_vec()
            } else {
                vec![r, c]
            };
            Ok((shape, (r, c)))
        }
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

/// `c += A·B` for an `m x k` by `k x n` product with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: strides describe in-bounds views of `a` (m x k), `b` (k x n) and
    // the row-major `c` (m x n); the asserts above and in callers pin the sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(x: &[f64], k: usize) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x[k] - lse
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
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
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dims()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data[0]
    }

    fn same_tape(&self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::NotOnTape)
        }
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn elementwise(self, other: Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, [usize; 2])> {
        self.same_tape(other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let (shape, (r, c)) = broadcast_dims(op, &a.shape, &b.shape)?;
        if a.shape == b.shape {
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            return Ok((Tensor { shape, data }, [self.id, other.id]));
        }
        let (ad, bd) = (a.dims(), b.dims());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(f(a.data[bidx(ad, i, j)], b.data[bidx(bd, i, j)]));
            }
        }
        Ok((Tensor { shape, data }, [self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (t, ids) = self.elementwise(other, "add", |a, b| a + b)?;
        Ok(self.tape.record(t, Op::Add(ids[0], ids[1]), &ids))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (t, ids) = self.elementwise(other, "sub", |a, b| a - b)?;
        Ok(self.tape.record(t, Op::Sub(ids[0], ids[1]), &ids))
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (t, ids) = self.elementwise(other, "mul", |a, b| a * b)?;
        Ok(self.tape.record(t, Op::Mul(ids[0], ids[1]), &ids))
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let t = self.with_value(|x| Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|v| scale * v + shift).collect(),
        });
        self.tape.record(t, Op::Affine(self.id, scale), &[self.id])
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(self) -> Var<'t> {
        self.affine(-1.0, 1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let t = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let ((m, k), (k2, n)) = (a.dims(), b.dims());
            if k != k2 || b.shape.len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a.data, (k as isize, 1), &b.data, (n as isize, 1), &mut c);
            Tensor {
                shape: vec![m, n],
                data: c,
            }
        };
        Ok(self.tape.record(t, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// Row-wise `xᵢᵀ W yᵢ + b`, shape `[rows, 1]`; `b` must be a scalar.
    pub fn bilinear(self, w: Var<'t>, y: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(w)?;
        self.same_tape(y)?;
        self.same_tape(b)?;
        let t = {
            let nodes = self.tape.nodes.borrow();
            let (xv, wv, yv, bv) = (
                &nodes[self.id].value,
                &nodes[w.id].value,
                &nodes[y.id].value,
                &nodes[b.id].value,
            );
            let (rows, h1) = xv.dims();
            let (rows_y, h2) = yv.dims();
            if wv.shape != [h1, h2] || rows != rows_y {
                return Err(Error::ShapeMismatch {
                    op: "bilinear",
                    lhs: xv.shape.clone(),
                    rhs: yv.shape.clone(),
                });
            }
            if bv.len() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "bilinear",
                    lhs: vec![1],
                    rhs: bv.shape.clone(),
                });
            }
            let mut xw = vec![0.0; rows * h2];
            gemm(rows, h1, h2, &xv.data, (h1 as isize, 1), &wv.data, (h2 as isize, 1), &mut xw);
            let data = (0..rows)
                .map(|r| vsa::dot(&xw[r * h2..(r + 1) * h2], yv.row(r)) + bv.data[0])
                .collect();
            Tensor {
                shape: vec![rows, 1],
                data,
            }
        };
        let ids = [self.id, w.id, y.id, b.id];
        Ok(self.tape.record(
            t,
            Op::Bilinear {
                x: self.id,
                w: w.id,
                y: y.id,
                b: b.id,
            },
            &ids,
        ))
    }

    fn map(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let t = self.with_value(|x| Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        });
        self.tape.record(t, op, &[self.id])
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.map(Op::Tanh(self.id), f64::tanh)
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Var<'t> {
        let t = self.with_value(|x| {
            let (rows, _) = x.dims();
            let mut data = Vec::with_capacity(x.len());
            for r in 0..rows {
                data.extend(softmax_row(x.row(r)));
            }
            Tensor {
                shape: x.shape.clone(),
                data,
            }
        });
        self.tape.record(t, Op::Softmax(self.id), &[self.id])
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let t = self.with_value(|x| {
            let (rows, cols) = x.dims();
            if len == 0 || start + len > cols {
                return Err(Error::ShapeMismatch {
                    op: "slice",
                    lhs: x.shape.clone(),
                    rhs: vec![start, len],
                });
            }
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&x.row(r)[start..start + len]);
            }
            let shape = if x.shape.len() == 1 { vec![len] } else { vec![rows, len] };
            Ok(Tensor { shape, data })
        })?;
        Ok(self.tape.record(t, Op::SliceCols { x: self.id, start }, &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        let t = self.with_value(|x| Tensor::scalar(x.data.iter().sum()));
        self.tape.record(t, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let t = self.with_value(|x| Tensor::scalar(x.data.iter().sum::<f64>() / x.len() as f64));
        self.tape.record(t, Op::Mean(self.id), &[self.id])
    }

    fn rowwise_pair(
        self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    ) -> Result<Tensor> {
        self.same_tape(other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let ((ra, da), (rb, db)) = (a.dims(), b.dims());
        let rows = match (ra, rb) {
            _ if ra == rb => ra,
            (1, _) => rb,
            (_, 1) => ra,
            _ => 0,
        };
        if da != db || rows == 0 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(rows * da);
        for r in 0..rows {
            data.extend(f(a.row(if ra == 1 { 0 } else { r }), b.row(if rb == 1 { 0 } else { r })));
        }
        let shape = if rows == ra { a.shape.clone() } else { b.shape.clone() };
        Ok(Tensor { shape, data })
    }

    /// Row-wise circular convolution; either side may be a single broadcast row.
    pub fn circ_conv(self, other: Var<'t>) -> Result<Var<'t>> {
        let t = self.rowwise_pair(other, "circ_conv", vsa::circular_convolution)?;
        Ok(self.tape.record(t, Op::CircConv(self.id, other.id), &[self.id, other.id]))
    }

    /// Row-wise unit-magnitude spectral projection.
    pub fn unitary_project(self) -> Result<Var<'t>> {
        let t = self.with_value(|x| -> Result<Tensor> {
            let (rows, _) = x.dims();
            let mut data = Vec::with_capacity(x.len());
            for r in 0..rows {
                data.extend(vsa::unitary_projection(x.row(r))?);
            }
            Ok(Tensor {
                shape: x.shape.clone(),
                data,
            })
        })?;
        Ok(self.tape.record(t, Op::UnitaryProject(self.id), &[self.id]))
    }

    /// Row-wise `j -> -j mod d` reindexing.
    pub fn involution(self) -> Var<'t> {
        let t = self.with_value(|x| {
            let (rows, _) = x.dims();
            let mut data = Vec::with_capacity(x.len());
            for r in 0..rows {
                data.extend(vsa::involution(x.row(r)));
            }
            Tensor {
                shape: x.shape.clone(),
                data,
            }
        });
        self.tape.record(t, Op::Involution(self.id), &[self.id])
    }

    /// HRR pseudo-inverse per row.
    pub fn hrr_pseudo_inverse(self) -> Result<Var<'t>> {
        Ok(self.unitary_project()?.involution())
    }

    /// Row-wise `V_y x` with `self` as `x`.
    pub fn vtb_bind(self, y: Var<'t>) -> Result<Var<'t>> {
        let side = vsa::vtb_side(self.dims().1)?;
        let t = self.rowwise_pair(y, "vtb_bind", |x, y| vsa::vtb_bind(x, y, side))?;
        Ok(self.tape.record(t, Op::VtbBind(self.id, y.id), &[self.id, y.id]))
    }

    /// Row-wise `V_yᵀ s` with `self` as `s`.
    pub fn vtb_unbind(self, y: Var<'t>) -> Result<Var<'t>> {
        let side = vsa::vtb_side(self.dims().1)?;
        let t = self.rowwise_pair(y, "vtb_unbind", |s, y| vsa::vtb_unbind(s, y, side))?;
        Ok(self.tape.record(t, Op::VtbUnbind(self.id, y.id), &[self.id, y.id]))
    }

    /// One modern-Hopfield retrieval step per row.
    ///
    /// `self` is the `[rows, d]` query; `patterns[i]` is `[rows, d]` and
    /// `weights[i]` is `[rows, 1]`. Each row attends with
    /// `softmax(beta <patternᵢ, q> + ln weightᵢ)`; zero-weight patterns are
    /// skipped and an empty store returns zeros.
    pub fn hopfield_retrieve(self, patterns: &[Var<'t>], weights: &[Var<'t>], beta: f64) -> Result<Var<'t>> {
        if patterns.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: patterns.len(),
                got: weights.len(),
            });
        }
        for v in patterns.iter().chain(weights) {
            self.same_tape(*v)?;
        }
        let (t, attention) = {
            let nodes = self.tape.nodes.borrow();
            let q = &nodes[self.id].value;
            let (rows, d) = q.dims();
            for (p, w) in patterns.iter().zip(weights) {
                let (pv, wv) = (&nodes[p.id].value, &nodes[w.id].value);
                if pv.dims() != (rows, d) || wv.len() != rows {
                    return Err(Error::ShapeMismatch {
                        op: "hopfield",
                        lhs: q.shape.clone(),
                        rhs: pv.shape.clone(),
                    });
                }
            }
            let mut data = vec![0.0; rows * d];
            let mut attention = Vec::with_capacity(rows);
            for r in 0..rows {
                let prow: Vec<&[f64]> = patterns.iter().map(|p| nodes[p.id].value.row(r)).collect();
                let wrow: Vec<f64> = weights.iter().map(|w| nodes[w.id].value.data[r]).collect();
                let a = hopfield_attention(q.row(r), &prow, &wrow, beta);
                for (ai, pr) in a.iter().zip(&prow) {
                    for k in 0..d {
                        data[r * d + k] += ai * pr[k];
                    }
                }
                attention.push(a);
            }
            (
                Tensor {
                    shape: q.shape.clone(),
                    data,
                },
                attention,
            )
        };
        let mut ids = vec![self.id];
        ids.extend(patterns.iter().map(|p| p.id));
        ids.extend(weights.iter().map(|w| w.id));
        Ok(self.tape.record(
            t,
            Op::Hopfield {
                q: self.id,
                patterns: patterns.iter().map(|p| p.id).collect(),
                weights: weights.iter().map(|w| w.id).collect(),
                beta,
                attention,
            },
            &ids,
        ))
    }

    /// Mean squared error against a fixed target of the same length.
    pub fn mse(self, target: &[f64]) -> Result<Var<'t>> {
        let t = self.with_value(|p| {
            if p.len() != target.len() {
                return Err(Error::ShapeMismatch {
                    op: "mse",
                    lhs: p.shape.clone(),
                    rhs: vec![target.len()],
                });
            }
            let n = p.len() as f64;
            Ok(Tensor::scalar(
                p.data.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
            ))
        })?;
        Ok(self.tape.record(
            t,
            Op::Mse {
                pred: self.id,
                target: target.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let t = self.with_value(|l| {
            let (rows, cols) = l.dims();
            if rows != targets.len() || targets.iter().any(|&k| k >= cols) {
                return Err(Error::ShapeMismatch {
                    op: "softmax_cross_entropy",
                    lhs: l.shape.clone(),
                    rhs: vec![targets.len()],
                });
            }
            let total: f64 = (0..rows).map(|r| -log_softmax_at(l.row(r), targets[r])).sum();
            Ok(Tensor::scalar(total / rows as f64))
        })?;
        Ok(self.tape.record(
            t,
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Thresholds `s` against caller-drawn uniforms: the sample is
    /// `u < s` elementwise. With `straight_through` the backward pass treats the
    /// sample as `s`; without it, backpropagating through the sample is an error.
    pub fn bernoulli(self, uniforms: &[f64], straight_through: bool) -> Result<Var<'t>> {
        let t = self.with_value(|s| {
            if s.len() != uniforms.len() {
                return Err(Error::ShapeMismatch {
                    op: "bernoulli",
                    lhs: s.shape.clone(),
                    rhs: vec![uniforms.len()],
                });
            }
            if let Some(&bad) = s.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidProbability(bad));
            }
            Ok(Tensor {
                shape: s.shape.clone(),
                data: s
                    .data
                    .iter()
                    .zip(uniforms)
                    .map(|(&p, &u)| if u < p { 1.0 } else { 0.0 })
                    .collect(),
            })
        })?;
        Ok(self.tape.record(
            t,
            Op::Bernoulli {
                s: self.id,
                straight_through,
            },
            &[self.id],
        ))
    }
}

/// Column-wise concatenation of tensors with equal row counts.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = *parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    for p in parts {
        first.same_tape(*p)?;
    }
    let tape = first.tape;
    let t = {
        let nodes = tape.nodes.borrow();
        let rows = nodes[first.id].value.dims().0;
        let mut cols = 0;
        for p in parts {
            let v = &nodes[p.id].value;
            if v.dims().0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: nodes[first.id].value.shape.clone(),
                    rhs: v.shape.clone(),
                });
            }
            cols += v.dims().1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(nodes[p.id].value.row(r));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(tape.record(t, Op::Concat(ids.clone()), &ids))
}

/// Sum of a list of same-shaped values.
pub fn add_all<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let mut iter = parts.iter();
    let mut acc = *iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("sum of zero tensors".into()))?;
    for p in iter {
        acc = acc.add(*p)?;
    }
    Ok(acc)
}

/// Largest relative disagreement between reverse-mode gradients of `f` and
/// central differences with step `eps`, over every input coordinate.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(out.item())
    };

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data[j];
            probe[i].data[j] = orig + eps;
            let up = eval(&probe)?;
            probe[i].data[j] = orig - eps;
            let down = eval(&probe)?;
            probe[i].data[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i].data[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
