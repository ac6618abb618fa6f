//! Tensor-valued reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] in execution order, which is a
//! topological order by construction. [`Tape::backward`] walks the nodes
//! once in reverse. Nodes that do not depend on a trainable leaf are
//! skipped entirely.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?} vs {} values", data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, `c: k×n`.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×n`, `b: k×n`, `c: m×k`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    Recip,
    Softplus,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BroadcastCols(Var),
    GatherCols(Var, Vec<usize>),
    Sum(Var),
    Reshape(Var),
    Conv2d { input: Var, weight: Var, bias: Var, pad: usize },
    MaxPool2(Var, Vec<usize>),
    ChannelAffine { input: Var, scale: Var, shift: Var },
    External(Vec<(Var, Tensor)>),
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

/// Gradients of a scalar root with respect to every node that needs one.
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when no path reached it.
    pub fn get_or_zero(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec)
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn lse_row(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn conv_out(h: usize, k: usize, pad: usize) -> usize {
    h + 2 * pad + 1 - k
}

/// Unrolls one image `[c, h, w]` into columns `[c·k·k, oh·ow]`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, col: &mut [f64]) {
    let (oh, ow) = (conv_out(h, k, pad), conv_out(w, k, pad));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oi in 0..oh {
                    let ii = oi as isize + ki as isize - pad as isize;
                    for oj in 0..ow {
                        let jj = oj as isize + kj as isize - pad as isize;
                        dst[oi * ow + oj] = if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                            x[(ci * h + ii as usize) * w + jj as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_acc(col: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, x: &mut [f64]) {
    let (oh, ow) = (conv_out(h, k, pad), conv_out(w, k, pad));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oi in 0..oh {
                    let ii = oi as isize + ki as isize - pad as isize;
                    if ii < 0 || ii as usize >= h {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = oj as isize + kj as isize - pad as isize;
                        if jj >= 0 && (jj as usize) < w {
                            x[(ci * h + ii as usize) * w + jj as usize] += src[oi * ow + oj];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input; gradients are computed for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "elementwise shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(shape, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `[m, n] + [n]`, the bias row repeated for every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        assert_eq!(self.value(row).len(), n, "bias length");
        let r = &self.value(row).data;
        let data = self.value(a).data.chunks(n).flat_map(|chunk| chunk.iter().zip(r).map(|(x, b)| x + b)).collect();
        let ng = self.ng(a) || self.ng(row);
        self.push(Tensor::matrix(m, n, data), Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|x| x * c).collect());
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|x| x + c).collect());
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let t = self.value(a);
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => |x| 1.0 / (1.0 + (-x).exp()),
            Unary::Relu => |x| x.max(0.0),
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sqrt => f64::sqrt,
            Unary::Square => |x| x * x,
            Unary::Recip => |x| 1.0 / x,
            Unary::Softplus => softplus,
        };
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|&x| f(x)).collect());
        let ng = self.ng(a);
        self.push(out, Op::Unary(a, kind), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    fn rowwise(&mut self, a: Var, op: Op, out_cols: Option<usize>, f: impl Fn(&[f64], &mut [f64])) -> Var {
        let (m, n) = self.value(a).dims2();
        let oc = out_cols.unwrap_or(n);
        let mut out = vec![0.0; m * oc];
        for (x, o) in self.value(a).data.chunks(n).zip(out.chunks_mut(oc)) {
            f(x, o);
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, oc, out), op, ng)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::Softmax(a), None, softmax_row)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::LogSoftmax(a), None, |x, o| {
            let l = lse_row(x);
            for (ov, xv) in o.iter_mut().zip(x) {
                *ov = xv - l;
            }
        })
    }

    /// Row-wise log-sum-exp, `[m, n] → [m, 1]`.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::LogSumExp(a), Some(1), |x, o| o[0] = lse_row(x))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.value(a).dims2();
        assert!(start + len <= n, "column slice out of range");
        let data = self.value(a).data.chunks(n).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, len, data), Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let t = self.value(p);
                assert_eq!(t.shape[0], m, "concat_cols row mismatch");
                data.extend_from_slice(&t.data[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(m, n, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.dims2().1, n, "concat_rows column mismatch");
            m += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(m, n, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// `[m, 1] → [m, n]`.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Var {
        let (m, one) = self.value(a).dims2();
        assert_eq!(one, 1, "broadcast_cols expects a column");
        let data = self.value(a).data.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, n, data), Op::BroadcastCols(a), ng)
    }

    /// Picks `a[i, idx[i]]` for every row, `[m, n] → [m, 1]`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let (m, n) = self.value(a).dims2();
        assert_eq!(idx.len(), m, "one index per row");
        let data = idx.iter().enumerate().map(|(i, &j)| self.value(a).data[i * n + j]).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, 1, data), Op::GatherCols(a, idx.to_vec()), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.value(a);
        let out = Tensor::new(shape, t.data.clone());
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Stride-1 convolution: `[b, c, h, w] * [o, c, k, k] + [o]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, pad: usize) -> Var {
        let xs = self.value(input).shape.clone();
        let ws = self.value(weight).shape.clone();
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv channel mismatch");
        let (oh, ow) = (conv_out(h, k, pad), conv_out(w, k, pad));
        let ckk = c * k * k;
        let mut col = vec![0.0; ckk * oh * ow];
        let mut out = vec![0.0; b * o * oh * ow];
        let x = &self.value(input).data;
        let wt = &self.value(weight).data;
        let bs = &self.value(bias).data;
        for bi in 0..b {
            im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, k, pad, &mut col);
            let dst = &mut out[bi * o * oh * ow..(bi + 1) * o * oh * ow];
            for (oc, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                chunk.fill(bs[oc]);
            }
            matmul_acc(wt, &col, dst, o, ckk, oh * ow);
        }
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        self.push(Tensor::new(vec![b, o, oh, ow], out), Op::Conv2d { input, weight, bias, pad }, ng)
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, a: Var) -> Var {
        let s = self.value(a).shape.clone();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = &self.value(a).data;
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::new(vec![b, c, oh, ow], out), Op::MaxPool2(a, arg), ng)
    }

    /// Per-channel `x · scale[c] + shift[c]` on `[b, c, h, w]`.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Var {
        let s = self.value(input).shape.clone();
        let (c, hw) = (s[1], s[2] * s[3]);
        let (g, be) = (&self.value(scale).data, &self.value(shift).data);
        let data = self.value(input).data.iter().enumerate().map(|(i, &x)| {
            let ch = (i / hw) % c;
            x * g[ch] + be[ch]
        });
        let out = Tensor::new(s.clone(), data.collect());
        let ng = self.ng(input) || self.ng(scale) || self.ng(shift);
        self.push(out, Op::ChannelAffine { input, scale, shift }, ng)
    }

    /// Scalar computed outside the tape, with its gradient with respect to
    /// each input supplied by the caller.
    pub fn external(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.value(*v).len(), g.len(), "external gradient shape");
        }
        let ng = inputs.iter().any(|(v, _)| self.ng(*v));
        self.push(Tensor::scalar(value), Op::External(inputs), ng)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::ShapeMismatch(format!("backward needs a scalar root, got shape {:?}", self.value(root).shape)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                acc(*a, &mut |buf| matmul_a_bt_acc(g, &tb.data, buf, m, n, k));
                acc(*b, &mut |buf| matmul_at_b_acc(&ta.data, g, buf, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += s));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += s));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += s));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += s));
                let n = self.value(*row).len();
                acc(*row, &mut |buf| {
                    for chunk in g.chunks(n) {
                        buf.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += c * s)),
            Op::AddScalar(a) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += s)),
            Op::Unary(a, kind) => {
                let x = &self.value(*a).data;
                let yv = &y.data;
                let kind = *kind;
                acc(*a, &mut |buf| {
                    for i in 0..buf.len() {
                        let d = match kind {
                            Unary::Tanh => 1.0 - yv[i] * yv[i],
                            Unary::Sigmoid => yv[i] * (1.0 - yv[i]),
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => yv[i],
                            Unary::Log => 1.0 / x[i],
                            Unary::Sqrt => 0.5 / yv[i],
                            Unary::Square => 2.0 * x[i],
                            Unary::Recip => -yv[i] * yv[i],
                            Unary::Softplus => 1.0 / (1.0 + (-x[i]).exp()),
                        };
                        buf[i] += g[i] * d;
                    }
                });
            }
            Op::Softmax(a) => {
                let n = y.dims2().1;
                acc(*a, &mut |buf| {
                    for ((b, yr), gr) in buf.chunks_mut(n).zip(y.data.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for i in 0..n {
                            b[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let n = y.dims2().1;
                acc(*a, &mut |buf| {
                    for ((b, yr), gr) in buf.chunks_mut(n).zip(y.data.chunks(n)).zip(g.chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for i in 0..n {
                            b[i] += gr[i] - yr[i].exp() * total;
                        }
                    }
                });
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let n = x.dims2().1;
                acc(*a, &mut |buf| {
                    for (r, (b, xr)) in buf.chunks_mut(n).zip(x.data.chunks(n)).enumerate() {
                        let l = y.data[r];
                        for i in 0..n {
                            b[i] += g[r] * (xr[i] - l).exp();
                        }
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let n = self.value(*a).dims2().1;
                let len = y.dims2().1;
                acc(*a, &mut |buf| {
                    for (b, gr) in buf.chunks_mut(n).zip(g.chunks(len)) {
                        b[*start..start + len].iter_mut().zip(gr).for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = y.dims2().1;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    acc(p, &mut |buf| {
                        for (b, gr) in buf.chunks_mut(w).zip(g.chunks(n)) {
                            b.iter_mut().zip(&gr[off..off + w]).for_each(|(d, s)| *d += s);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |buf| buf.iter_mut().zip(&g[off..off + len]).for_each(|(d, s)| *d += s));
                    off += len;
                }
            }
            Op::BroadcastCols(a) => {
                let n = y.dims2().1;
                acc(*a, &mut |buf| {
                    for (d, gr) in buf.iter_mut().zip(g.chunks(n)) {
                        *d += gr.iter().sum::<f64>();
                    }
                });
            }
            Op::GatherCols(a, idx) => {
                let n = self.value(*a).dims2().1;
                acc(*a, &mut |buf| {
                    for (i, &j) in idx.iter().enumerate() {
                        buf[i * n + j] += g[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0])),
            Op::Reshape(a) => acc(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += s)),
            Op::Conv2d { input, weight, bias, pad } => {
                let xs = &self.value(*input).shape;
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let ws = &self.value(*weight).shape;
                let (o, k) = (ws[0], ws[2]);
                let (oh, ow) = (conv_out(h, k, *pad), conv_out(w, k, *pad));
                let ckk = c * k * k;
                let x = &self.value(*input).data;
                let wt = &self.value(*weight).data;
                acc(*bias, &mut |buf| {
                    for bi in 0..b {
                        for (oc, d) in buf.iter_mut().enumerate() {
                            let s = (bi * o + oc) * oh * ow;
                            *d += g[s..s + oh * ow].iter().sum::<f64>();
                        }
                    }
                });
                let mut col = vec![0.0; ckk * oh * ow];
                acc(*weight, &mut |buf| {
                    for bi in 0..b {
                        im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, k, *pad, &mut col);
                        let gy = &g[bi * o * oh * ow..(bi + 1) * o * oh * ow];
                        matmul_a_bt_acc(gy, &col, buf, o, oh * ow, ckk);
                    }
                });
                acc(*input, &mut |buf| {
                    let mut dcol = vec![0.0; ckk * oh * ow];
                    for bi in 0..b {
                        dcol.fill(0.0);
                        let gy = &g[bi * o * oh * ow..(bi + 1) * o * oh * ow];
                        matmul_at_b_acc(wt, gy, &mut dcol, o, ckk, oh * ow);
                        col2im_acc(&dcol, c, h, w, k, *pad, &mut buf[bi * c * h * w..(bi + 1) * c * h * w]);
                    }
                });
            }
            Op::MaxPool2(a, arg) => acc(*a, &mut |buf| {
                for (gi, &src) in g.iter().zip(arg) {
                    buf[src] += gi;
                }
            }),
            Op::ChannelAffine { input, scale, shift } => {
                let s = &self.value(*input).shape;
                let (c, hw) = (s[1], s[2] * s[3]);
                let x = &self.value(*input).data;
                let gamma = &self.value(*scale).data;
                acc(*input, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * gamma[(i / hw) % c];
                    }
                });
                acc(*scale, &mut |buf| {
                    for i in 0..g.len() {
                        buf[(i / hw) % c] += g[i] * x[i];
                    }
                });
                acc(*shift, &mut |buf| {
                    for i in 0..g.len() {
                        buf[(i / hw) % c] += g[i];
                    }
                });
            }
            Op::External(inputs) => {
                for (v, dv) in inputs {
                    acc(*v, &mut |buf| buf.iter_mut().zip(&dv.data).for_each(|(d, s)| *d += g[0] * s));
                }
            }
        }
    }
}
