use super::optim::{ParamId, ParamStore};
use super::{gemm, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    RepeatCols(Var, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ScatterMaxRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>, usize),
    BatchNorm { x: Var, gamma: Var, beta: Var, normalized: Tensor, inv_std: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records every operation of one forward pass so gradients can be
/// propagated back through it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every tape entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> [usize; 2] {
    let ok = |x: usize, y: usize| x == y || y == 1;
    if ok(a[0], b[0]) && ok(a[1], b[1]) {
        a
    } else {
        panic!("{}", TensorError::ShapeMismatch { op, left: a, right: b });
    }
}

/// Element of `b` broadcast against position (r, c).
#[inline]
fn bcast(b: &Tensor, r: usize, c: usize) -> f64 {
    let rr = if b.rows() == 1 { 0 } else { r };
    let cc = if b.cols() == 1 { 0 } else { c };
    b.get(rr, cc)
}

/// Sums `g` down to shape `to` (inverse of broadcasting).
fn reduce_to(g: &Tensor, to: [usize; 2]) -> Tensor {
    if g.shape() == to {
        return g.clone();
    }
    let mut out = Tensor::zeros(to[0], to[1]);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let rr = if to[0] == 1 { 0 } else { r };
            let cc = if to[1] == 1 { 0 } else { c };
            let v = out.get(rr, cc) + g.get(r, c);
            out.set(rr, cc, v);
        }
    }
    out
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            out.set(r, c, f(a.get(r, c), bcast(b, r, c)));
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
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * x.cols()..(r + 1) * x.cols()];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free input that receives gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            panic!(
                "{}",
                TensorError::ShapeMismatch {
                    op: "matmul",
                    left: x.shape(),
                    right: y.shape()
                }
            );
        }
        let out = x.matmul(y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a + b`, with `b` broadcast along unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        broadcast_shape("add", self.shape(a), self.shape(b));
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        broadcast_shape("sub", self.shape(a), self.shape(b));
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise `a * b`, with `b` broadcast along unit dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        broadcast_shape("mul", self.shape(a), self.shape(b));
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0])[0];
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                panic!(
                    "{}",
                    TensorError::ShapeMismatch {
                        op: "concat_cols",
                        left: [rows, 0],
                        right: v.shape()
                    }
                );
            }
            for r in 0..rows {
                out.data_mut()[r * cols + offset..r * cols + offset + v.cols()].copy_from_slice(v.row_slice(r));
            }
            offset += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                panic!(
                    "{}",
                    TensorError::ShapeMismatch {
                        op: "concat_rows",
                        left: [0, cols],
                        right: v.shape()
                    }
                );
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        let rows = if cols == 0 { parts.iter().map(|&p| self.shape(p)[0]).sum() } else { rows };
        let out = Tensor::new(rows, cols, data).expect("concat_rows length");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.cols(), "slice_cols {start}+{len} of {:?}", v.shape());
        let mut out = Tensor::zeros(v.rows(), len);
        for r in 0..v.rows() {
            out.data_mut()[r * len..(r + 1) * len].copy_from_slice(&v.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.rows(), "slice_rows {start}+{len} of {:?}", v.shape());
        let c = v.cols();
        let out = Tensor::new(len, c, v.data()[start * c..(start + len) * c].to_vec()).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Repeats each column `k` times: output column `h·k + j` is input
    /// column `h`.
    pub fn repeat_cols(&mut self, a: Var, k: usize) -> Var {
        let v = self.value(a);
        let mut out = Tensor::zeros(v.rows(), v.cols() * k);
        for r in 0..v.rows() {
            for h in 0..v.cols() {
                for j in 0..k {
                    out.set(r, h * k + j, v.get(r, h));
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::RepeatCols(a, k), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = v.clone();
        for r in 0..v.rows() {
            let row = v.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for c in 0..v.cols() {
                out.set(r, c, v.get(r, c) - lse);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Sum of all entries, as 1x1.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums, as 1×cols.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = Tensor::zeros(1, v.cols());
        for r in 0..v.rows() {
            for c in 0..v.cols() {
                out.data_mut()[c] += v.get(r, c);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Row sums, as rows×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::column((0..v.rows()).map(|r| v.row_slice(r).iter().sum()).collect());
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a);
        let c = v.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(v.row_slice(i));
        }
        let out = Tensor::new(idx.len(), c, data).unwrap();
        let rg = self.rg(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Output row `j` is the sum of input rows `i` with `idx[i] == j`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n: usize) -> Var {
        let v = self.value(a);
        assert_eq!(idx.len(), v.rows(), "scatter_add_rows index length");
        let c = v.cols();
        let mut out = Tensor::zeros(n, c);
        for (i, &j) in idx.iter().enumerate() {
            for k in 0..c {
                out.data_mut()[j * c + k] += v.data()[i * c + k];
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ScatterAddRows(a, idx.to_vec()), rg)
    }

    /// Columnwise maximum over the rows scattered to each output row; rows
    /// receiving nothing are zero.
    pub fn scatter_max_rows(&mut self, a: Var, idx: &[usize], n: usize) -> Var {
        let v = self.value(a);
        assert_eq!(idx.len(), v.rows(), "scatter_max_rows index length");
        let c = v.cols();
        let mut out = Tensor::full(n, c, f64::NEG_INFINITY);
        for (i, &j) in idx.iter().enumerate() {
            for k in 0..c {
                let x = v.data()[i * c + k];
                if x > out.data()[j * c + k] {
                    out.data_mut()[j * c + k] = x;
                }
            }
        }
        for x in out.data_mut() {
            if *x == f64::NEG_INFINITY {
                *x = 0.0;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ScatterMaxRows(a, idx.to_vec()), rg)
    }

    /// Softmax over the rows sharing a segment id, separately per column.
    pub fn segment_softmax(&mut self, a: Var, segment: &[usize], n_segments: usize) -> Var {
        let v = self.value(a);
        assert_eq!(segment.len(), v.rows(), "segment_softmax segment length");
        let c = v.cols();
        let mut max = vec![f64::NEG_INFINITY; n_segments * c];
        for (i, &s) in segment.iter().enumerate() {
            for k in 0..c {
                max[s * c + k] = max[s * c + k].max(v.data()[i * c + k]);
            }
        }
        let mut out = v.clone();
        let mut z = vec![0.0; n_segments * c];
        for (i, &s) in segment.iter().enumerate() {
            for k in 0..c {
                let e = (v.data()[i * c + k] - max[s * c + k]).exp();
                out.data_mut()[i * c + k] = e;
                z[s * c + k] += e;
            }
        }
        for (i, &s) in segment.iter().enumerate() {
            for k in 0..c {
                out.data_mut()[i * c + k] /= z[s * c + k];
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SegmentSoftmax(a, segment.to_vec(), n_segments), rg)
    }

    /// Batch normalization with batch statistics. Returns the output and
    /// the per-column batch mean and (biased) variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let v = self.value(x);
        let (n, c) = (v.rows(), v.cols());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for r in 0..n {
            for k in 0..c {
                mean[k] += v.get(r, k) / n as f64;
            }
        }
        for r in 0..n {
            for k in 0..c {
                let d = v.get(r, k) - mean[k];
                var[k] += d * d / n as f64;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(n, c);
        for r in 0..n {
            for k in 0..c {
                normalized.set(r, k, (v.get(r, k) - mean[k]) * inv_std[k]);
            }
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = zip(&zip(&normalized, g, |a, b| a * b), b, |a, b| a + b);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        );
        (node, mean, var)
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Var {
        let m = self.constant(Tensor::row(mean.iter().map(|v| -v).collect()));
        let s = self.constant(Tensor::row(var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect()));
        let centered = self.add(x, m);
        let scaled = self.mul(centered, s);
        let y = self.mul(scaled, gamma);
        self.add(y, beta)
    }

    /// Reverse pass from a 1x1 loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(TensorError::NonScalarLoss(lv.shape()));
        }
        if !lv.item().is_finite() {
            return Err(TensorError::NonFiniteLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => {
                    for (a, b) in e.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), w.cols());
                if self.rg(*a) {
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, (g.data(), n, 1), (w.data(), 1, n), da.data_mut());
                    acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, (x.data(), 1, k), (g.data(), n, 1), db.data_mut());
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, reduce_to(&g.map(|x| -x), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, zip(g, w, |p, q| p * q));
                }
                if self.rg(*b) {
                    let gx = zip(g, x, |p, q| p * q);
                    acc(*b, reduce_to(&gx, w.shape()));
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    let mut part = Tensor::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        part.data_mut()[r * c..(r + 1) * c].copy_from_slice(&g.row_slice(r)[offset..offset + c]);
                    }
                    offset += c;
                    acc(p, part);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for &p in parts {
                    let r = self.shape(p)[0];
                    acc(p, Tensor::new(r, c, g.data()[offset * c..(offset + r) * c].to_vec()).unwrap());
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.shape(*a);
                let mut da = Tensor::zeros(src[0], src[1]);
                for r in 0..g.rows() {
                    da.data_mut()[r * src[1] + start..r * src[1] + start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                acc(*a, da);
            }
            Op::SliceRows(a, start) => {
                let src = self.shape(*a);
                let mut da = Tensor::zeros(src[0], src[1]);
                da.data_mut()[start * src[1]..(start + g.rows()) * src[1]].copy_from_slice(g.data());
                acc(*a, da);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::RepeatCols(a, k) => {
                let src = self.shape(*a);
                let mut da = Tensor::zeros(src[0], src[1]);
                for r in 0..src[0] {
                    for h in 0..src[1] {
                        let s: f64 = (0..*k).map(|j| g.get(r, h * k + j)).sum();
                        da.set(r, h, s);
                    }
                }
                acc(*a, da);
            }
            Op::Relu(a) => acc(*a, zip(g, self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::LeakyRelu(a, s) => acc(*a, zip(g, self.value(*a), |d, x| if x > 0.0 { d } else { s * d })),
            Op::Sigmoid(a) => acc(*a, zip(g, y, |d, s| d * s * (1.0 - s))),
            Op::Softplus(a) => acc(*a, zip(g, self.value(*a), |d, x| d * sigmoid(x))),
            Op::Tanh(a) => acc(*a, zip(g, y, |d, t| d * (1.0 - t * t))),
            Op::Log(a) => acc(*a, zip(g, self.value(*a), |d, x| d / x)),
            Op::Exp(a) => acc(*a, zip(g, y, |d, e| d * e)),
            Op::Square(a) => acc(*a, zip(g, self.value(*a), |d, x| 2.0 * d * x)),
            Op::SoftmaxRows(a) => {
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = (0..y.cols()).map(|c| g.get(r, c) * y.get(r, c)).sum();
                    for c in 0..y.cols() {
                        da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(*a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gs: f64 = g.row_slice(r).iter().sum();
                    for c in 0..y.cols() {
                        da.set(r, c, g.get(r, c) - y.get(r, c).exp() * gs);
                    }
                }
                acc(*a, da);
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                acc(*a, Tensor::full(s[0], s[1], g.item()));
            }
            Op::SumRows(a) => {
                let s = self.shape(*a);
                let mut da = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    da.data_mut()[r * s[1]..(r + 1) * s[1]].copy_from_slice(g.data());
                }
                acc(*a, da);
            }
            Op::SumCols(a) => {
                let s = self.shape(*a);
                let mut da = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    for c in 0..s[1] {
                        da.set(r, c, g.data()[r]);
                    }
                }
                acc(*a, da);
            }
            Op::GatherRows(a, idx) => {
                let s = self.shape(*a);
                let c = s[1];
                let mut da = Tensor::zeros(s[0], c);
                for (i, &j) in idx.iter().enumerate() {
                    for k in 0..c {
                        da.data_mut()[j * c + k] += g.data()[i * c + k];
                    }
                }
                acc(*a, da);
            }
            Op::ScatterAddRows(a, idx) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &j in idx {
                    data.extend_from_slice(g.row_slice(j));
                }
                acc(*a, Tensor::new(idx.len(), c, data).unwrap());
            }
            Op::ScatterMaxRows(a, idx) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(x.rows(), c);
                let mut taken = vec![false; y.rows() * c];
                for (i, &j) in idx.iter().enumerate() {
                    for k in 0..c {
                        if !taken[j * c + k] && x.get(i, k) == y.get(j, k) {
                            taken[j * c + k] = true;
                            da.set(i, k, g.get(j, k));
                        }
                    }
                }
                acc(*a, da);
            }
            Op::SegmentSoftmax(a, segment, n) => {
                let c = y.cols();
                let mut dot = vec![0.0; n * c];
                for (i, &s) in segment.iter().enumerate() {
                    for k in 0..c {
                        dot[s * c + k] += y.get(i, k) * g.get(i, k);
                    }
                }
                let mut da = Tensor::zeros(y.rows(), c);
                for (i, &s) in segment.iter().enumerate() {
                    for k in 0..c {
                        da.set(i, k, y.get(i, k) * (g.get(i, k) - dot[s * c + k]));
                    }
                }
                acc(*a, da);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (n, c) = (normalized.rows(), normalized.cols());
                let gam = self.value(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..n {
                    for k in 0..c {
                        dbeta[k] += g.get(r, k);
                        dgamma[k] += g.get(r, k) * normalized.get(r, k);
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(n, c);
                    for r in 0..n {
                        for k in 0..c {
                            let v = bcast(gam, 0, k) * inv_std[k] / n as f64
                                * (n as f64 * g.get(r, k) - dbeta[k] - normalized.get(r, k) * dgamma[k]);
                            dx.set(r, k, v);
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, reduce_to(&Tensor::row(dgamma), self.shape(*gamma)));
                acc(*beta, reduce_to(&Tensor::row(dbeta), self.shape(*beta)));
            }
        }
    }

    /// Gradient per parameter of `store` (summed over every use on this
    /// tape); `None` for parameters the loss does not depend on.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; store.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                match &mut out[id.index()] {
                    Some(e) => {
                        for (a, b) in e.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Tensor::row(vec![0.0, 0.0]));
        let s = t.softmax_rows(z);
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn linear_gradient_is_exact() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.0, 2.0, 3.5]));
        let w = t.leaf(Tensor::scalar(0.7));
        let y = t.mul(x, w);
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 6.5);
    }

    #[test]
    fn disconnected_leaf_gets_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(1.0));
        let b = t.leaf(Tensor::scalar(2.0));
        let loss = t.square(a);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().item(), 2.0);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(t.backward(a), Err(TensorError::NonScalarLoss([1, 2]))));
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::column(vec![0.3, -1.0, 2.0, 5.0, 0.1]));
        let s = t.segment_softmax(x, &[0, 1, 0, 1, 1], 2);
        let v = t.value(s).data();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[1] + v[3] + v[4] - 1.0).abs() < 1e-12);
    }
}
