//! Recorded-operation reverse-mode differentiation.
//!
//! Every op validates shapes, computes its value eagerly, checks the result
//! for NaN/Inf, and appends a node. `backward` walks the nodes in reverse,
//! accumulating gradients; intermediate gradients are dropped as soon as
//! their node is processed, leaf gradients are kept.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// rows x d plus a broadcast 1 x d row.
    AddRowBroadcast(Var, Var),
    /// rows x m minus a broadcast rows x 1 column.
    SubColBroadcast(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    /// Every element multiplied by a 1 x 1 tape value.
    ScaleByScalar(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SoftmaxRows(Var),
    /// Per-row log-sum-exp, rows x m -> rows x 1.
    LogSumExpRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
    },
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    /// Column means, rows x d -> 1 x d.
    MeanRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::SubColBroadcast(..) => "sub_col_broadcast",
            Op::ScaleConst(..) => "scale_const",
            Op::AddConst(..) => "add_const",
            Op::ScaleByScalar(..) => "scale_by_scalar",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSumExpRows(..) => "log_sum_exp_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Sqrt(..) => "sqrt",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Grads {
    g: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zeros if the leaf never influenced the output.
    pub fn of(&self, v: Var, like: &Tensor) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(like.rows, like.cols),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
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

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Shape(format!(
                "matmul: {ar}x{ac} against {br}x{bc}"
            )));
        }
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            let (ar, ac) = self.shape(a);
            let (br, bc) = self.shape(b);
            return Err(Error::Shape(format!(
                "{what}: {ar}x{ac} against {br}x{bc}"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    /// `a + b` with `b` a 1 x d row added to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if br != 1 || bc != ac {
            return Err(Error::Shape(format!(
                "add_row_broadcast: row must be 1x{ac}, got {br}x{bc}"
            )));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut v = av.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += bv.data[j];
            }
        }
        self.push(Op::AddRowBroadcast(a, b), v)
    }

    /// `a - b` with `b` a rows x 1 column subtracted from every column of `a`.
    pub fn sub_col_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, _) = self.shape(a);
        let (br, bc) = self.shape(b);
        if bc != 1 || br != ar {
            return Err(Error::Shape(format!(
                "sub_col_broadcast: column must be {ar}x1, got {br}x{bc}"
            )));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut v = av.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] -= bv.data[i];
            }
        }
        self.push(Op::SubColBroadcast(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::ScaleConst(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    /// Multiply every element of `a` by the 1 x 1 tape value `s`.
    pub fn scale_by_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            let (r, c) = self.shape(s);
            return Err(Error::Shape(format!(
                "scale_by_scalar: scale must be 1x1, got {r}x{c}"
            )));
        }
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| sv * x);
        self.push(Op::ScaleByScalar(a, s), v)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of nothing".into()));
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::Shape(format!(
                    "concat_cols: {rows} rows expected, got {r}"
                )));
            }
            cols += c;
        }
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            for i in 0..rows {
                for j in 0..pv.cols {
                    v.data[i * cols + off + j] = pv.data[i * pv.cols + j];
                }
            }
            off += pv.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of nothing".into()));
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::Shape(format!(
                    "concat_rows: {cols} columns expected, got {c}"
                )));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        let v = Tensor { rows, cols, data };
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols || len == 0 {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {start}+{len}) out of {cols} columns"
            )));
        }
        let av = self.value(a);
        let mut v = Tensor::zeros(rows, len);
        for i in 0..rows {
            v.data[i * len..(i + 1) * len]
                .copy_from_slice(&av.data[i * cols + start..i * cols + start + len]);
        }
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > rows || len == 0 {
            return Err(Error::Shape(format!(
                "slice_rows [{start}, {start}+{len}) out of {rows} rows"
            )));
        }
        let av = self.value(a);
        let v = Tensor {
            rows: len,
            cols,
            data: av.data[start * cols..(start + len) * cols].to_vec(),
        };
        self.push(Op::SliceRows(a, start, len), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut v = av.clone();
        for i in 0..v.rows {
            let row = &mut v.data[i * v.cols..(i + 1) * v.cols];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows, 1);
        for i in 0..av.rows {
            let row = av.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            v.data[i] = max + sum.ln();
        }
        self.push(Op::LogSumExpRows(a), v)
    }

    /// Per-row standardization (population variance, floor 1e-5) followed by
    /// the affine map `gain * x + bias`; gain and bias are 1 x d rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.shape(x);
        if d < 2 {
            return Err(Error::Shape(format!(
                "layer_norm needs at least 2 features, got {d}"
            )));
        }
        for (name, v) in [("gain", gain), ("bias", bias)] {
            if self.shape(v) != (1, d) {
                let (r, c) = self.shape(v);
                return Err(Error::Shape(format!(
                    "layer_norm {name} must be 1x{d}, got {r}x{c}"
                )));
            }
        }
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut v = Tensor::zeros(xv.rows, d);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                v.data[i * d + j] = (row[j] - mean) * inv * gv.data[j] + bv.data[j];
            }
        }
        self.push(Op::LayerNorm { x, gain, bias }, v)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(gelu);
        self.push(Op::Gelu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data.iter().any(|&x| x < 0.0) {
            return Err(Error::Numeric("sqrt of a negative value".into()));
        }
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let v = Tensor::scalar(av.data.iter().sum::<f64>() / av.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Column means, rows x d -> 1 x d.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut v = av.col_sum();
        let n = av.rows as f64;
        for x in v.data.iter_mut() {
            *x /= n;
        }
        self.push(Op::MeanRows(a), v)
    }

    /// Reverse pass from a scalar output with seed gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        self.backward_seeded(loss, Tensor::scalar(1.0))
    }

    /// Reverse pass from any output with an explicit upstream gradient,
    /// used to resume backpropagation across tape boundaries.
    pub fn backward_seeded(&self, out: Var, seed: Tensor) -> Result<Grads> {
        if self.shape(out) != seed.shape() {
            let (r, c) = self.shape(out);
            return Err(Error::Shape(format!(
                "backward seed {}x{} against output {r}x{c}",
                seed.rows, seed.cols
            )));
        }
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out.0] = Some(seed);

        for id in (0..=out.0).rev() {
            let Some(gy) = g[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    g[id] = Some(gy);
                }
                Op::MatMul(a, b) => {
                    let ga = gy.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&gy);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gy.clone());
                    acc(&mut g, *b, gy);
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *b, gy.map(|x| -x));
                    acc(&mut g, *a, gy);
                }
                Op::Mul(a, b) => {
                    acc(&mut g, *a, gy.zip(self.value(*b), |g, y| g * y));
                    acc(&mut g, *b, gy.zip(self.value(*a), |g, y| g * y));
                }
                Op::AddRowBroadcast(a, b) => {
                    acc(&mut g, *b, gy.col_sum());
                    acc(&mut g, *a, gy);
                }
                Op::SubColBroadcast(a, b) => {
                    acc(&mut g, *b, gy.row_sum().map(|x| -x));
                    acc(&mut g, *a, gy);
                }
                Op::ScaleConst(a, c) => {
                    let c = *c;
                    acc(&mut g, *a, gy.map(|x| c * x));
                }
                Op::AddConst(a) => {
                    acc(&mut g, *a, gy);
                }
                Op::ScaleByScalar(a, s) => {
                    let sv = self.value(*s).item();
                    let gs: f64 = gy
                        .data
                        .iter()
                        .zip(&self.value(*a).data)
                        .map(|(&g, &x)| g * x)
                        .sum();
                    acc(&mut g, *a, gy.map(|x| sv * x));
                    acc(&mut g, *s, Tensor::scalar(gs));
                }
                Op::Transpose(a) => {
                    acc(&mut g, *a, gy.transpose());
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let mut gp = Tensor::zeros(gy.rows, pc);
                        for i in 0..gy.rows {
                            gp.data[i * pc..(i + 1) * pc]
                                .copy_from_slice(&gy.data[i * gy.cols + off..i * gy.cols + off + pc]);
                        }
                        off += pc;
                        acc(&mut g, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let gp = Tensor {
                            rows: pr,
                            cols: pc,
                            data: gy.data[off * pc..(off + pr) * pc].to_vec(),
                        };
                        off += pr;
                        acc(&mut g, p, gp);
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = Tensor::zeros(ar, ac);
                    for i in 0..ar {
                        for j in 0..*len {
                            ga.data[i * ac + start + j] = gy.data[i * len + j];
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::SliceRows(a, start, len) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = Tensor::zeros(ar, ac);
                    ga.data[start * ac..(start + len) * ac].copy_from_slice(&gy.data);
                    acc(&mut g, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let gr = &gy.data[i * y.cols..(i + 1) * y.cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                        for j in 0..y.cols {
                            ga.data[i * y.cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::LogSumExpRows(a) => {
                    let xv = self.value(*a);
                    let out_v = &node.value;
                    let mut ga = Tensor::zeros(xv.rows, xv.cols);
                    for i in 0..xv.rows {
                        let gi = gy.data[i];
                        let lse = out_v.data[i];
                        for j in 0..xv.cols {
                            ga.data[i * xv.cols + j] = gi * (xv.get(i, j) - lse).exp();
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let d = xv.cols as f64;
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    let mut ggain = Tensor::zeros(1, xv.cols);
                    let mut gbias = Tensor::zeros(1, xv.cols);
                    for i in 0..xv.rows {
                        let row = xv.row(i);
                        let mean = row.iter().sum::<f64>() / d;
                        let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let gr = &gy.data[i * xv.cols..(i + 1) * xv.cols];
                        // ghat = gy * gain; gx = inv*(ghat - mean(ghat) - xhat*mean(ghat*xhat))
                        let mut sum_gh = 0.0;
                        let mut sum_ghx = 0.0;
                        for j in 0..xv.cols {
                            let xhat = (row[j] - mean) * inv;
                            let gh = gr[j] * gv.data[j];
                            sum_gh += gh;
                            sum_ghx += gh * xhat;
                            gbias.data[j] += gr[j];
                            ggain.data[j] += gr[j] * xhat;
                        }
                        let m_gh = sum_gh / d;
                        let m_ghx = sum_ghx / d;
                        for j in 0..xv.cols {
                            let xhat = (row[j] - mean) * inv;
                            let gh = gr[j] * gv.data[j];
                            gx.data[i * xv.cols + j] = inv * (gh - m_gh - xhat * m_ghx);
                        }
                    }
                    acc(&mut g, *x, gx);
                    acc(&mut g, *gain, ggain);
                    acc(&mut g, *bias, gbias);
                }
                Op::Gelu(a) => {
                    acc(&mut g, *a, gy.zip(self.value(*a), |g, x| g * gelu_deriv(x)));
                }
                Op::Sigmoid(a) => {
                    acc(&mut g, *a, gy.zip(&node.value, |g, y| g * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    acc(&mut g, *a, gy.zip(&node.value, |g, y| g * (1.0 - y * y)));
                }
                Op::Exp(a) => {
                    acc(&mut g, *a, gy.zip(&node.value, |g, y| g * y));
                }
                Op::Sqrt(a) => {
                    acc(&mut g, *a, gy.zip(&node.value, |g, y| g * 0.5 / y));
                }
                Op::Sum(a) => {
                    let (ar, ac) = self.shape(*a);
                    acc(&mut g, *a, Tensor::filled(ar, ac, gy.item()));
                }
                Op::Mean(a) => {
                    let (ar, ac) = self.shape(*a);
                    acc(&mut g, *a, Tensor::filled(ar, ac, gy.item() / (ar * ac) as f64));
                }
                Op::MeanRows(a) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = Tensor::zeros(ar, ac);
                    for i in 0..ar {
                        for j in 0..ac {
                            ga.data[i * ac + j] = gy.data[j] / ar as f64;
                        }
                    }
                    acc(&mut g, *a, ga);
                }
            }
        }
        Ok(Grads { g })
    }
}

fn acc(g: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut g[v.0] {
        Some(t) => t.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let loss = tape.sum(w).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data, vec![1.0; 4]);
    }

    #[test]
    fn quadratic_form_gradient_matches_analytic() {
        // loss = ||W x||^2, dL/dW = 2 (W x) xᵀ
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[vec![1.0, -2.0], vec![0.5, 3.0]])).unwrap();
        let x = tape.leaf(t(&[vec![0.7], vec![-1.2]])).unwrap();
        let wx = tape.matmul(w, x).unwrap();
        let sq = tape.mul(wx, wx).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();

        let wx_v = tape.value(wx).clone();
        let x_v = tape.value(x).clone();
        let expect = wx_v.map(|v| 2.0 * v).matmul_nt(&x_v);
        let gw = g.get(w).unwrap();
        for (a, b) in gw.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![0.0, (3.0f64).ln()], vec![5.0, 5.0]])).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        let yv = tape.value(y);
        assert!((yv.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((yv.get(0, 1) - 0.75).abs() < 1e-12);
        assert!((yv.get(1, 0) - 0.5).abs() < 1e-12);
        for i in 0..2 {
            assert!((yv.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let xs = tape.add_const(x, 123.456).unwrap();
        let ys = tape.softmax_rows(xs).unwrap();
        let ysv = tape.value(ys);
        let yv = tape.value(y);
        for (a, b) in yv.data.iter().zip(&ysv.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_hand_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 3.0]])).unwrap();
        let gain = tape.leaf(t(&[vec![1.0, 1.0]])).unwrap();
        let bias = tape.leaf(t(&[vec![0.0, 0.0]])).unwrap();
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let yv = tape.value(y);
        // mean 2, population variance 1, floor 1e-5.
        let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((yv.get(0, 0) + expect).abs() < 1e-15);
        assert!((yv.get(0, 1) - expect).abs() < 1e-15);

        let c = tape.leaf(t(&[vec![4.0, 4.0, 4.0]])).unwrap();
        let gain3 = tape.leaf(t(&[vec![1.0, 1.0, 1.0]])).unwrap();
        let bias3 = tape.leaf(t(&[vec![0.0, 0.0, 0.0]])).unwrap();
        let yc = tape.layer_norm(c, gain3, bias3).unwrap();
        assert!(tape.value(yc).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3)).unwrap();
        let b = tape.leaf(Tensor::zeros(2, 3)).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(tape.exp(a), Err(Error::Numeric(_))));
        let b = tape.leaf(Tensor::scalar(-1.0)).unwrap();
        assert!(tape.sqrt(b).is_err());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 2)).unwrap();
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn seeded_backward_composes_with_full_backward() {
        // f(x) = mean(gelu(x W)); split the graph at h = x W and check the
        // chained gradient equals the direct one.
        let x_v = t(&[vec![0.3, -0.7], vec![1.1, 0.4]]);
        let w_v = t(&[vec![0.5, -0.2], vec![0.8, 0.1]]);

        let mut full = Tape::new();
        let x = full.leaf(x_v.clone()).unwrap();
        let w = full.leaf(w_v.clone()).unwrap();
        let h = full.matmul(x, w).unwrap();
        let y = full.gelu(h).unwrap();
        let loss = full.mean(y).unwrap();
        let g_full = full.backward(loss).unwrap();

        let mut front = Tape::new();
        let x2 = front.leaf(x_v).unwrap();
        let w2 = front.leaf(w_v).unwrap();
        let h2 = front.matmul(x2, w2).unwrap();

        let mut back = Tape::new();
        let h_leaf = back.leaf(front.value(h2).clone()).unwrap();
        let y2 = back.gelu(h_leaf).unwrap();
        let loss2 = back.mean(y2).unwrap();
        let g_back = back.backward(loss2).unwrap();
        let g_front = front
            .backward_seeded(h2, g_back.get(h_leaf).unwrap().clone())
            .unwrap();

        let a = g_full.get(w).unwrap();
        let b = g_front.get(w2).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
    }

    #[test]
    fn concat_slice_round_trip_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let b = tape.leaf(t(&[vec![5.0], vec![6.0]])).unwrap();
        let cat = tape.concat_cols(&[a, b]).unwrap();
        let back_b = tape.slice_cols(cat, 2, 1).unwrap();
        assert_eq!(tape.value(back_b).data, vec![5.0, 6.0]);
        let loss = tape.sum(back_b).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(a).is_none() || g.get(a).unwrap().data.iter().all(|&v| v == 0.0));
        assert_eq!(g.get(b).unwrap().data, vec![1.0, 1.0]);
    }
}
