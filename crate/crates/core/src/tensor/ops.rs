use rand::Rng;

use super::graph::{Node, Value};
use super::kernels::{gemm, View};
use super::{Mode, Result, Tensor, TensorError};

/// Denominator guard for batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    MeanRows(usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    MatMul(usize, usize),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Prelu {
        x: usize,
        slope: usize,
    },
    LeakyRelu(usize, f64),
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Softmax(usize),
    LogSoftmax(usize),
    OuterAdd(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    Nll {
        x: usize,
        target: usize,
    },
    /// Scalar whose gradient w.r.t. its input was computed during forward.
    ScalarWithGrad {
        x: usize,
        local_grad: Vec<f64>,
    },
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (divides by T).
    pub var: Vec<f64>,
    pub count: usize,
}

/// Exponential moving averages used by batch normalization in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Folds one batch in; the variance estimate is unbiased when T > 1.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        let correction = if batch.count > 1 {
            batch.count as f64 / (batch.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (1.0 - momentum) * self.var[c] + momentum * batch.var[c] * correction;
        }
    }
}

fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::InvalidShape(msg.into())
}

/// Interprets a rank-1 tensor as a single row.
fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Value {
    fn unary(&self, f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>) -> Result<Value> {
        let (out, op, rg) = {
            let nodes = self.graph.nodes();
            let n = &nodes[self.id];
            let (out, op) = f(&n.value)?;
            (out, op, n.requires_grad)
        };
        Ok(self.graph.push(out, op, rg))
    }

    fn binary(
        &self,
        other: &Value,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Value> {
        self.check_same_graph(other)?;
        let (out, op, rg) = {
            let nodes = self.graph.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (out, op) = f(&a.value, &b.value)?;
            (out, op, a.requires_grad || b.requires_grad)
        };
        Ok(self.graph.push(out, op, rg))
    }

    pub fn add(&self, other: &Value) -> Result<Value> {
        let (i, j) = (self.id, other.id);
        self.binary(other, |a, b| {
            if a.shape() != b.shape() {
                return Err(shape_err(format!("add {:?} + {:?}", a.shape(), b.shape())));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Ok((Tensor::new(a.shape(), data)?, Op::Add(i, j)))
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Value) -> Result<Value> {
        let (i, j) = (self.id, other.id);
        self.binary(other, |a, b| {
            if a.shape() != b.shape() {
                return Err(shape_err(format!("mul {:?} * {:?}", a.shape(), b.shape())));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Ok((Tensor::new(a.shape(), data)?, Op::Mul(i, j)))
        })
    }

    pub fn scale(&self, factor: f64) -> Result<Value> {
        let i = self.id;
        self.unary(|a| {
            let data = a.data().iter().map(|x| x * factor).collect();
            Ok((Tensor::new(a.shape(), data)?, Op::Scale(i, factor)))
        })
    }

    pub fn sum(&self) -> Result<Value> {
        let i = self.id;
        self.unary(|a| Ok((Tensor::scalar(a.data().iter().sum()), Op::Sum(i))))
    }

    /// Mean over all leading axes: `[rows × C] -> [1 × C]`.
    pub fn mean_rows(&self) -> Result<Value> {
        let i = self.id;
        self.unary(|a| {
            let (r, c) = as_matrix(a);
            if r == 0 {
                return Err(TensorError::EmptyInput("mean over zero rows".into()));
            }
            let mut out = vec![0.0; c];
            for row in a.data().chunks_exact(c) {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Ok((Tensor::new(&[1, c], out)?, Op::MeanRows(i)))
        })
    }

    /// `x · wᵀ + b` with `x: [N × In]`, `w: [Out × In]`, `b: [Out]`.
    pub fn linear(&self, weight: &Value, bias: Option<&Value>) -> Result<Value> {
        self.check_same_graph(weight)?;
        if let Some(b) = bias {
            self.check_same_graph(b)?;
        }
        let (out, rg) = {
            let nodes = self.graph.nodes();
            let (x, w) = (&nodes[self.id].value, &nodes[weight.id].value);
            let (n, inp) = as_matrix(x);
            if w.shape().len() != 2 || w.shape()[1] != inp {
                return Err(shape_err(format!(
                    "linear input {:?} with weight {:?}",
                    x.shape(),
                    w.shape()
                )));
            }
            let outf = w.shape()[0];
            let mut y = vec![0.0; n * outf];
            if let Some(b) = bias {
                let bv = &nodes[b.id].value;
                if bv.len() != outf {
                    return Err(shape_err(format!(
                        "linear bias {:?}, expected [{outf}]",
                        bv.shape()
                    )));
                }
                for row in y.chunks_exact_mut(outf) {
                    row.copy_from_slice(bv.data());
                }
            }
            gemm(
                n,
                inp,
                outf,
                1.0,
                View::row_major(x.data(), inp),
                View::transposed(w.data(), inp),
                if bias.is_some() { 1.0 } else { 0.0 },
                &mut y,
                0,
                outf,
                1,
            );
            let rg = nodes[self.id].requires_grad
                || nodes[weight.id].requires_grad
                || bias.is_some_and(|b| nodes[b.id].requires_grad);
            (Tensor::new(&[n, outf], y)?, rg)
        };
        let op = Op::Linear {
            x: self.id,
            w: weight.id,
            b: bias.map(|b| b.id),
        };
        Ok(self.graph.push(out, op, rg))
    }

    /// Matrix product `[m × k] · [k × n]`.
    pub fn matmul(&self, other: &Value) -> Result<Value> {
        let (i, j) = (self.id, other.id);
        self.binary(other, |a, b| {
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(format!(
                    "matmul {:?} · {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(
                m,
                k,
                n,
                1.0,
                View::row_major(a.data(), k),
                View::row_major(b.data(), n),
                0.0,
                &mut c,
                0,
                n,
                1,
            );
            Ok((Tensor::new(&[m, n], c)?, Op::MatMul(i, j)))
        })
    }

    /// 1-D convolution over time. `self: [T × Cin]`, `kernel: [Cout × Cin × K]`,
    /// output `[T' × Cout]` with `T' = (T + 2·padding − K) / stride + 1`.
    pub fn conv1d(&self, kernel: &Value, stride: usize, padding: usize) -> Result<Value> {
        let (i, j) = (self.id, kernel.id);
        self.binary(kernel, |x, w| {
            if x.shape().len() != 2 || w.shape().len() != 3 {
                return Err(shape_err(format!(
                    "conv1d expects [T×Cin] and [Cout×Cin×K], got {:?} and {:?}",
                    x.shape(),
                    w.shape()
                )));
            }
            let (t, cin) = (x.shape()[0], x.shape()[1]);
            let (cout, wcin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
            if wcin != cin {
                return Err(shape_err(format!(
                    "conv1d input has {cin} channels, kernel expects {wcin}"
                )));
            }
            if !(1..=2).contains(&stride) {
                return Err(shape_err(format!(
                    "conv1d stride must be 1 or 2, got {stride}"
                )));
            }
            if k == 0 || k > t + 2 * padding {
                return Err(shape_err(format!(
                    "conv1d kernel {k} longer than padded input {}",
                    t + 2 * padding
                )));
            }
            let t_out = (t + 2 * padding - k) / stride + 1;
            let padded = pad_rows(x.data(), t, cin, padding);
            let mut y = vec![0.0; t_out * cout];
            for tap in 0..k {
                gemm(
                    t_out,
                    cin,
                    cout,
                    1.0,
                    View::new(&padded, tap * cin, stride * cin, 1),
                    View::new(w.data(), tap, k, cin * k),
                    if tap == 0 { 0.0 } else { 1.0 },
                    &mut y,
                    0,
                    cout,
                    1,
                );
            }
            Ok((
                Tensor::new(&[t_out, cout], y)?,
                Op::Conv1d {
                    x: i,
                    w: j,
                    stride,
                    padding,
                },
            ))
        })
    }

    /// Batch normalization over the time axis of `[T × C]`. Returns the batch
    /// statistics in train mode so the caller can fold them into `running`.
    pub fn batch_norm1d_stats(
        &self,
        gamma: &Value,
        beta: &Value,
        running: &RunningStats,
        mode: Mode,
        eps: f64,
    ) -> Result<(Value, Option<BatchStats>)> {
        self.check_same_graph(gamma)?;
        self.check_same_graph(beta)?;
        let (out, op, stats, rg) = {
            let nodes = self.graph.nodes();
            let x = &nodes[self.id].value;
            let (t, c) = as_matrix(x);
            if t == 0 {
                return Err(TensorError::EmptyInput("batch norm over zero rows".into()));
            }
            let (g, b) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            if g.len() != c || b.len() != c || running.channels() != c {
                return Err(shape_err(format!(
                    "batch norm over {c} channels with gamma {:?}, beta {:?}, running {}",
                    g.shape(),
                    b.shape(),
                    running.channels()
                )));
            }
            let (mean, var, stats) = match mode {
                Mode::Train => {
                    let mut mean = vec![0.0; c];
                    for row in x.data().chunks_exact(c) {
                        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                    }
                    mean.iter_mut().for_each(|m| *m /= t as f64);
                    let mut var = vec![0.0; c];
                    for row in x.data().chunks_exact(c) {
                        for ch in 0..c {
                            let d = row[ch] - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= t as f64);
                    let stats = BatchStats {
                        mean: mean.clone(),
                        var: var.clone(),
                        count: t,
                    };
                    (mean, var, Some(stats))
                }
                Mode::Eval => (running.mean.clone(), running.var.clone(), None),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; t * c];
            let mut y = vec![0.0; t * c];
            for (r, row) in x.data().chunks_exact(c).enumerate() {
                for ch in 0..c {
                    let h = (row[ch] - mean[ch]) * inv_std[ch];
                    xhat[r * c + ch] = h;
                    y[r * c + ch] = g.data()[ch] * h + b.data()[ch];
                }
            }
            let rg = nodes[self.id].requires_grad
                || nodes[gamma.id].requires_grad
                || nodes[beta.id].requires_grad;
            let op = Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            };
            (Tensor::new(x.shape(), y)?, op, stats, rg)
        };
        Ok((self.graph.push(out, op, rg), stats))
    }

    /// Batch normalization that updates `running` in place in train mode.
    pub fn batch_norm1d(
        &self,
        gamma: &Value,
        beta: &Value,
        running: &mut RunningStats,
        mode: Mode,
        eps: f64,
    ) -> Result<Value> {
        let (y, stats) = self.batch_norm1d_stats(gamma, beta, running, mode, eps)?;
        if let Some(stats) = stats {
            running.update(&stats, BN_MOMENTUM);
        }
        Ok(y)
    }

    /// Parametric ReLU with one slope per channel (last axis) or a single
    /// shared slope. The gradient at exactly 0 takes the positive branch.
    pub fn prelu(&self, slope: &Value) -> Result<Value> {
        let (i, j) = (self.id, slope.id);
        self.binary(slope, |x, a| {
            let c = x.cols();
            if a.len() != 1 && a.len() != c {
                return Err(shape_err(format!(
                    "prelu slope {:?} for {c} channels",
                    a.shape()
                )));
            }
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(idx, &v)| {
                    if v >= 0.0 {
                        v
                    } else {
                        a.data()[if a.len() == 1 { 0 } else { idx % c }] * v
                    }
                })
                .collect();
            Ok((Tensor::new(x.shape(), data)?, Op::Prelu { x: i, slope: j }))
        })
    }

    pub fn leaky_relu(&self, negative_slope: f64) -> Result<Value> {
        let i = self.id;
        self.unary(|x| {
            let data = x
                .data()
                .iter()
                .map(|&v| if v >= 0.0 { v } else { negative_slope * v })
                .collect();
            Ok((
                Tensor::new(x.shape(), data)?,
                Op::LeakyRelu(i, negative_slope),
            ))
        })
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` in train mode;
    /// eval mode (or `p == 0`) is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, mode: Mode, rng: &mut R) -> Result<Value> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let i = self.id;
        self.unary(|x| {
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Ok((Tensor::new(x.shape(), data)?, Op::Dropout { x: i, mask }))
        })
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&self) -> Result<Value> {
        let i = self.id;
        self.unary(|x| {
            let c = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for row in x.data().chunks_exact(c) {
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|v| (v - lse).exp()));
            }
            Ok((Tensor::new(x.shape(), out)?, Op::Softmax(i)))
        })
    }

    pub fn log_softmax(&self) -> Result<Value> {
        let i = self.id;
        self.unary(|x| {
            let c = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for row in x.data().chunks_exact(c) {
                let lse = log_sum_exp(row);
                out.extend(row.iter().map(|v| v - lse));
            }
            Ok((Tensor::new(x.shape(), out)?, Op::LogSoftmax(i)))
        })
    }

    /// `out[i][j] = self[i] + other[j]` for column vectors `[m]`/`[m × 1]`
    /// and `[n]`/`[n × 1]`.
    pub fn outer_add(&self, other: &Value) -> Result<Value> {
        let (i, j) = (self.id, other.id);
        self.binary(other, |u, v| {
            let is_col =
                |t: &Tensor| t.shape().len() == 1 || (t.shape().len() == 2 && t.shape()[1] == 1);
            if !is_col(u) || !is_col(v) {
                return Err(shape_err(format!(
                    "outer_add {:?} ⊕ {:?}",
                    u.shape(),
                    v.shape()
                )));
            }
            let (m, n) = (u.len(), v.len());
            let mut out = Vec::with_capacity(m * n);
            for &a in u.data() {
                out.extend(v.data().iter().map(|b| a + b));
            }
            Ok((Tensor::new(&[m, n], out)?, Op::OuterAdd(i, j)))
        })
    }

    /// Concatenates `[r × c_k]` matrices along columns.
    pub fn concat_cols(parts: &[Value]) -> Result<Value> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::EmptyInput("concat of zero values".into()))?;
        for p in parts {
            first.check_same_graph(p)?;
        }
        let (out, rg) = {
            let nodes = first.graph.nodes();
            let rows = nodes[first.id].value.rows();
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let t = &nodes[p.id].value;
                if t.shape().len() != 2 || t.rows() != rows {
                    return Err(shape_err(format!(
                        "concat part {:?} with {rows} rows",
                        t.shape()
                    )));
                }
                widths.push(t.cols());
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
            (Tensor::new(&[rows, total], data)?, rg)
        };
        let op = Op::ConcatCols(parts.iter().map(|p| p.id).collect());
        Ok(first.graph.push(out, op, rg))
    }

    /// Stacks `[r_k × c]` matrices along rows.
    pub fn concat_rows(parts: &[Value]) -> Result<Value> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::EmptyInput("concat of zero values".into()))?;
        for p in parts {
            first.check_same_graph(p)?;
        }
        let (out, rg) = {
            let nodes = first.graph.nodes();
            let cols = nodes[first.id].value.cols();
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.id].value;
                if t.shape().len() != 2 || t.cols() != cols {
                    return Err(shape_err(format!(
                        "concat part {:?} with {cols} columns",
                        t.shape()
                    )));
                }
                data.extend_from_slice(t.data());
            }
            let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
            (Tensor::new(&[data.len() / cols, cols], data)?, rg)
        };
        let op = Op::ConcatRows(parts.iter().map(|p| p.id).collect());
        Ok(first.graph.push(out, op, rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Value> {
        let i = self.id;
        self.unary(|x| {
            if x.shape().len() != 2 || len == 0 || start + len > x.rows() {
                return Err(shape_err(format!(
                    "rows {start}..{} of {:?}",
                    start + len,
                    x.shape()
                )));
            }
            let c = x.cols();
            let data = x.data()[start * c..(start + len) * c].to_vec();
            Ok((Tensor::new(&[len, c], data)?, Op::SliceRows { x: i, start }))
        })
    }

    /// Negative log-likelihood of `target` for a single row of log-probabilities.
    pub fn nll(&self, target: usize) -> Result<Value> {
        let i = self.id;
        self.unary(|x| {
            if x.rows() != 1 || target >= x.cols() {
                return Err(shape_err(format!(
                    "nll target {target} for {:?}",
                    x.shape()
                )));
            }
            Ok((Tensor::scalar(-x.data()[target]), Op::Nll { x: i, target }))
        })
    }

    /// Cross-entropy of raw logits `[1 × V]` against a class index.
    pub fn cross_entropy(&self, target: usize) -> Result<Value> {
        self.log_softmax()?.nll(target)
    }

    /// Scalar node whose value and input gradient were computed externally.
    pub(crate) fn scalar_with_grad(&self, value: f64, local_grad: Vec<f64>) -> Result<Value> {
        let i = self.id;
        self.unary(|x| {
            if local_grad.len() != x.len() {
                return Err(shape_err("local gradient length mismatch"));
            }
            Ok((
                Tensor::scalar(value),
                Op::ScalarWithGrad { x: i, local_grad },
            ))
        })
    }
}

fn pad_rows(data: &[f64], t: usize, c: usize, padding: usize) -> Vec<f64> {
    if padding == 0 {
        return data.to_vec();
    }
    let mut out = vec![0.0; (t + 2 * padding) * c];
    out[padding * c..(padding + t) * c].copy_from_slice(data);
    out
}

/// Gradient contributions of `node` to its parents given its output adjoint.
pub(crate) fn propagate(node: &Node, nodes: &[Node], dout: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let val = |id: usize| &nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, dout.to_vec()), (*b, dout.to_vec())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            vec![
                (*a, dout.iter().zip(bv).map(|(g, y)| g * y).collect()),
                (*b, dout.iter().zip(av).map(|(g, x)| g * x).collect()),
            ]
        }
        Op::Scale(a, f) => vec![(*a, dout.iter().map(|g| g * f).collect())],
        Op::Sum(a) => vec![(*a, vec![dout[0]; val(*a).len()])],
        Op::MeanRows(a) => {
            let x = val(*a);
            let (r, c) = as_matrix(x);
            let mut g = Vec::with_capacity(r * c);
            for _ in 0..r {
                g.extend(dout.iter().map(|d| d / r as f64));
            }
            vec![(*a, g)]
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, inp) = as_matrix(xv);
            let outf = wv.shape()[0];
            let mut out = Vec::new();
            if needs(*x) {
                let mut dx = vec![0.0; n * inp];
                gemm(
                    n,
                    outf,
                    inp,
                    1.0,
                    View::row_major(dout, outf),
                    View::row_major(wv.data(), inp),
                    0.0,
                    &mut dx,
                    0,
                    inp,
                    1,
                );
                out.push((*x, dx));
            }
            if needs(*w) {
                let mut dw = vec![0.0; outf * inp];
                gemm(
                    outf,
                    n,
                    inp,
                    1.0,
                    View::transposed(dout, outf),
                    View::row_major(xv.data(), inp),
                    0.0,
                    &mut dw,
                    0,
                    inp,
                    1,
                );
                out.push((*w, dw));
            }
            if let Some(b) = b {
                let mut db = vec![0.0; outf];
                for row in dout.chunks_exact(outf) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                out.push((*b, db));
            }
            out
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let mut out = Vec::new();
            if needs(*a) {
                let mut da = vec![0.0; m * k];
                gemm(
                    m,
                    n,
                    k,
                    1.0,
                    View::row_major(dout, n),
                    View::transposed(bv.data(), n),
                    0.0,
                    &mut da,
                    0,
                    k,
                    1,
                );
                out.push((*a, da));
            }
            if needs(*b) {
                let mut db = vec![0.0; k * n];
                gemm(
                    k,
                    m,
                    n,
                    1.0,
                    View::transposed(av.data(), k),
                    View::row_major(dout, n),
                    0.0,
                    &mut db,
                    0,
                    n,
                    1,
                );
                out.push((*b, db));
            }
            out
        }
        Op::Conv1d {
            x,
            w,
            stride,
            padding,
        } => {
            let (xv, wv) = (val(*x), val(*w));
            let (t, cin) = (xv.shape()[0], xv.shape()[1]);
            let (cout, k) = (wv.shape()[0], wv.shape()[2]);
            let t_out = node.value.shape()[0];
            let mut out = Vec::new();
            if needs(*x) {
                let tp = t + 2 * padding;
                let mut dpad = vec![0.0; tp * cin];
                for tap in 0..k {
                    gemm(
                        t_out,
                        cout,
                        cin,
                        1.0,
                        View::row_major(dout, cout),
                        View::new(wv.data(), tap, cin * k, k),
                        1.0,
                        &mut dpad,
                        tap * cin,
                        stride * cin,
                        1,
                    );
                }
                out.push((*x, dpad[padding * cin..(padding + t) * cin].to_vec()));
            }
            if needs(*w) {
                let padded = pad_rows(xv.data(), t, cin, *padding);
                let mut dw = vec![0.0; cout * cin * k];
                for tap in 0..k {
                    gemm(
                        cout,
                        t_out,
                        cin,
                        1.0,
                        View::transposed(dout, cout),
                        View::new(&padded, tap * cin, stride * cin, 1),
                        1.0,
                        &mut dw,
                        tap,
                        cin * k,
                        k,
                    );
                }
                out.push((*w, dw));
            }
            out
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let g = val(*gamma).data();
            let c = g.len();
            let t = xhat.len() / c;
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for (r, row) in dout.chunks_exact(c).enumerate() {
                for ch in 0..c {
                    dgamma[ch] += row[ch] * xhat[r * c + ch];
                    dbeta[ch] += row[ch];
                }
            }
            let mut out = vec![(*gamma, dgamma.clone()), (*beta, dbeta.clone())];
            if needs(*x) {
                let mut dx = vec![0.0; t * c];
                if *train {
                    // dxhat = dy·γ; dx = inv_std/T · (T·dxhat − Σdxhat − x̂·Σ(dxhat·x̂))
                    let tf = t as f64;
                    for ch in 0..c {
                        let sum_dxhat = dbeta[ch] * g[ch];
                        let sum_dxhat_xhat = dgamma[ch] * g[ch];
                        for r in 0..t {
                            let idx = r * c + ch;
                            let dxhat = dout[idx] * g[ch];
                            dx[idx] = inv_std[ch] / tf
                                * (tf * dxhat - sum_dxhat - xhat[idx] * sum_dxhat_xhat);
                        }
                    }
                } else {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        let ch = idx % c;
                        *d = dout[idx] * g[ch] * inv_std[ch];
                    }
                }
                out.push((*x, dx));
            }
            out
        }
        Op::Prelu { x, slope } => {
            let xv = val(*x);
            let a = val(*slope).data();
            let c = xv.cols();
            let shared = a.len() == 1;
            let mut dx = vec![0.0; xv.len()];
            let mut da = vec![0.0; a.len()];
            for (idx, &v) in xv.data().iter().enumerate() {
                let ch = if shared { 0 } else { idx % c };
                if v >= 0.0 {
                    dx[idx] = dout[idx];
                } else {
                    dx[idx] = a[ch] * dout[idx];
                    da[ch] += v * dout[idx];
                }
            }
            vec![(*x, dx), (*slope, da)]
        }
        Op::LeakyRelu(x, s) => {
            let xv = val(*x).data();
            vec![(
                *x,
                xv.iter()
                    .zip(dout)
                    .map(|(&v, g)| if v >= 0.0 { *g } else { s * g })
                    .collect(),
            )]
        }
        Op::Dropout { x, mask } => vec![(*x, dout.iter().zip(mask).map(|(g, m)| g * m).collect())],
        Op::Softmax(x) => {
            let y = node.value.data();
            let c = node.value.cols();
            let mut dx = vec![0.0; y.len()];
            for ((yr, gr), dr) in y
                .chunks_exact(c)
                .zip(dout.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for k in 0..c {
                    dr[k] = yr[k] * (gr[k] - dot);
                }
            }
            vec![(*x, dx)]
        }
        Op::LogSoftmax(x) => {
            let y = node.value.data();
            let c = node.value.cols();
            let mut dx = vec![0.0; y.len()];
            for ((yr, gr), dr) in y
                .chunks_exact(c)
                .zip(dout.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
            {
                let total: f64 = gr.iter().sum();
                for k in 0..c {
                    dr[k] = gr[k] - yr[k].exp() * total;
                }
            }
            vec![(*x, dx)]
        }
        Op::OuterAdd(u, v) => {
            let (m, n) = (val(*u).len(), val(*v).len());
            let mut du = vec![0.0; m];
            let mut dv = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    let g = dout[i * n + j];
                    du[i] += g;
                    dv[j] += g;
                }
            }
            vec![(*u, du), (*v, dv)]
        }
        Op::ConcatCols(parts) => {
            let rows = node.value.rows();
            let total = node.value.cols();
            let mut out = Vec::with_capacity(parts.len());
            let mut col = 0;
            for &p in parts {
                let w = val(p).cols();
                let mut g = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    g.extend_from_slice(&dout[r * total + col..r * total + col + w]);
                }
                out.push((p, g));
                col += w;
            }
            out
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let n = val(p).len();
                    let g = dout[offset..offset + n].to_vec();
                    offset += n;
                    (p, g)
                })
                .collect()
        }
        Op::SliceRows { x, start } => {
            let c = node.value.cols();
            let mut g = vec![0.0; val(*x).len()];
            g[start * c..start * c + dout.len()].copy_from_slice(dout);
            vec![(*x, g)]
        }
        Op::Nll { x, target } => {
            let mut g = vec![0.0; val(*x).len()];
            g[*target] = -dout[0];
            vec![(*x, g)]
        }
        Op::ScalarWithGrad { x, local_grad } => {
            vec![(*x, local_grad.iter().map(|g| g * dout[0]).collect())]
        }
    }
}
