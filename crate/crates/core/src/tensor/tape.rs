//! Reverse-mode differentiation over a flat operation tape.
//!
//! Every operation appends one node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse and produces plain gradient matrices.
//! [`Tape::grad_recorded`] instead records the backward pass as new tape nodes,
//! so the resulting gradient can itself be differentiated (double backward).
//! Recorded backward is available for the affine / concat / leaky-relu /
//! dropout / reduction family only.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    MulConst(Var, Matrix),
    Dropout(Var, Matrix),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    ColSums(Var),
    RowSums(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::MatMulTN(..) => "matmul_tn",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::Dropout(..) => "dropout",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::ColSums(..) => "col_sums",
            Op::RowSums(..) => "row_sums",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::MatMulTN(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::AddConst(a)
            | Op::MulConst(a, _)
            | Op::Dropout(a, _)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Softplus(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::SliceCols(a, _)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::ColSums(a)
            | Op::RowSums(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Matrix, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf value".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable leaf (parameters and inputs whose gradient is wanted).
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = gemm(self.value(a), false, self.value(b), false)?;
        self.push(Op::MatMul(a, b), v)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = gemm(self.value(a), false, self.value(b), true)?;
        self.push(Op::MatMulNT(a, b), v)
    }

    /// `a^T * b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = gemm(self.value(a), true, self.value(b), false)?;
        self.push(Op::MatMulTN(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut v = self.value(a).clone();
        let row = self.value(b).data().to_vec();
        for i in 0..r {
            for (x, y) in v.row_mut(i).iter_mut().zip(&row) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, b), v)
    }

    /// `x * w + b`
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn add_const(&mut self, a: Var, k: &Matrix) -> Result<Var> {
        if self.shape(a) != k.shape() {
            return Err(Error::Shape("add_const".into()));
        }
        let v = self.value(a).zip_map(k, |x, y| x + y);
        self.push(Op::AddConst(a), v)
    }

    pub fn mul_const(&mut self, a: Var, k: Matrix) -> Result<Var> {
        if self.shape(a) != k.shape() {
            return Err(Error::Shape("mul_const".into()));
        }
        let v = self.value(a).zip_map(&k, |x, y| x * y);
        self.push(Op::MulConst(a, k), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = self.value(a).scale(k);
        self.push(Op::Scale(a, k), v)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + k);
        self.push(Op::AddScalar(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
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
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::NonFinite("sqrt of negative value".into()));
        }
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), v)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..x.rows() {
            let row = v.row_mut(r);
            let lse = log_sum_exp(row);
            for e in row.iter_mut() {
                *e -= lse;
            }
        }
        self.push(Op::LogSoftmax(a), v)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hstack(&mats)?;
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if start > end || end > self.shape(a).1 {
            return Err(Error::Shape(format!(
                "slice {start}..{end} of {} columns",
                self.shape(a).1
            )));
        }
        let v = self.value(a).slice_cols(start, end);
        self.push(Op::SliceCols(a, start), v)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).reshape(rows, cols)?;
        self.push(Op::Reshape(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let n = m.data().len();
        if n == 0 {
            return Err(Error::Shape("mean of empty matrix".into()));
        }
        let v = Matrix::scalar(m.sum() / n as f64);
        self.push(Op::MeanAll(a), v)
    }

    /// Sum over rows, giving `1 x c`.
    pub fn col_sums(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).col_sums();
        self.push(Op::ColSums(a), v)
    }

    /// Sum over columns, giving `r x 1`.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).row_sums();
        self.push(Op::RowSums(a), v)
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != 1 {
            return Err(Error::Shape("broadcast_rows expects a single row".into()));
        }
        let mut data = Vec::with_capacity(n * m.cols());
        for _ in 0..n {
            data.extend_from_slice(m.data());
        }
        let v = Matrix::from_vec(n, m.cols(), data)?;
        self.push(Op::BroadcastRows(a), v)
    }

    /// Repeats an `r x 1` column `c` times.
    pub fn broadcast_cols(&mut self, a: Var, c: usize) -> Result<Var> {
        let m = self.value(a);
        if m.cols() != 1 {
            return Err(Error::Shape("broadcast_cols expects a single column".into()));
        }
        let data = m.data().iter().flat_map(|&x| std::iter::repeat(x).take(c)).collect();
        let v = Matrix::from_vec(m.rows(), c, data)?;
        self.push(Op::BroadcastCols(a), v)
    }

    /// Training-mode batch normalization over the rows of `x`.
    ///
    /// Uses the biased batch variance for normalization and returns the batch
    /// mean and unbiased variance for running-statistics updates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(Error::Shape("batch_norm affine parameters".into()));
        }
        if n < 2 {
            return Err(Error::Shape("batch_norm needs at least two rows".into()));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / n as f64 + eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, c);
        for r in 0..n {
            let src = xv.row(r);
            for (j, dst) in xhat.row_mut(r).iter_mut().enumerate() {
                *dst = (src[j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = xhat.clone();
        for r in 0..n {
            for (j, dst) in out.row_mut(r).iter_mut().enumerate() {
                *dst = *dst * g[j] + b[j];
            }
        }
        let stats = BatchStats {
            mean,
            var: var.iter().map(|s| s / (n - 1) as f64).collect(),
        };
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
        )?;
        Ok((v, stats))
    }

    /// Inverted dropout with drop probability `p`; the mask is frozen on the tape.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p}")));
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let u = Uniform::new(0.0, 1.0);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if u.sample(rng) < p { 0.0 } else { keep })
            .collect();
        let mask = Matrix::from_vec(r, c, mask)?;
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(Op::Dropout(a, mask), v)
    }

    /// Gumbel-perturbed, temperature-scaled logits `(logits + g) / tau`.
    /// Softmax of the result is the Gumbel-softmax sample.
    pub fn gumbel_logits<R: Rng + ?Sized>(&mut self, logits: Var, tau: f64, rng: &mut R) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("gumbel temperature {tau}")));
        }
        let (r, c) = self.shape(logits);
        let noise = Matrix::from_vec(r, c, (0..r * c).map(|_| sample_gumbel(rng)).collect())?;
        let perturbed = self.add_const(logits, &noise)?;
        self.scale(perturbed, 1.0 / tau)
    }

    pub fn gumbel_softmax<R: Rng + ?Sized>(&mut self, logits: Var, tau: f64, rng: &mut R) -> Result<Var> {
        let z = self.gumbel_logits(logits, tau, rng)?;
        self.softmax(z)
    }

    /// Gradient of scalar `loss` with respect to every differentiable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with_seed(loss, Matrix::scalar(1.0))
    }

    /// Vector-Jacobian product of `out` with `seed`.
    pub fn backward_with_seed(&self, out: Var, seed: Matrix) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(
                "backward on a node that was never evaluated".into(),
            ));
        }
        if seed.shape() != self.shape(out) {
            return Err(Error::Shape("backward seed".into()));
        }
        if !seed.is_finite() {
            return Err(Error::NonFinite("backward seed".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, gemm(g, false, self.value(*b), true)?);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gemm(self.value(*a), true, g, false)?);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, gemm(g, false, self.value(*b), false)?);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gemm(g, true, self.value(*a), false)?);
                }
            }
            Op::MatMulTN(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, gemm(self.value(*b), false, g, true)?);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gemm(self.value(*a), false, g, false)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.col_sums());
                }
            }
            Op::AddConst(a) | Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulConst(a, k) | Op::Dropout(a, k) => {
                self.accumulate(grads, *a, g.zip_map(k, |x, y| x * y))
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.scale(*k)),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let s = *slope;
                self.accumulate(grads, *a, g.zip_map(x, |g, x| if x > 0.0 { g } else { s * g }));
            }
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(out, |g, y| g * (1.0 - y * y))),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |g, y| g * y)),
            Op::Sqrt(a) => {
                if out.data().iter().any(|&y| y == 0.0) {
                    return Err(Error::NonFinite("gradient of sqrt at zero".into()));
                }
                self.accumulate(grads, *a, g.zip_map(out, |g, y| 0.5 * g / y));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |g, x| 2.0 * g * x));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |g, x| g * sigmoid(x)));
            }
            Op::Softmax(a) => {
                let mut dx = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dot: f64 = g.row(r).iter().zip(y).map(|(a, b)| a * b).sum();
                    for (d, yv) in dx.row_mut(r).iter_mut().zip(y) {
                        *d = yv * (*d - dot);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::LogSoftmax(a) => {
                let mut dx = g.clone();
                for r in 0..out.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (d, ly) in dx.row_mut(r).iter_mut().zip(out.row(r)) {
                        *d -= ly.exp() * total;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g.slice_cols(start, start + w));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                if self.wants(*a) {
                    let (r, c) = self.shape(*a);
                    let mut dx = Matrix::zeros(r, c);
                    let w = g.cols();
                    for i in 0..r {
                        dx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                    }
                    self.accumulate(grads, *a, dx);
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, g.reshape(r, c)?);
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::MeanAll(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::ColSums(a) => {
                let (r, c) = self.shape(*a);
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    dx.row_mut(i).copy_from_slice(g.data());
                }
                self.accumulate(grads, *a, dx);
            }
            Op::RowSums(a) => {
                let (r, c) = self.shape(*a);
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    let v = g.get(i, 0);
                    dx.row_mut(i).fill(v);
                }
                self.accumulate(grads, *a, dx);
            }
            Op::BroadcastRows(a) => self.accumulate(grads, *a, g.col_sums()),
            Op::BroadcastCols(a) => self.accumulate(grads, *a, g.row_sums()),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, g.col_sums());
                }
                if self.wants(*gamma) {
                    self.accumulate(grads, *gamma, g.zip_map(xhat, |a, b| a * b).col_sums());
                }
                if self.wants(*x) {
                    let gam = self.value(*gamma).data();
                    let mut sum_d = vec![0.0; c];
                    let mut sum_dx = vec![0.0; c];
                    for r in 0..n {
                        for j in 0..c {
                            let d = g.get(r, j) * gam[j];
                            sum_d[j] += d;
                            sum_dx[j] += d * xhat.get(r, j);
                        }
                    }
                    let nf = n as f64;
                    let mut dx = Matrix::zeros(n, c);
                    for r in 0..n {
                        for j in 0..c {
                            let d = g.get(r, j) * gam[j];
                            let v = inv_std[j] / nf * (nf * d - sum_d[j] - xhat.get(r, j) * sum_dx[j]);
                            dx.set(r, j, v);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
        }
        Ok(())
    }

    /// Gradient of `sum(seed ⊙ out)` with respect to `wrt`, recorded as tape
    /// nodes so it can be differentiated again.
    ///
    /// Only the affine / concat / leaky-relu / dropout / reduction family is
    /// supported on the path between `wrt` and `out`.
    pub fn grad_recorded(&mut self, out: Var, wrt: Var, seed: Option<Matrix>) -> Result<Var> {
        if out.0 >= self.nodes.len() || wrt.0 > out.0 {
            return Err(Error::InvalidArgument("grad_recorded: node order".into()));
        }
        let (wr, wc) = self.shape(wrt);
        let span = out.0 - wrt.0 + 1;
        let mut on_path = vec![false; span];
        on_path[0] = true;
        for i in wrt.0 + 1..=out.0 {
            on_path[i - wrt.0] = self.nodes[i]
                .op
                .inputs()
                .iter()
                .any(|p| p.0 >= wrt.0 && on_path[p.0 - wrt.0]);
        }
        if !on_path[span - 1] {
            return self.constant(Matrix::zeros(wr, wc));
        }
        let seed = match seed {
            Some(s) if s.shape() == self.shape(out) => s,
            Some(_) => return Err(Error::Shape("grad_recorded seed".into())),
            None => {
                let (r, c) = self.shape(out);
                Matrix::filled(r, c, 1.0)
            }
        };
        let mut gvars: Vec<Option<Var>> = vec![None; span];
        gvars[span - 1] = Some(self.constant(seed)?);

        for i in (wrt.0 + 1..=out.0).rev() {
            if !on_path[i - wrt.0] {
                continue;
            }
            let Some(g) = gvars[i - wrt.0] else { continue };
            let op = self.nodes[i].op.clone();
            let relevant = |v: &Var| v.0 >= wrt.0 && on_path[v.0 - wrt.0];
            let mut contrib: Vec<(Var, Var)> = Vec::new();
            match op {
                Op::MatMul(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, self.matmul_nt(g, b)?));
                    }
                    if relevant(&b) {
                        contrib.push((b, self.matmul_tn(a, g)?));
                    }
                }
                Op::MatMulNT(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, self.matmul(g, b)?));
                    }
                    if relevant(&b) {
                        contrib.push((b, self.matmul_tn(g, a)?));
                    }
                }
                Op::MatMulTN(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, self.matmul_nt(b, g)?));
                    }
                    if relevant(&b) {
                        contrib.push((b, self.matmul(a, g)?));
                    }
                }
                Op::Add(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, g));
                    }
                    if relevant(&b) {
                        contrib.push((b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, g));
                    }
                    if relevant(&b) {
                        contrib.push((b, self.scale(g, -1.0)?));
                    }
                }
                Op::Mul(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, self.mul(g, b)?));
                    }
                    if relevant(&b) {
                        contrib.push((b, self.mul(g, a)?));
                    }
                }
                Op::AddRow(a, b) => {
                    if relevant(&a) {
                        contrib.push((a, g));
                    }
                    if relevant(&b) {
                        contrib.push((b, self.col_sums(g)?));
                    }
                }
                Op::AddConst(a) | Op::AddScalar(a) => contrib.push((a, g)),
                Op::MulConst(a, k) | Op::Dropout(a, k) => contrib.push((a, self.mul_const(g, k)?)),
                Op::Scale(a, k) => contrib.push((a, self.scale(g, k)?)),
                Op::Relu(a) => {
                    let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    contrib.push((a, self.mul_const(g, mask)?));
                }
                Op::LeakyRelu(a, slope) => {
                    let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                    contrib.push((a, self.mul_const(g, mask)?));
                }
                Op::Square(a) => {
                    let two_a = self.scale(a, 2.0)?;
                    contrib.push((a, self.mul(g, two_a)?));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(p).1;
                        if relevant(&p) {
                            contrib.push((p, self.slice_cols(g, start, start + w)?));
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(a);
                    let w = self.shape(g).1;
                    let mut pieces = Vec::new();
                    if start > 0 {
                        pieces.push(self.constant(Matrix::zeros(r, start))?);
                    }
                    pieces.push(g);
                    if start + w < c {
                        pieces.push(self.constant(Matrix::zeros(r, c - start - w))?);
                    }
                    contrib.push((a, self.concat(&pieces)?));
                }
                Op::Reshape(a) => {
                    let (r, c) = self.shape(a);
                    contrib.push((a, self.reshape(g, r, c)?));
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    let row = self.broadcast_cols(g, c)?;
                    contrib.push((a, self.broadcast_rows(row, r)?));
                }
                Op::MeanAll(a) => {
                    let (r, c) = self.shape(a);
                    let scaled = self.scale(g, 1.0 / (r * c) as f64)?;
                    let row = self.broadcast_cols(scaled, c)?;
                    contrib.push((a, self.broadcast_rows(row, r)?));
                }
                Op::ColSums(a) => {
                    let r = self.shape(a).0;
                    contrib.push((a, self.broadcast_rows(g, r)?));
                }
                Op::RowSums(a) => {
                    let c = self.shape(a).1;
                    contrib.push((a, self.broadcast_cols(g, c)?));
                }
                Op::BroadcastRows(a) => contrib.push((a, self.col_sums(g)?)),
                Op::BroadcastCols(a) => contrib.push((a, self.row_sums(g)?)),
                other => {
                    return Err(Error::Unsupported(format!(
                        "second-order gradient through {}",
                        other.name()
                    )))
                }
            }
            for (target, gv) in contrib {
                if !relevant(&target) {
                    continue;
                }
                let slot = target.0 - wrt.0;
                gvars[slot] = Some(match gvars[slot] {
                    Some(prev) => self.add(prev, gv)?,
                    None => gv,
                });
            }
        }
        match gvars[0] {
            Some(v) => Ok(v),
            None => self.constant(Matrix::zeros(wr, wc)),
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(x: &Matrix) -> Matrix {
    let mut v = x.clone();
    for r in 0..x.rows() {
        let row = v.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for e in row.iter_mut() {
            *e = (*e - max).exp();
            total += *e;
        }
        for e in row.iter_mut() {
            *e /= total;
        }
    }
    v
}

/// Standard Gumbel draw `-ln(-ln U)` with `U` strictly inside (0, 1).
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    -(-u.ln()).ln()
}
