//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive as it is evaluated. Values are computed
//! eagerly; [`Tape::backward`] walks the record in reverse once and leaves a
//! gradient for every node that depends on a parameter leaf. Parameters enter
//! through [`Tape::param`], fixed inputs through [`Tape::constant`]; nodes
//! built only from constants carry no gradient and are skipped on the way back.
//!
//! Every forward op checks its output for NaN/Inf and fails with the op name
//! instead of letting the value propagate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, gemm, MatRef};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-feature batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/N) variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulBt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    MulCol { a: Var, col: Var },
    Scale { a: Var, c: f64 },
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu { a: Var, slope: f64 },
    Square(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumSq(Var),
    LseRows { a: Var, softmax: Vec<f64> },
    Pick { a: Var, idx: Vec<usize> },
    ConcatCols { a: Var, b: Var },
    RowNormalize { a: Var, norms: Vec<f64> },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
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

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::Contract {
                reason: "tape already consumed by backward; record a new forward pass",
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. }
            | Op::MatMulBt { a, b, .. }
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow { a, row: b }
            | Op::MulRow { a, row: b }
            | Op::MulCol { a, col: b }
            | Op::ConcatCols { a, b } => vec![a, b],
            Op::Scale { a, .. }
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::LeakyRelu { a, .. }
            | Op::Square(a)
            | Op::Clamp { a, .. }
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::SumSq(a)
            | Op::LseRows { a, .. }
            | Op::Pick { a, .. }
            | Op::RowNormalize { a, .. } => vec![a],
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        }
    }

    fn leaf(&mut self, t: &Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn bind(&mut self, t: &Tensor, trainable: bool) -> Var {
        self.leaf(t, trainable)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shapes are validated on record")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last backward's loss with respect to `v`, if `v`
    /// depends on a parameter.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn binary_same(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(name, shape, value, op)
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::row_major(self.value(a), k),
            MatRef::row_major(self.value(b), n),
            0.0,
            &mut out,
        );
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n })
    }

    /// `a (m×k) · bᵀ` for `b (n×k)`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_bt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::row_major(self.value(a), k),
            MatRef::transposed(self.value(b), k),
            0.0,
            &mut out,
        );
        self.push("matmul_bt", vec![m, n], out, Op::MatMulBt { a, b, m, k, n })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push("sub", self.shape(a).to_vec(), value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), value, Op::Mul(a, b))
    }

    fn check_row(&self, name: &'static str, a: Var, row: Var) -> Result<(usize, usize)> {
        let (m, n) = rows_cols(self.shape(a));
        if self.shape(a).len() != 2 || self.value(row).len() != n {
            return Err(Error::shape(name, self.shape(a), self.shape(row)));
        }
        Ok((m, n))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.check_row("add_row", a, row)?;
        let r = self.value(row);
        let value = self.value(a).iter().enumerate().map(|(i, x)| x + r[i % n]).collect();
        self.push("add_row", self.shape(a).to_vec(), value, Op::AddRow { a, row })
    }

    /// Scales every row of an `m×n` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.check_row("mul_row", a, row)?;
        let r = self.value(row);
        let value = self.value(a).iter().enumerate().map(|(i, x)| x * r[i % n]).collect();
        self.push("mul_row", self.shape(a).to_vec(), value, Op::MulRow { a, row })
    }

    /// Scales row `i` of an `m×n` matrix by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(a));
        if self.shape(a).len() != 2 || self.value(col).len() != m {
            return Err(Error::shape("mul_col", self.shape(a), self.shape(col)));
        }
        let c = self.value(col);
        let value = self.value(a).iter().enumerate().map(|(i, x)| x * c[i / n]).collect();
        self.push("mul_col", self.shape(a).to_vec(), value, Op::MulCol { a, col })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| c * x, Op::Scale { a, c })
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, libm::exp, Op::Exp(a))
    }

    /// Natural log; non-positive inputs fail as a non-finite result.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.map("log", a, libm::log, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, kernels::softplus, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.map(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu { a, slope },
        )
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    /// Clips into `[lo, hi]`; the gradient is zero where clipping was active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map("clamp", a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", vec![1], vec![s], Op::Mean(a))
    }

    /// Mean over the batch axis: `m×n → n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(a));
        let mut out = vec![0.0; n];
        for row in self.value(a).chunks_exact(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        self.push("mean_rows", vec![n], out, Op::MeanRows(a))
    }

    /// Squared L2 norm of all elements.
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().map(|x| x * x).sum();
        self.push("sum_sq", vec![1], vec![s], Op::SumSq(a))
    }

    /// Row-wise log-sum-exp: `m×n → m`.
    pub fn lse_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(a));
        let mut softmax = vec![0.0; m * n];
        let mut out = Vec::with_capacity(m);
        for (row, sm) in self.value(a).chunks_exact(n).zip(softmax.chunks_exact_mut(n)) {
            out.push(kernels::lse_unchecked(row));
            kernels::softmax_into(row, sm);
        }
        self.push("lse_rows", vec![m], out, Op::LseRows { a, softmax })
    }

    /// Picks `a[i, idx[i]]` from each row (0-based column indices).
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(a));
        if idx.len() != m {
            return Err(Error::shape("pick", self.shape(a), &[idx.len()]));
        }
        if idx.iter().any(|&j| j >= n) {
            return Err(Error::domain("pick", "column index out of range"));
        }
        let v = self.value(a);
        let out = idx.iter().enumerate().map(|(i, &j)| v[i * n + j]).collect();
        self.push("pick", vec![m], out, Op::Pick { a, idx: idx.to_vec() })
    }

    /// `[a | b]` along the feature axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = rows_cols(self.shape(a));
        let (mb, nb) = rows_cols(self.shape(b));
        if ma != mb || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        let mut out = Vec::with_capacity(ma * (na + nb));
        for (ra, rb) in self.value(a).chunks_exact(na).zip(self.value(b).chunks_exact(nb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        self.push("concat_cols", vec![ma, na + nb], out, Op::ConcatCols { a, b })
    }

    /// Divides each row by its L2 norm; zero rows are a domain error.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (_, n) = rows_cols(self.shape(a));
        let v = self.value(a);
        let norms: Vec<f64> = v
            .chunks_exact(n)
            .map(|r| libm::sqrt(r.iter().map(|x| x * x).sum()))
            .collect();
        if norms.contains(&0.0) {
            return Err(Error::domain("row_normalize", "zero-norm row"));
        }
        let out = v.iter().enumerate().map(|(i, x)| x / norms[i / n]).collect();
        self.push("row_normalize", self.shape(a).to_vec(), out, Op::RowNormalize { a, norms })
    }

    /// Training-mode batch normalization of an `m×n` batch.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (m, n) = rows_cols(self.shape(x));
        if self.shape(x).len() != 2 || self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("batch_norm", self.shape(x), self.shape(gamma)));
        }
        if m < 2 {
            return Err(Error::domain("batch_norm", "training mode needs a batch of at least 2"));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; n];
        for row in xv.chunks_exact(n) {
            for (s, v) in mean.iter_mut().zip(row) {
                *s += v;
            }
        }
        mean.iter_mut().for_each(|s| *s /= m as f64);
        let mut var = vec![0.0; n];
        for row in xv.chunks_exact(n) {
            for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|s| *s /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        for i in 0..m * n {
            let j = i % n;
            xhat[i] = (xv[i] - mean[j]) * inv_std[j];
            out[i] = xhat[i] * g[j] + b[j];
        }
        let stats = BatchStats { mean, var };
        let y = self.push(
            "batch_norm",
            vec![m, n],
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )?;
        Ok((y, stats))
    }

    /// Back-propagates from a scalar `loss`. Allowed once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract {
                reason: "backward already ran on this tape",
            });
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract {
                reason: "backward needs a scalar loss",
            });
        }
        self.consumed = true;
        let Tape { nodes, grads, .. } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        if !nodes[loss.0].needs_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let wants = |v: Var| nodes[v.0].needs_grad;
            let val = |v: Var| nodes[v.0].value.as_slice();
            let len = |v: Var| nodes[v.0].value.len();
            match node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, n } => {
                    if wants(a) {
                        let ga = accumulate(&mut grads[a.0], m * k);
                        gemm(m, n, k, MatRef::row_major(&g, n), MatRef::transposed(val(b), n), 1.0, ga);
                    }
                    if wants(b) {
                        let gb = accumulate(&mut grads[b.0], k * n);
                        gemm(k, m, n, MatRef::transposed(val(a), k), MatRef::row_major(&g, n), 1.0, gb);
                    }
                }
                Op::MatMulBt { a, b, m, k, n } => {
                    if wants(a) {
                        let ga = accumulate(&mut grads[a.0], m * k);
                        gemm(m, n, k, MatRef::row_major(&g, n), MatRef::row_major(val(b), k), 1.0, ga);
                    }
                    if wants(b) {
                        let gb = accumulate(&mut grads[b.0], n * k);
                        gemm(n, m, k, MatRef::transposed(&g, n), MatRef::row_major(val(a), k), 1.0, gb);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if wants(a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                    }
                    if wants(b) {
                        let gb = accumulate(&mut grads[b.0], g.len());
                        gb.iter_mut().zip(&g).for_each(|(s, d)| *s += sign * d);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let bv = val(b);
                        let ga = accumulate(&mut grads[a.0], g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    if wants(b) {
                        let av = val(a);
                        let gb = accumulate(&mut grads[b.0], g.len());
                        for i in 0..g.len() {
                            gb[i] += g[i] * av[i];
                        }
                    }
                }
                Op::AddRow { a, row } => {
                    let n = len(row);
                    if wants(a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                    }
                    if wants(row) {
                        let gr = accumulate(&mut grads[row.0], n);
                        for (i, d) in g.iter().enumerate() {
                            gr[i % n] += d;
                        }
                    }
                }
                Op::MulRow { a, row } => {
                    let n = len(row);
                    if wants(a) {
                        let r = val(row);
                        let ga = accumulate(&mut grads[a.0], g.len());
                        for (i, d) in g.iter().enumerate() {
                            ga[i] += d * r[i % n];
                        }
                    }
                    if wants(row) {
                        let av = val(a);
                        let gr = accumulate(&mut grads[row.0], n);
                        for (i, d) in g.iter().enumerate() {
                            gr[i % n] += d * av[i];
                        }
                    }
                }
                Op::MulCol { a, col } => {
                    let n = g.len() / len(col);
                    if wants(a) {
                        let c = val(col);
                        let ga = accumulate(&mut grads[a.0], g.len());
                        for (i, d) in g.iter().enumerate() {
                            ga[i] += d * c[i / n];
                        }
                    }
                    if wants(col) {
                        let av = val(a);
                        let gc = accumulate(&mut grads[col.0], len(col));
                        for (i, d) in g.iter().enumerate() {
                            gc[i / n] += d * av[i];
                        }
                    }
                }
                Op::Scale { a, c } => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(&g).for_each(|(s, d)| *s += c * d);
                }
                Op::AddScalar(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Exp(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * node.value[i];
                    }
                }
                Op::Log(a) => {
                    let av = val(a);
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] / av[i];
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        let s = node.value[i];
                        ga[i] += g[i] * s * (1.0 - s);
                    }
                }
                Op::Softplus(a) => {
                    let av = val(a);
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * kernels::sigmoid(av[i]);
                    }
                }
                Op::LeakyRelu { a, slope } => {
                    let av = val(a);
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += if av[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                }
                Op::Square(a) => {
                    let av = val(a);
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        ga[i] += 2.0 * av[i] * g[i];
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    let av = val(a);
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        if av[i] >= lo && av[i] <= hi {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Sum(a) => {
                    let ga = accumulate(&mut grads[a.0], len(a));
                    ga.iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Mean(a) => {
                    let d = g[0] / len(a) as f64;
                    let ga = accumulate(&mut grads[a.0], len(a));
                    ga.iter_mut().for_each(|s| *s += d);
                }
                Op::MeanRows(a) => {
                    let n = g.len();
                    let m = len(a) / n;
                    let ga = accumulate(&mut grads[a.0], m * n);
                    for (i, s) in ga.iter_mut().enumerate() {
                        *s += g[i % n] / m as f64;
                    }
                }
                Op::SumSq(a) => {
                    let av = val(a);
                    let ga = accumulate(&mut grads[a.0], av.len());
                    for i in 0..av.len() {
                        ga[i] += 2.0 * av[i] * g[0];
                    }
                }
                Op::LseRows { a, ref softmax } => {
                    let n = softmax.len() / g.len();
                    let ga = accumulate(&mut grads[a.0], softmax.len());
                    for (i, s) in ga.iter_mut().enumerate() {
                        *s += g[i / n] * softmax[i];
                    }
                }
                Op::Pick { a, ref idx } => {
                    let n = len(a) / idx.len();
                    let ga = accumulate(&mut grads[a.0], len(a));
                    for (i, &j) in idx.iter().enumerate() {
                        ga[i * n + j] += g[i];
                    }
                }
                Op::ConcatCols { a, b } => {
                    let m = rows_cols(&nodes[a.0].shape).0;
                    let (na, nb) = (len(a) / m, len(b) / m);
                    if wants(a) {
                        let ga = accumulate(&mut grads[a.0], m * na);
                        for i in 0..m {
                            for j in 0..na {
                                ga[i * na + j] += g[i * (na + nb) + j];
                            }
                        }
                    }
                    if wants(b) {
                        let gb = accumulate(&mut grads[b.0], m * nb);
                        for i in 0..m {
                            for j in 0..nb {
                                gb[i * nb + j] += g[i * (na + nb) + na + j];
                            }
                        }
                    }
                }
                Op::RowNormalize { a, ref norms } => {
                    let n = g.len() / norms.len();
                    let y = &node.value;
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for (r, &norm) in norms.iter().enumerate() {
                        let span = r * n..(r + 1) * n;
                        let dot: f64 = y[span.clone()].iter().zip(&g[span.clone()]).map(|(p, q)| p * q).sum();
                        for i in span {
                            ga[i] += (g[i] - y[i] * dot) / norm;
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    ref xhat,
                    ref inv_std,
                } => {
                    let n = inv_std.len();
                    let m = g.len() / n;
                    if wants(gamma) {
                        let gg = accumulate(&mut grads[gamma.0], n);
                        for i in 0..g.len() {
                            gg[i % n] += g[i] * xhat[i];
                        }
                    }
                    if wants(beta) {
                        let gb = accumulate(&mut grads[beta.0], n);
                        for i in 0..g.len() {
                            gb[i % n] += g[i];
                        }
                    }
                    if wants(x) {
                        let gam = val(gamma);
                        let mut sum_d = vec![0.0; n];
                        let mut sum_dx = vec![0.0; n];
                        for i in 0..g.len() {
                            let d = g[i] * gam[i % n];
                            sum_d[i % n] += d;
                            sum_dx[i % n] += d * xhat[i];
                        }
                        let gx = accumulate(&mut grads[x.0], g.len());
                        let mf = m as f64;
                        for i in 0..g.len() {
                            let j = i % n;
                            let d = g[i] * gam[j];
                            gx[i] += inv_std[j] / mf * (mf * d - sum_d[j] - xhat[i] * sum_dx[j]);
                        }
                    }
                }
            }
        }

        for (node, g) in nodes.iter().zip(grads.iter()) {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }
}
