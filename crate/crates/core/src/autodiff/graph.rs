use std::cell::{Cell, Ref, RefCell};
use std::ops::Range;
use std::rc::Rc;

use rand::Rng;

use super::tensor::{log_softmax_rows, matmul_raw, softmax_rows, transpose_raw};
use super::{Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    LogSigmoid(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    RepeatRows(Var),
    SpanMean(Var, Vec<Range<usize>>),
    MaskedFill(Var, Vec<bool>),
    Dropout(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSums(..) => "row_sums",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Pick(..) => "pick",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::RepeatRows(..) => "repeat_rows",
            Op::SpanMean(..) => "span_mean",
            Op::MaskedFill(..) => "masked_fill",
            Op::Dropout(..) => "dropout",
            Op::LayerNorm { .. } => "layer_norm",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of one forward pass.
///
/// Nodes are appended in evaluation order, so the tape index is already a
/// topological order. Backward may run once per tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, Var)>>,
    backward_done: Cell<bool>,
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::InvalidArgument(format!(
            "{op}: expected a matrix, got shape {:?}",
            t.shape()
        ))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let requires_grad = self.op_requires_grad(&op);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let nodes = self.nodes.borrow();
        let rg = |v: &Var| nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => rg(a) || rg(b),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(rg),
            Op::LayerNorm { x, gamma, beta, .. } => rg(x) || rg(gamma) || rg(beta),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::LogSigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::CrossEntropy(a, _)
            | Op::Pick(a, _)
            | Op::GatherRows(a, _)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _, _)
            | Op::Reshape(a)
            | Op::RepeatRows(a)
            | Op::SpanMean(a, _)
            | Op::MaskedFill(a, _)
            | Op::Dropout(a, _) => rg(a),
        }
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf that is reported back under `name` by [`Graph::parameters`].
    pub fn named_leaf(&self, name: &str, value: Tensor) -> Var {
        let v = self.leaf(value, true);
        self.params.borrow_mut().push((name.to_string(), v));
        v
    }

    pub fn parameters(&self) -> Ref<'_, Vec<(String, Var)>> {
        self.params.borrow()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op.name()
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` took part.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad.as_ref().map(|g| node.value.with_data(g.clone()))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", &av)?;
        let (k2, n) = matrix_dims("matmul", &bv)?;
        if k != k2 {
            return Err(shape_err("matmul", &av, &bv));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = matrix_dims("transpose", &av)?;
        let out = transpose_raw(av.data(), r, c);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", &av, &bv));
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        Ok(self.push(Tensor::new(av.shape().to_vec(), out)?, Op::Add(a, b)))
    }

    /// Adds a length-`d` vector to every row of `a`, whose last axis is `d`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (av, rv) = (self.value(a), self.value(row));
        let d = av.cols();
        if rv.numel() != d {
            return Err(shape_err("add_row", &av, &rv));
        }
        let out = av
            .data()
            .chunks(d)
            .flat_map(|r| r.iter().zip(rv.data()).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(Tensor::new(av.shape().to_vec(), out)?, Op::AddRow(a, row)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", &av, &bv));
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        Ok(self.push(Tensor::new(av.shape().to_vec(), out)?, Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|x| x * factor).collect();
        self.push(av.with_data(out), Op::Scale(a, factor))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        self.push(av.with_data(out), op)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `ln σ(x)`, computed without overflow.
    pub fn log_sigmoid(&self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sums along the last axis, giving a `[rows, 1]` column.
    pub fn row_sums(&self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let out: Vec<f64> = av.data().chunks(av.cols()).map(|r| r.iter().sum()).collect();
        let rows = out.len();
        Ok(self.push(Tensor::new(vec![rows, 1], out)?, Op::RowSums(a)))
    }

    /// Softmax along the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = softmax_rows(av.data(), av.cols());
        self.push(av.with_data(out), Op::Softmax(a))
    }

    pub fn log_softmax(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = log_softmax_rows(av.data(), av.cols());
        self.push(av.with_data(out), Op::LogSoftmax(a))
    }

    /// Mean negative log-likelihood of `targets` under a row-wise softmax of
    /// `logits[b×n]`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let (b, n) = matrix_dims("cross_entropy", &lv)?;
        if targets.len() != b {
            return Err(TensorError::InvalidArgument(format!(
                "cross_entropy: {} targets for {} rows",
                targets.len(),
                b
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: t,
                bound: n,
            });
        }
        let logp = log_softmax_rows(lv.data(), n);
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &t)| logp[i * n + t])
            .sum::<f64>()
            / b as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec()),
        ))
    }

    /// Selects `x[i, idx[i]]` for every row, giving a vector.
    pub fn pick(&self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = matrix_dims("pick", &xv)?;
        if idx.len() != r {
            return Err(TensorError::InvalidArgument(format!(
                "pick: {} indices for {} rows",
                idx.len(),
                r
            )));
        }
        if let Some(&j) = idx.iter().find(|&&j| j >= c) {
            return Err(TensorError::Index {
                op: "pick",
                index: j,
                bound: c,
            });
        }
        let out = idx.iter().enumerate().map(|(i, &j)| xv.data()[i * c + j]).collect();
        Ok(self.push(Tensor::vector(out), Op::Pick(x, idx.to_vec())))
    }

    /// Row gather; this is the embedding lookup.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (r, c) = matrix_dims("gather_rows", &tv)?;
        if idx.is_empty() {
            return Err(TensorError::InvalidArgument("gather_rows: no indices".into()));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: r,
                });
            }
            out.extend_from_slice(tv.row(i));
        }
        Ok(self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::GatherRows(table, idx.to_vec()),
        ))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(*parts.first().ok_or_else(|| {
            TensorError::InvalidArgument("concat_rows: nothing to concatenate".into())
        })?);
        let (_, c) = matrix_dims("concat_rows", &first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            let (r, pc) = matrix_dims("concat_rows", &pv)?;
            if pc != c {
                return Err(shape_err("concat_rows", &first, &pv));
            }
            rows += r;
            out.extend_from_slice(pv.data());
        }
        Ok(self.push(Tensor::new(vec![rows, c], out)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var, TensorError> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values.first().ok_or_else(|| {
            TensorError::InvalidArgument("concat_cols: nothing to concatenate".into())
        })?;
        let (r, _) = matrix_dims("concat_cols", first)?;
        let mut total = 0;
        for v in &values {
            let (vr, vc) = matrix_dims("concat_cols", v)?;
            if vr != r {
                return Err(shape_err("concat_cols", first, v));
            }
            total += vc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &values {
                out.extend_from_slice(v.row(i));
            }
        }
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&self, a: Var, range: Range<usize>) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = matrix_dims("slice_rows", &av)?;
        if range.start >= range.end || range.end > r {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: range.end,
                bound: r,
            });
        }
        let out = av.data()[range.start * c..range.end * c].to_vec();
        Ok(self.push(
            Tensor::new(vec![range.len(), c], out)?,
            Op::SliceRows(a, range.start),
        ))
    }

    pub fn slice_cols(&self, a: Var, range: Range<usize>) -> Result<Var, TensorError> {
        let av = self.value(a);
        let (r, c) = matrix_dims("slice_cols", &av)?;
        if range.start >= range.end || range.end > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: range.end,
                bound: c,
            });
        }
        let out = (0..r)
            .flat_map(|i| av.row(i)[range.clone()].iter().copied())
            .collect();
        Ok(self.push(
            Tensor::new(vec![r, range.len()], out)?,
            Op::SliceCols(a, range.start, c),
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: av.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.push(Tensor::new(shape.to_vec(), av.data().to_vec())?, Op::Reshape(a)))
    }

    /// Stacks `n` copies of a row vector (shape `[d]` or `[1, d]`) into `[n, d]`.
    pub fn repeat_rows(&self, a: Var, n: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        if av.rows() != 1 || n == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "repeat_rows: need a single row and n > 0, got {:?} x{n}",
                av.shape()
            )));
        }
        let d = av.cols();
        let out = av.data().iter().copied().cycle().take(n * d).collect();
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::RepeatRows(a)))
    }

    /// Averages the rows of `x` over each span: row `i` of the result is the
    /// mean of `x[spans[i]]`.
    pub fn span_mean(&self, x: Var, spans: &[Range<usize>]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = matrix_dims("span_mean", &xv)?;
        if spans.is_empty() {
            return Err(TensorError::InvalidArgument("span_mean: no spans".into()));
        }
        let mut out = Vec::with_capacity(spans.len() * c);
        for span in spans {
            if span.start >= span.end || span.end > r {
                return Err(TensorError::Index {
                    op: "span_mean",
                    index: span.end,
                    bound: r,
                });
            }
            let m = span.len() as f64;
            for j in 0..c {
                let total: f64 = span.clone().map(|p| xv.data()[p * c + j]).sum();
                out.push(total / m);
            }
        }
        Ok(self.push(
            Tensor::new(vec![spans.len(), c], out)?,
            Op::SpanMean(x, spans.to_vec()),
        ))
    }

    /// Overwrites masked entries with `value`; they receive no gradient.
    pub fn masked_fill(&self, a: Var, mask: &[bool], value: f64) -> Result<Var, TensorError> {
        let av = self.value(a);
        if mask.len() != av.numel() {
            return Err(TensorError::InvalidArgument(format!(
                "masked_fill: mask of length {} for shape {:?}",
                mask.len(),
                av.shape()
            )));
        }
        let out = av
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        Ok(self.push(av.with_data(out), Op::MaskedFill(a, mask.to_vec())))
    }

    /// Inverted dropout. Identity when not training or when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(
        &self,
        a: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let av = self.value(a);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..av.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(self.push(av.with_data(out), Op::Dropout(a, mask)))
    }

    /// Normalizes each row of `x` to zero mean and unit variance, then applies
    /// the affine `gamma`, `beta` (both of length `d`).
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        if gv.numel() != d || bv.numel() != d {
            return Err(shape_err("layer_norm", &xv, &gv));
        }
        let mut normalized = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mean) * inv;
                normalized.push(n);
                out.push(n * gv.data()[j] + bv.data()[j]);
            }
        }
        Ok(self.push(
            xv.with_data(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done.get() {
            return Err(TensorError::BackwardTwice);
        }
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(nodes[loss.0].value.shape().to_vec()));
        }
        self.backward_done.set(true);
        for node in nodes.iter_mut() {
            node.grad = None;
        }
        nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = nodes[idx].grad.take() else {
                continue;
            };
            let contributions = input_grads(&nodes, idx, &g);
            nodes[idx].grad = Some(g);
            for (input, gi) in contributions {
                let target = &mut nodes[input.0];
                if !target.requires_grad {
                    continue;
                }
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    None => target.grad = Some(gi),
                }
            }
        }
        Ok(())
    }
}

impl Tensor {
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), self.numel());
        Tensor::new(self.shape().to_vec(), data).expect("same numel")
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients flowing from node `idx` (with upstream gradient `g`) into its inputs.
fn input_grads(nodes: &[Node], idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let node = &nodes[idx];
    let val = |v: &Var| -> &Tensor { &nodes[v.0].value };
    let needs = |v: &Var| nodes[v.0].requires_grad;
    let out = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            let mut res = vec![];
            if needs(a) {
                let bt = transpose_raw(bv.data(), k, n);
                res.push((*a, matmul_raw(g, &bt, m, n, k)));
            }
            if needs(b) {
                let at = transpose_raw(av.data(), m, k);
                res.push((*b, matmul_raw(&at, g, k, m, n)));
            }
            res
        }
        Op::Transpose(a) => {
            let (r, c) = (val(a).shape()[0], val(a).shape()[1]);
            vec![(*a, transpose_raw(g, c, r))]
        }
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::AddRow(a, row) => {
            let d = val(row).numel();
            let mut gr = vec![0.0; d];
            for chunk in g.chunks(d) {
                gr.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
            }
            vec![(*a, g.to_vec()), (*row, gr)]
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            vec![
                (*a, g.iter().zip(bv.data()).map(|(x, y)| x * y).collect()),
                (*b, g.iter().zip(av.data()).map(|(x, y)| x * y).collect()),
            ]
        }
        Op::Scale(a, f) => vec![(*a, g.iter().map(|x| x * f).collect())],
        Op::Tanh(a) => vec![(
            *a,
            g.iter().zip(out.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect(),
        )],
        Op::Relu(a) => vec![(
            *a,
            g.iter()
                .zip(val(a).data())
                .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                .collect(),
        )],
        Op::LogSigmoid(a) => vec![(
            *a,
            g.iter()
                .zip(val(a).data())
                .map(|(gi, &x)| gi * sigmoid(-x))
                .collect(),
        )],
        Op::Sum(a) => vec![(*a, vec![g[0]; val(a).numel()])],
        Op::Mean(a) => {
            let n = val(a).numel();
            vec![(*a, vec![g[0] / n as f64; n])]
        }
        Op::RowSums(a) => {
            let c = val(a).cols();
            vec![(*a, g.iter().flat_map(|&gi| std::iter::repeat_n(gi, c)).collect())]
        }
        Op::Softmax(a) => {
            let c = out.cols();
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), dst) in g.chunks(c).zip(out.data().chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                for ((d, gi), yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yi * (gi - dot);
                }
            }
            vec![(*a, gx)]
        }
        Op::LogSoftmax(a) => {
            let c = out.cols();
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), dst) in g.chunks(c).zip(out.data().chunks(c)).zip(gx.chunks_mut(c)) {
                let total: f64 = gr.iter().sum();
                for ((d, gi), yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = gi - yi.exp() * total;
                }
            }
            vec![(*a, gx)]
        }
        Op::CrossEntropy(logits, targets) => {
            let lv = val(logits);
            let n = lv.cols();
            let b = targets.len() as f64;
            let mut gx = softmax_rows(lv.data(), n);
            for (i, &t) in targets.iter().enumerate() {
                gx[i * n + t] -= 1.0;
            }
            gx.iter_mut().for_each(|x| *x *= g[0] / b);
            vec![(*logits, gx)]
        }
        Op::Pick(x, idx) => {
            let c = val(x).cols();
            let mut gx = vec![0.0; val(x).numel()];
            for (i, &j) in idx.iter().enumerate() {
                gx[i * c + j] += g[i];
            }
            vec![(*x, gx)]
        }
        Op::GatherRows(table, idx) => {
            let c = val(table).cols();
            let mut gx = vec![0.0; val(table).numel()];
            for (k, &i) in idx.iter().enumerate() {
                gx[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(&g[k * c..(k + 1) * c])
                    .for_each(|(d, s)| *d += s);
            }
            vec![(*table, gx)]
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|p| {
                    let n = val(p).numel();
                    let slice = g[offset..offset + n].to_vec();
                    offset += n;
                    (*p, slice)
                })
                .collect()
        }
        Op::ConcatCols(parts) => {
            let total = out.cols();
            let mut col = 0;
            parts
                .iter()
                .map(|p| {
                    let pv = val(p);
                    let pc = pv.cols();
                    let gp = (0..pv.rows())
                        .flat_map(|i| g[i * total + col..i * total + col + pc].iter().copied())
                        .collect();
                    col += pc;
                    (*p, gp)
                })
                .collect()
        }
        Op::SliceRows(a, start) => {
            let c = out.cols();
            let mut gx = vec![0.0; val(a).numel()];
            gx[start * c..start * c + g.len()].copy_from_slice(g);
            vec![(*a, gx)]
        }
        Op::SliceCols(a, start, width) => {
            let c = out.cols();
            let mut gx = vec![0.0; val(a).numel()];
            for (i, chunk) in g.chunks(c).enumerate() {
                gx[i * width + start..i * width + start + c].copy_from_slice(chunk);
            }
            vec![(*a, gx)]
        }
        Op::Reshape(a) => vec![(*a, g.to_vec())],
        Op::RepeatRows(a) => {
            let d = val(a).numel();
            let mut gx = vec![0.0; d];
            for chunk in g.chunks(d) {
                gx.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
            }
            vec![(*a, gx)]
        }
        Op::SpanMean(x, spans) => {
            let c = out.cols();
            let mut gx = vec![0.0; val(x).numel()];
            for (s, span) in spans.iter().enumerate() {
                let m = span.len() as f64;
                for p in span.clone() {
                    for j in 0..c {
                        gx[p * c + j] += g[s * c + j] / m;
                    }
                }
            }
            vec![(*x, gx)]
        }
        Op::MaskedFill(a, mask) => vec![(
            *a,
            g.iter()
                .zip(mask)
                .map(|(&gi, &m)| if m { 0.0 } else { gi })
                .collect(),
        )],
        Op::Dropout(a, mask) => vec![(*a, g.iter().zip(mask).map(|(x, m)| x * m).collect())],
        Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        } => {
            let gv = val(gamma);
            let d = gv.numel();
            let mut gx = vec![0.0; g.len()];
            let mut ggamma = vec![0.0; d];
            let mut gbeta = vec![0.0; d];
            for (r, ((gr, nr), dst)) in g
                .chunks(d)
                .zip(normalized.chunks(d))
                .zip(gx.chunks_mut(d))
                .enumerate()
            {
                let mut sum_gn = 0.0;
                let mut sum_gn_n = 0.0;
                for j in 0..d {
                    let gn = gr[j] * gv.data()[j];
                    sum_gn += gn;
                    sum_gn_n += gn * nr[j];
                    ggamma[j] += gr[j] * nr[j];
                    gbeta[j] += gr[j];
                }
                let inv = inv_std[r];
                for j in 0..d {
                    let gn = gr[j] * gv.data()[j];
                    dst[j] = inv * (gn - sum_gn / d as f64 - nr[j] * sum_gn_n / d as f64);
                }
            }
            vec![(*x, gx), (*gamma, ggamma), (*beta, gbeta)]
        }
    }
}
