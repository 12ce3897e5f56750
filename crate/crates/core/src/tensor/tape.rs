use std::borrow::Cow;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::fmt;

use super::kernels::{add_into, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{from_f64, to_f64, DropoutRng, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation names, used for diagnostics and gradient-check reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulNt,
    Add,
    Mul,
    Scale,
    AddBias,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    MaxOverRows,
    Dropout,
    Gather,
    LayerNorm,
    SliceCols,
    ConcatCols,
    Row,
    StackRows,
    Sum,
    Reshape,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::MatMulNt => "matmul_nt",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBias => "add_bias",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::MaxOverRows => "max_over_rows",
            OpKind::Dropout => "dropout",
            OpKind::Gather => "gather_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::SliceCols => "slice_cols",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Row => "row",
            OpKind::StackRows => "stack_rows",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }
}

const ALL_KINDS: [OpKind; 21] = [
    OpKind::Leaf,
    OpKind::MatMul,
    OpKind::MatMulNt,
    OpKind::Add,
    OpKind::Mul,
    OpKind::Scale,
    OpKind::AddBias,
    OpKind::Tanh,
    OpKind::Sigmoid,
    OpKind::Relu,
    OpKind::Softmax,
    OpKind::MaxOverRows,
    OpKind::Dropout,
    OpKind::Gather,
    OpKind::LayerNorm,
    OpKind::SliceCols,
    OpKind::ConcatCols,
    OpKind::Row,
    OpKind::StackRows,
    OpKind::Sum,
    OpKind::Reshape,
];

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    MaxOverRows { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<T> },
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Row { x: Var, index: usize },
    StackRows(Vec<Var>),
    Sum(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax(_) => OpKind::Softmax,
            Op::MaxOverRows { .. } => OpKind::MaxOverRows,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Gather { .. } => OpKind::Gather,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::Row { .. } => OpKind::Row,
            Op::StackRows(_) => OpKind::StackRows,
            Op::Sum(_) => OpKind::Sum,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

struct Node<'a, T: Real> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order; nodes only reference earlier nodes,
/// so the record is always topologically sorted.
///
/// Leaf gradients accumulate across calls to [`Tape::backward`] until
/// [`Tape::zero_grads`] is called.
pub struct Tape<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    corrupt: Option<OpKind>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / cols, cols)
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            corrupt: None,
        }
    }

    /// A tape whose backward rule for `kind` is deliberately wrong (scaled by
    /// 1.5). Only used to prove that gradient checking catches faults.
    pub fn with_corrupted_backward(kind: OpKind) -> Self {
        Tape {
            corrupt: Some(kind),
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [T]>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a, T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Binds a model tensor as a leaf without copying its data.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.data()),
            Op::Leaf,
            t.requires_grad,
        )
    }

    /// Records an owned leaf.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        let rg = t.requires_grad || requires_grad;
        let shape = t.shape().to_vec();
        Ok(self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, rg))
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), Cow::Owned(t.data().to_vec()), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.node(v).op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Snapshot of a recorded value as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("recorded shapes are valid")
    }

    /// Accumulated gradient of a leaf; `None` before any backward pass or for
    /// values that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Hash of every non-smooth decision recorded so far (ReLU input signs
    /// and max-over-rows winners). Two evaluations with equal signatures lie
    /// on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => self.value(*x).iter().for_each(|&v| (v > T::zero()).hash(&mut h)),
                Op::MaxOverRows { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{m}x{k}] · [{n}x{k2}]ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMulNt(a, b), rg))
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if sa == sb || nb == 1 {
            Ok(sa.to_vec())
        } else if na == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::shape(op, format!("{sa:?} vs {sb:?}")))
        }
    }

    fn binary(&mut self, kind: OpKind, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape(kind.name(), a, b)?;
        let n: usize = shape.iter().product();
        let (va, vb) = (self.value(a), self.value(b));
        let at = |v: &[T], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let out: Vec<T> = match kind {
            OpKind::Add => (0..n).map(|i| at(va, i) + at(vb, i)).collect(),
            _ => (0..n).map(|i| at(va, i) * at(vb, i)).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        let op = if kind == OpKind::Add { Op::Add(a, b) } else { Op::Mul(a, b) };
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    /// Elementwise sum; either operand may be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Add, a, b)
    }

    /// Elementwise (Hadamard) product; either operand may be a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let c = from_f64::<T>(c as f64);
        let out: Vec<T> = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, Cow::Owned(out), Op::Scale(x, c), rg)
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if self.value(bias).len() != cols {
            return Err(Error::shape(
                "add_bias",
                format!("bias length {} vs row width {cols}", self.value(bias).len()),
            ));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            add_into(&mut out[r * cols..(r + 1) * cols], b);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(shape, Cow::Owned(out), Op::AddBias(x, bias), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out: Vec<T> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, Cow::Owned(out), op, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    /// Softmax over the last dimension (each row independently).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    /// Softmax over the last dimension where `key_mask[j] == false` columns
    /// get probability exactly zero.
    pub fn masked_softmax(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if let Some(m) = key_mask {
            if m.len() != cols {
                return Err(Error::shape("softmax", format!("mask length {} vs {cols}", m.len())));
            }
            if !m.iter().any(|&k| k) {
                return Err(Error::shape("softmax", "every position is masked"));
            }
        }
        let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
        let xv = self.value(x);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            if !max.is_finite() {
                return Err(Error::Numeric {
                    op: "softmax",
                    detail: format!("non-finite input in row {r}"),
                });
            }
            let mut denom = 0.0f64;
            let o = &mut out[r * cols..(r + 1) * cols];
            for j in (0..cols).filter(|&j| keep(j)) {
                let e = to_f64(row[j] - max).exp();
                o[j] = from_f64(e);
                denom += e;
            }
            for j in (0..cols).filter(|&j| keep(j)) {
                o[j] = from_f64(to_f64(o[j]) / denom);
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, Cow::Owned(out), Op::Softmax(x), rg))
    }

    /// Column-wise maximum over the rows of `x` (`[n×d] → [d]`), optionally
    /// skipping rows whose mask entry is false. Ties resolve to the lowest row.
    pub fn max_over_rows(&mut self, x: Var, row_mask: Option<&[bool]>) -> Result<Var> {
        let (n, d) = self.matrix_dims("max_over_rows", x)?;
        if let Some(m) = row_mask {
            if m.len() != n {
                return Err(Error::shape("max_over_rows", format!("mask length {} vs {n} rows", m.len())));
            }
        }
        let rows: Vec<usize> = (0..n).filter(|&i| row_mask.is_none_or(|m| m[i])).collect();
        let Some(&first) = rows.first() else {
            return Err(Error::shape("max_over_rows", "no unmasked rows"));
        };
        let xv = self.value(x);
        let mut out = xv[first * d..(first + 1) * d].to_vec();
        let mut argmax = vec![first; d];
        for &i in &rows[1..] {
            for j in 0..d {
                let v = xv[i * d + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![d], Cow::Owned(out), Op::MaxOverRows { x, argmax }, rg))
    }

    /// Inverted dropout. Identity (same handle) in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f32, training: bool, rng: &mut DropoutRng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = from_f64::<T>(1.0 / (1.0 - rate as f64));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep_scale })
            .collect();
        let out: Vec<T> = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, Cow::Owned(out), Op::Dropout { x, mask }, rg))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix_dims("gather_rows", table)?;
        if ids.is_empty() {
            return Err(Error::shape("gather_rows", "empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("gather_rows", format!("id {bad} >= table rows {v}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            Cow::Owned(out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape("layer_norm", format!("gain/bias must have length {d}")));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| to_f64(v)).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (to_f64(v) - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps as f64).sqrt();
            inv_std[r] = from_f64(is);
            for j in 0..d {
                let h: T = from_f64((to_f64(row[j]) - mean) * is);
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            shape,
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.matrix_dims("slice_cols", x)?;
        if len == 0 || start + len > d {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) outside width {d}", start + len)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&xv[r * d + start..r * d + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, len], Cow::Owned(out), Op::SliceCols { x, start }, rg))
    }

    /// Concatenates along the last dimension. Vectors concatenate to a vector.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "nothing to concatenate"));
        };
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_cols", format!("{:?} vs {:?}", self.shape(first), s)));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, Cow::Owned(out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (n, d) = self.matrix_dims("row", x)?;
        if index >= n {
            return Err(Error::shape("row", format!("row {index} of {n}")));
        }
        let out = self.value(x)[index * d..(index + 1) * d].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![d], Cow::Owned(out), Op::Row { x, index }, rg))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::shape("stack_rows", "no rows"));
        };
        let d = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if self.value(r).len() != d {
                return Err(Error::shape("stack_rows", format!("row width {} vs {d}", self.value(r).len())));
            }
            out.extend_from_slice(self.value(r));
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(vec![rows.len(), d], Cow::Owned(out), Op::StackRows(rows.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = from_f64(self.value(x).iter().map(|&v| to_f64(v)).sum::<f64>());
        let rg = self.rg(x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, Cow::Owned(out), Op::Reshape(x), rg))
    }

    /// Backpropagates from a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.backward_with(loss, &[T::one()])
    }

    /// Backpropagates an upstream gradient `seed` (same length as `out`).
    pub fn backward_with(&mut self, out: Var, seed: &[T]) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::shape(
                "backward",
                format!("seed length {} vs output {}", seed.len(), self.value(out).len()),
            ));
        }
        for (node, g) in self.nodes.iter().zip(self.leaf_grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(vec![T::zero(); node.value.len()]);
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed.to_vec());
        for i in (0..=out.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                add_into(self.leaf_grads[i].as_mut().expect("initialized above"), &g);
                continue;
            }
            if self.corrupt == Some(node.op.kind()) {
                let k = from_f64::<T>(1.5);
                g.iter_mut().for_each(|v| *v *= k);
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(&self.nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if let Some(ga) = slot!(*a) {
                    matmul_nt_acc(g, self.value(*b), ga, m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    matmul_tn_acc(self.value(*a), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if let Some(ga) = slot!(*a) {
                    matmul_acc(g, self.value(*b), ga, m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    matmul_tn_acc(g, self.value(*a), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = slot!(v) {
                        if gv.len() == 1 && g.len() != 1 {
                            gv[0] += from_f64::<T>(g.iter().map(|&x| to_f64(x)).sum::<f64>());
                        } else {
                            add_into(gv, g);
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    let ov = self.value(other);
                    let at = |j: usize| if ov.len() == 1 { ov[0] } else { ov[j] };
                    if let Some(gv) = slot!(v) {
                        if gv.len() == 1 && g.len() != 1 {
                            let s: f64 = g.iter().enumerate().map(|(j, &x)| to_f64(x * at(j))).sum();
                            gv[0] += from_f64::<T>(s);
                        } else {
                            gv.iter_mut().enumerate().for_each(|(j, d)| *d += g[j] * at(j));
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().zip(g).for_each(|(d, &u)| *d += u * *c);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = slot!(*x) {
                    add_into(gx, g);
                }
                if let Some(gb) = slot!(*b) {
                    let cols = gb.len();
                    for r in g.chunks_exact(cols) {
                        add_into(gb, r);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(gx) = slot!(*x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * (T::one() - y[j] * y[j]);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(gx) = slot!(*x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * y[j] * (T::one() - y[j]);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(gx) = slot!(*x) {
                    for j in 0..g.len() {
                        if xv[j] > T::zero() {
                            gx[j] += g[j];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (rows, cols) = rows_cols(&node.shape);
                if let Some(gx) = slot!(*x) {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                        let dotp: f64 = yr.iter().zip(gr).map(|(&a, &b)| to_f64(a * b)).sum();
                        let dotp: T = from_f64(dotp);
                        for (j, dx) in gx[span].iter_mut().enumerate() {
                            *dx += yr[j] * (gr[j] - dotp);
                        }
                    }
                }
            }
            Op::MaxOverRows { x, argmax } => {
                let d = argmax.len();
                if let Some(gx) = slot!(*x) {
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * d + j] += g[j];
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot!(*x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * mask[j];
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.shape(*table)[1];
                if let Some(gt) = slot!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gamma).len();
                let rows = inv_std.len();
                if let Some(gg) = slot!(*gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = slot!(*beta) {
                    for r in g.chunks_exact(d) {
                        add_into(gb, r);
                    }
                }
                let gamma_v = self.value(*gamma);
                if let Some(gx) = slot!(*x) {
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut s1 = 0.0f64;
                        let mut s2 = 0.0f64;
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gamma_v[j];
                            s1 += to_f64(dxhat[j]);
                            s2 += to_f64(dxhat[j] * xhat[r * d + j]);
                        }
                        let (m1, m2): (T, T) = (from_f64(s1 / d as f64), from_f64(s2 / d as f64));
                        for j in 0..d {
                            gx[r * d + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let d = self.shape(*x)[1];
                let len = node.shape[1];
                if let Some(gx) = slot!(*x) {
                    for r in 0..node.shape[0] {
                        add_into(&mut gx[r * d + start..r * d + start + len], &g[r * len..(r + 1) * len]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = *node.shape.last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if let Some(gp) = slot!(p) {
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Row { x, index } => {
                let d = g.len();
                if let Some(gx) = slot!(*x) {
                    add_into(&mut gx[index * d..(index + 1) * d], g);
                }
            }
            Op::StackRows(rows) => {
                let d = node.shape[1];
                for (r, &v) in rows.iter().enumerate() {
                    if let Some(gv) = slot!(v) {
                        add_into(gv, &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot!(*x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot!(*x) {
                    add_into(gx, g);
                }
            }
        }
    }
}

fn grad_slot<'g, T: Real>(nodes: &[Node<'_, T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
