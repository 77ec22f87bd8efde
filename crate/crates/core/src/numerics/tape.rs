//! Reverse-mode automatic differentiation over a linear (Wengert) tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse and accumulates vector-Jacobian products.
//! Nodes are only differentiated when some leaf beneath them was created
//! with [`Tape::param`].

use crate::error::{Error, Result};

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Which side of the Carlini-Wagner margin is penalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CwMode {
    /// `max(Z_y - max_{i≠y} Z_i, -κ)`
    Untargeted,
    /// `max(max_{i≠t} Z_i - Z_t, -κ)`
    Targeted,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Softmax(Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    SelectStep { x: Var, t: usize },
    StackSteps(Vec<Var>),
    Reshape(Var),
    Conv1d { x: Var, w: Var, b: Var, kernel: usize },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Mean(Var),
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<f64>, reduction: Reduction },
    BceLogits { logits: Var, targets: Vec<f64>, reduction: Reduction },
    CwMargin { logits: Var, active: Vec<Option<(usize, usize, f64)>> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Square(x)
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::SliceCols { x, .. } | Op::SelectStep { x, .. } | Op::MaxPool1d { x, .. } => vec![*x],
            Op::ConcatCols(v) | Op::StackSteps(v) => v.clone(),
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::SoftmaxXent { logits, .. } | Op::BceLogits { logits, .. } | Op::CwMargin { logits, .. } => vec![*logits],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Square(..) => "square",
            Op::Softmax(..) => "softmax",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SelectStep { .. } => "select_step",
            Op::StackSteps(..) => "stack_steps",
            Op::Reshape(..) => "reshape",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "max_pool1d",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::BceLogits { .. } => "bce_with_logits",
            Op::CwMargin { .. } => "cw_margin",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to the differentiable leaves.
#[derive(Debug)]
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::contract(format!("{op}: {detail}"))
}

fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf (parameter or attacked input).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `x + b` with `b` broadcast over every row; `b` has the size of `x`'s last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let vx = self.value(x);
        let vb = self.value(b);
        let cols = *vx.shape().last().unwrap_or(&1);
        if vb.len() != cols {
            return Err(shape_err(
                "add_bias",
                format!("bias of {} values for last axis {cols}", vb.len()),
            ));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, &bias) in row.iter_mut().zip(vb.data()) {
                *v += bias;
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddBias(x, b), needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        self.unary(x, Op::Scale(x, factor), |v| v * f)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let cols = *vx.shape().last().unwrap_or(&1);
        let mut data = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(cols) {
            data.extend(super::softmax_row(row).into_iter().map(T::from_f64));
        }
        let value = Tensor::new(vx.shape().to_vec(), data).expect("softmax keeps shape");
        let needs = self.needs(x);
        self.push(value, Op::Softmax(x), needs)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 2 || start + len > vx.shape()[1] {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, vx.shape()),
            ));
        }
        let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
        let mut data = Vec::with_capacity(rows * len);
        for row in vx.data().chunks(cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![rows, len], data)?, Op::SliceCols { x, start, len }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let rows = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", format!("part of shape {s:?}, rows {rows}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Time step `t` of a `[batch, time, features]` tensor.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 3 || t >= s[1] {
            return Err(shape_err("select_step", format!("step {t} of {s:?}")));
        }
        let (b, steps, f) = (s[0], s[1], s[2]);
        let mut data = Vec::with_capacity(b * f);
        for i in 0..b {
            let off = (i * steps + t) * f;
            data.extend_from_slice(&vx.data()[off..off + f]);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![b, f], data)?, Op::SelectStep { x, t }, needs))
    }

    /// Stacks `[batch, features]` steps into `[batch, time, features]`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps.first().ok_or_else(|| shape_err("stack_steps", "no inputs".into()))?;
        let s0 = self.value(*first).shape().to_vec();
        if s0.len() != 2 {
            return Err(shape_err("stack_steps", format!("step of shape {s0:?}")));
        }
        for &st in steps {
            if self.value(st).shape() != s0.as_slice() {
                return Err(shape_err("stack_steps", "steps differ in shape".into()));
            }
        }
        let (b, f, t) = (s0[0], s0[1], steps.len());
        let mut data = vec![T::zero(); b * t * f];
        for (ti, &st) in steps.iter().enumerate() {
            let v = self.value(st).data();
            for i in 0..b {
                data[(i * t + ti) * f..(i * t + ti + 1) * f].copy_from_slice(&v[i * f..(i + 1) * f]);
            }
        }
        let needs = steps.iter().any(|&s| self.needs(s));
        Ok(self.push(Tensor::new(vec![b, t, f], data)?, Op::StackSteps(steps.to_vec()), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Valid 1-D convolution over time. `x`: `[batch, time, channels]`,
    /// `w`: `[kernel·channels, filters]`, `b`: `[filters]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 3 || kernel == 0 || kernel > sx[1] {
            return Err(shape_err("conv1d", format!("kernel {kernel} over input {sx:?}")));
        }
        let (batch, steps, ch) = (sx[0], sx[1], sx[2]);
        if sw.len() != 2 || sw[0] != kernel * ch {
            return Err(shape_err("conv1d", format!("weights {sw:?} for kernel {kernel}×{ch}")));
        }
        let filters = sw[1];
        if self.value(b).len() != filters {
            return Err(shape_err("conv1d", "bias length differs from filter count".into()));
        }
        let out_steps = steps - kernel + 1;
        let mut out = vec![T::zero(); batch * out_steps * filters];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            for i in 0..batch {
                for t in 0..out_steps {
                    let src = &xd[(i * steps + t) * ch..(i * steps + t + kernel) * ch];
                    let dst = &mut out[(i * out_steps + t) * filters..(i * out_steps + t + 1) * filters];
                    dst.copy_from_slice(bd);
                    matmul_acc(src, wd, dst, 1, kernel * ch, filters);
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(vec![batch, out_steps, filters], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, kernel }, needs))
    }

    /// Non-overlapping max pooling over time; trailing steps that do not fill
    /// a pool are dropped. Ties pick the earliest step.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 3 || size == 0 || sx[1] < size {
            return Err(shape_err("max_pool1d", format!("pool {size} over {sx:?}")));
        }
        let (batch, steps, f) = (sx[0], sx[1], sx[2]);
        let out_steps = steps / size;
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(batch * out_steps * f);
        let mut argmax = Vec::with_capacity(batch * out_steps * f);
        for i in 0..batch {
            for o in 0..out_steps {
                for c in 0..f {
                    let mut best = (i * steps + o * size) * f + c;
                    for k in 1..size {
                        let idx = (i * steps + o * size + k) * f + c;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    data.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::new(vec![batch, out_steps, f], data)?;
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(T::from_f64(total)), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: f64 = v.data().iter().map(|v| v.as_f64()).sum();
        let n = v.len().max(1) as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(T::from_f64(total / n)), Op::Mean(x), needs)
    }

    /// Categorical cross-entropy of row-wise softmax(`logits`) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], reduction: Reduction) -> Result<Var> {
        let v = self.value(logits);
        let (rows, cols) = v.rows_cols();
        if v.shape().len() != 2 || targets.len() != rows {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{} targets for logits {:?}", targets.len(), v.shape()),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(shape_err("softmax_cross_entropy", format!("target {bad} ≥ {cols} classes")));
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut loss = 0.0;
        for (row, &t) in v.data().chunks(cols).zip(targets) {
            let p = super::softmax_row(row);
            loss -= p[t].max(f64::MIN_POSITIVE).ln();
            probs.extend(p);
        }
        if reduction == Reduction::Mean {
            loss /= rows.max(1) as f64;
        }
        let needs = self.needs(logits);
        let op = Op::SoftmaxXent { logits, targets: targets.to_vec(), probs, reduction };
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), op, needs))
    }

    /// Binary cross-entropy of sigmoid(`logits`) against `targets` in [0,1];
    /// `logits` has one value per row.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], reduction: Reduction) -> Result<Var> {
        let v = self.value(logits);
        if v.len() != targets.len() {
            return Err(shape_err("bce_with_logits", format!("{} targets for {} logits", targets.len(), v.len())));
        }
        let mut loss = 0.0;
        for (&z, &y) in v.data().iter().zip(targets) {
            let z = z.as_f64();
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        if reduction == Reduction::Mean {
            loss /= targets.len().max(1) as f64;
        }
        let needs = self.needs(logits);
        let op = Op::BceLogits { logits, targets: targets.to_vec(), reduction };
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), op, needs))
    }

    /// Weighted Carlini-Wagner margin loss `Σ_i w_i · max(s_i, -κ)` over rows
    /// of `logits`, where `s_i` is the logit margin selected by `mode`.
    pub fn cw_margin(
        &mut self,
        logits: Var,
        classes: &[usize],
        mode: CwMode,
        kappa: f64,
        weights: &[f64],
    ) -> Result<Var> {
        let v = self.value(logits);
        if v.shape().len() != 2 || classes.len() != v.shape()[0] || weights.len() != classes.len() {
            return Err(shape_err("cw_margin", format!("logits {:?} with {} classes", v.shape(), classes.len())));
        }
        let cols = v.shape()[1];
        if cols < 2 || classes.iter().any(|&c| c >= cols) {
            return Err(shape_err("cw_margin", "class index out of range".into()));
        }
        let mut total = 0.0;
        let mut active = Vec::with_capacity(classes.len());
        for ((row, &c), &w) in v.data().chunks(cols).zip(classes).zip(weights) {
            let mut other = if c == 0 { 1 } else { 0 };
            for j in 0..cols {
                if j != c && row[j] > row[other] {
                    other = j;
                }
            }
            let (zc, zo) = (row[c].as_f64(), row[other].as_f64());
            let margin = match mode {
                CwMode::Untargeted => zc - zo,
                CwMode::Targeted => zo - zc,
            };
            if margin > -kappa {
                total += w * margin;
                let (plus, minus) = match mode {
                    CwMode::Untargeted => (c, other),
                    CwMode::Targeted => (other, c),
                };
                active.push(Some((plus, minus, w)));
            } else {
                total += w * -kappa;
                active.push(None);
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(T::from_f64(total)), Op::CwMargin { logits, active }, needs))
    }

    /// Reverse pass from the scalar node `loss`. The tape is left untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            if !g.is_finite() {
                return Err(Error::Numeric {
                    location: format!("node {i} ({})", node.op.name()),
                    detail: "non-finite gradient during backward pass".into(),
                });
            }
            self.propagate(i, &g, &mut grads)?;
            for input in node.op.inputs() {
                if grads[input.0].as_ref().is_some_and(|t| !t.is_finite()) {
                    return Err(Error::Numeric {
                        location: format!("node {i} ({})", node.op.name()),
                        detail: "non-finite gradient during backward pass".into(),
                    });
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("initialised above").data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| {
                    for (x, &y) in d.iter_mut().zip(gd) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((x, &y), &w) in d.iter_mut().zip(gd).zip(vb) {
                        *x += y * w;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((x, &y), &w) in d.iter_mut().zip(gd).zip(va) {
                        *x += y * w;
                    }
                });
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |d| add_into(d, gd));
                let cols = self.value(*b).len();
                self.accumulate(grads, *b, |d| {
                    for row in gd.chunks(cols) {
                        add_into(d, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| matmul_a_bt_acc(gd, vb, d, m, k, n));
                self.accumulate(grads, *b, |d| matmul_at_b_acc(va, gd, d, m, k, n));
            }
            Op::Scale(x, f) => {
                let f = T::from_f64(*f);
                self.accumulate(grads, *x, |d| {
                    for (x, &y) in d.iter_mut().zip(gd) {
                        *x += y * f;
                    }
                });
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, |d| add_into(d, gd)),
            Op::Sigmoid(x) => self.accumulate(grads, *x, |d| {
                for ((x, &y), &s) in d.iter_mut().zip(gd).zip(out) {
                    *x += y * s * (T::one() - s);
                }
            }),
            Op::Tanh(x) => self.accumulate(grads, *x, |d| {
                for ((x, &y), &t) in d.iter_mut().zip(gd).zip(out) {
                    *x += y * (T::one() - t * t);
                }
            }),
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for ((x, &y), &v) in d.iter_mut().zip(gd).zip(vx) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                })
            }
            Op::Square(x) => {
                let vx = self.value(*x).data();
                let two = T::from_f64(2.0);
                self.accumulate(grads, *x, |d| {
                    for ((x, &y), &v) in d.iter_mut().zip(gd).zip(vx) {
                        *x += two * v * y;
                    }
                })
            }
            Op::Softmax(x) => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                self.accumulate(grads, *x, |d| {
                    for ((drow, grow), prow) in d.chunks_mut(cols).zip(gd.chunks(cols)).zip(out.chunks(cols)) {
                        let dot: T = grow.iter().zip(prow).fold(T::zero(), |acc, (&gv, &p)| acc + gv * p);
                        for ((dv, &gv), &p) in drow.iter_mut().zip(grow).zip(prow) {
                            *dv += p * (gv - dot);
                        }
                    }
                })
            }
            Op::SliceCols { x, start, len } => {
                let cols = self.value(*x).shape()[1];
                self.accumulate(grads, *x, |d| {
                    for (drow, grow) in d.chunks_mut(cols).zip(gd.chunks(*len)) {
                        add_into(&mut drow[*start..*start + *len], grow);
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    self.accumulate(grads, p, |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(gd.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SelectStep { x, t } => {
                let s = self.value(*x).shape();
                let (b, steps, f) = (s[0], s[1], s[2]);
                self.accumulate(grads, *x, |d| {
                    for i in 0..b {
                        let off = (i * steps + t) * f;
                        add_into(&mut d[off..off + f], &gd[i * f..(i + 1) * f]);
                    }
                })
            }
            Op::StackSteps(steps) => {
                let s = node.value.shape();
                let (b, t, f) = (s[0], s[1], s[2]);
                for (ti, &st) in steps.iter().enumerate() {
                    self.accumulate(grads, st, |d| {
                        for i in 0..b {
                            let off = (i * t + ti) * f;
                            add_into(&mut d[i * f..(i + 1) * f], &gd[off..off + f]);
                        }
                    });
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |d| add_into(d, gd)),
            Op::Conv1d { x, w, b, kernel } => {
                let sx = self.value(*x).shape();
                let (batch, steps, ch) = (sx[0], sx[1], sx[2]);
                let filters = self.value(*w).shape()[1];
                let out_steps = steps - kernel + 1;
                let span = kernel * ch;
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *b, |d| {
                    for row in gd.chunks(filters) {
                        add_into(d, row);
                    }
                });
                self.accumulate(grads, *w, |d| {
                    for i in 0..batch {
                        for t in 0..out_steps {
                            let src = &xd[(i * steps + t) * ch..(i * steps + t) * ch + span];
                            let grow = &gd[(i * out_steps + t) * filters..(i * out_steps + t + 1) * filters];
                            matmul_at_b_acc(src, grow, d, 1, span, filters);
                        }
                    }
                });
                self.accumulate(grads, *x, |d| {
                    for i in 0..batch {
                        for t in 0..out_steps {
                            let dst = &mut d[(i * steps + t) * ch..(i * steps + t) * ch + span];
                            let grow = &gd[(i * out_steps + t) * filters..(i * out_steps + t + 1) * filters];
                            matmul_a_bt_acc(grow, wd, dst, 1, span, filters);
                        }
                    }
                });
            }
            Op::MaxPool1d { x, argmax } => self.accumulate(grads, *x, |d| {
                for (&src, &gv) in argmax.iter().zip(gd) {
                    d[src] += gv;
                }
            }),
            Op::Sum(x) => {
                let gv = gd[0];
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|v| *v += gv));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1);
                let gv = gd[0] / T::from_f64(n as f64);
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|v| *v += gv));
            }
            Op::SoftmaxXent { logits, targets, probs, reduction } => {
                let cols = self.value(*logits).shape()[1];
                let scale = match reduction {
                    Reduction::Sum => gd[0].as_f64(),
                    Reduction::Mean => gd[0].as_f64() / targets.len().max(1) as f64,
                };
                self.accumulate(grads, *logits, |d| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..cols {
                            let y = if c == t { 1.0 } else { 0.0 };
                            d[r * cols + c] += T::from_f64(scale * (probs[r * cols + c] - y));
                        }
                    }
                })
            }
            Op::BceLogits { logits, targets, reduction } => {
                let z = self.value(*logits).data();
                let scale = match reduction {
                    Reduction::Sum => gd[0].as_f64(),
                    Reduction::Mean => gd[0].as_f64() / targets.len().max(1) as f64,
                };
                self.accumulate(grads, *logits, |d| {
                    for ((dv, &zv), &y) in d.iter_mut().zip(z).zip(targets) {
                        let s = 1.0 / (1.0 + (-zv.as_f64()).exp());
                        *dv += T::from_f64(scale * (s - y));
                    }
                })
            }
            Op::CwMargin { logits, active } => {
                let cols = self.value(*logits).shape()[1];
                let scale = gd[0].as_f64();
                self.accumulate(grads, *logits, |d| {
                    for (r, a) in active.iter().enumerate() {
                        if let Some((plus, minus, w)) = a {
                            d[r * cols + plus] += T::from_f64(scale * w);
                            d[r * cols + minus] -= T::from_f64(scale * w);
                        }
                    }
                })
            }
        }
        Ok(())
    }
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_tape_gradient, FdOptions, SeededRng};

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        t64(shape, &(0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn square_derivative_at_three_is_six() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn uniform_logits_cross_entropy_gradient() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(t64(&[1, 4], &[0.0; 4]));
        let loss = tape.softmax_cross_entropy(z, &[0], Reduction::Mean).unwrap();
        let g = tape.backward(loss).unwrap();
        let got = g.get(z).unwrap().data().to_vec();
        let want = [-0.75, 0.25, 0.25, 0.25];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{got:?}");
        }
        assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_violation() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_during_backward_names_the_node() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap());
        let y = tape.square(x);
        let s = tape.sum(y);
        let err = tape.backward(s).unwrap_err();
        match err {
            Error::Numeric { location, .. } => assert!(location.contains("square"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_leaves_tape_reusable() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(&[3], &[1.0, -2.0, 0.5]));
        let y = tape.square(x);
        let s = tape.sum(y);
        let g1 = tape.backward(s).unwrap();
        let g2 = tape.backward(s).unwrap();
        assert_eq!(g1.get(x), g2.get(x));
        assert_eq!(tape.value(s).item(), 1.0 + 4.0 + 0.25);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(&[2], &[1.0, 2.0]));
        let c = tape.constant(t64(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    // Each primitive against central differences on random inputs.
    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let opts = FdOptions { h: 1e-3, tolerance: 1e-4, coords: None, seed: 0 };
        type Build = fn(&mut Tape<f64>, Var, &mut SeededRng) -> Result<Var>;
        let cases: Vec<(&str, Vec<usize>, Build)> = vec![
            ("add/sub/mul", vec![2, 3], |t, x, r| {
                let c = t.constant(random(r, &[2, 3]));
                let a = t.add(x, c)?;
                let b = t.sub(a, x)?;
                let m = t.mul(a, x)?;
                let s = t.add(m, b)?;
                Ok(t.sum(s))
            }),
            ("matmul", vec![3, 4], |t, x, r| {
                let w = t.constant(random(r, &[4, 2]));
                let y = t.matmul(x, w)?;
                let w2 = t.constant(random(r, &[5, 3]));
                let z = t.matmul(w2, x)?;
                let a = t.square(y);
                let b = t.square(z);
                let (sa, sb) = (t.sum(a), t.sum(b));
                t.add(sa, sb)
            }),
            ("bias/sigmoid/tanh", vec![3, 2], |t, x, r| {
                let b = t.constant(random(r, &[2]));
                let y = t.add_bias(x, b)?;
                let s = t.sigmoid(y);
                let h = t.tanh(s);
                let q = t.scale(h, 1.7);
                let q = t.add_scalar(q, 0.3);
                let q = t.square(q);
                Ok(t.mean(q))
            }),
            ("relu", vec![4, 3], |t, x, _| {
                let y = t.relu(x);
                let q = t.square(y);
                Ok(t.sum(q))
            }),
            ("softmax", vec![2, 4], |t, x, r| {
                let p = t.softmax(x);
                let w = t.constant(random(r, &[2, 4]));
                let y = t.mul(p, w)?;
                Ok(t.sum(y))
            }),
            ("slice/concat", vec![2, 5], |t, x, _| {
                let a = t.slice_cols(x, 1, 2)?;
                let b = t.slice_cols(x, 3, 2)?;
                let c = t.concat_cols(&[b, a, b])?;
                let s = t.square(c);
                Ok(t.sum(s))
            }),
            ("select/stack/reshape", vec![2, 3, 2], |t, x, _| {
                let s0 = t.select_step(x, 0)?;
                let s2 = t.select_step(x, 2)?;
                let st = t.stack_steps(&[s2, s0])?;
                let r = t.reshape(st, &[4, 2])?;
                let q = t.tanh(r);
                let q = t.square(q);
                Ok(t.sum(q))
            }),
            ("conv1d", vec![2, 6, 3], |t, x, r| {
                let w = t.constant(random(r, &[9, 4]));
                let b = t.constant(random(r, &[4]));
                let y = t.conv1d(x, w, b, 3)?;
                let q = t.tanh(y);
                let q = t.square(q);
                Ok(t.sum(q))
            }),
            ("max_pool", vec![2, 5, 3], |t, x, _| {
                let y = t.max_pool1d(x, 2)?;
                let q = t.square(y);
                Ok(t.sum(q))
            }),
            ("cross_entropy", vec![3, 4], |t, x, _| t.softmax_cross_entropy(x, &[0, 3, 1], Reduction::Mean)),
            ("bce", vec![4, 1], |t, x, _| t.bce_with_logits(x, &[0.0, 1.0, 1.0, 0.0], Reduction::Sum)),
            ("cw_margin", vec![3, 4], |t, x, _| {
                t.cw_margin(x, &[0, 1, 2], CwMode::Untargeted, 5.0, &[1.0, 0.5, 2.0])
            }),
        ];
        for (name, shape, build) in cases {
            for _ in 0..8 {
                let point = random(&mut rng, &shape);
                let stream = rng.next_u64();
                let mut consts = rng.fork(stream);
                let report = check_tape_gradient(
                    |tape, x| {
                        let mut r = consts.clone();
                        build(tape, x, &mut r)
                    },
                    &point,
                    &opts,
                )
                .unwrap();
                assert!(report.passed, "{name}: {report:?}");
                consts.next_u64();
            }
        }
    }

    #[test]
    fn conv1d_parameter_gradients() {
        let mut rng = SeededRng::new(5);
        let x = random(&mut rng, &[2, 5, 2]);
        let w0 = random(&mut rng, &[6, 3]);
        let opts = FdOptions { h: 1e-3, tolerance: 1e-4, coords: None, seed: 0 };
        let report = check_tape_gradient(
            |t, w| {
                let xv = t.constant(x.clone());
                let b = t.constant(Tensor::full(&[3], 0.1));
                let y = t.conv1d(xv, w, b, 3)?;
                let q = t.tanh(y);
                let q = t.square(q);
                Ok(t.sum(q))
            },
            &w0,
            &opts,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
