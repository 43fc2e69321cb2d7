use std::fmt;

use super::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used to name ops in diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sigmoid,
    Tanh,
    Relu,
    AddBias,
    Transpose,
    Reshape,
    Softmax,
    MaskedSoftmax,
    LogSoftmax,
    Concat,
    Narrow,
    GatherRows,
    SelectRows,
    Pick,
    Sum,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::AddBias,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Softmax,
        OpKind::MaskedSoftmax,
        OpKind::LogSoftmax,
        OpKind::Concat,
        OpKind::Narrow,
        OpKind::GatherRows,
        OpKind::SelectRows,
        OpKind::Pick,
        OpKind::Sum,
        OpKind::Mean,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for OpKind {
    type Err = crate::Error;

    /// Case-insensitive op name, e.g. `masked_softmax` or `MaskedSoftmax`.
    fn from_str(s: &str) -> crate::Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        OpKind::ALL
            .into_iter()
            .find(|k| k.to_string().to_lowercase() == key)
            .ok_or_else(|| crate::Error::Config(format!("unknown op kind {s:?}")))
    }
}

/// Scales the input gradients produced by every op of one kind.
///
/// Only meant for checking that gradient verification catches a broken
/// backward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardFault {
    pub op: OpKind,
    pub factor: f64,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    AddBias(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var, usize),
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>, usize),
    Narrow { src: Var, axis: usize, start: usize },
    GatherRows(Var, Vec<usize>),
    SelectRows(Vec<bool>, Var, Var),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Softmax(..) => OpKind::Softmax,
            Op::MaskedSoftmax(..) => OpKind::MaskedSoftmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Concat(..) => OpKind::Concat,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::SelectRows(..) => OpKind::SelectRows,
            Op::Pick(..) => OpKind::Pick,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by parameter [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter leaf, or `None` if it was not reachable.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, var: Var) -> Option<Tensor<T>> {
        self.get(var)
            .map(|g| Tensor::new(self.shapes[var.0].clone(), g.to_vec()).expect("grad shape"))
    }
}

/// Define-by-run tape. Nodes are appended in evaluation order, so the node
/// list is always a topological order of the computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<BackwardFault>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax over `n` entries spaced by `stride`, skipping masked entries.
fn softmax_strided<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    base: usize,
    n: usize,
    stride: usize,
    keep: impl Fn(usize) -> bool,
) {
    let mut max = T::neg_infinity();
    for j in (0..n).filter(|&j| keep(j)) {
        max = max.max(src[base + j * stride]);
    }
    let mut sum = T::zero();
    for j in 0..n {
        let idx = base + j * stride;
        let e = if keep(j) { (src[idx] - max).exp() } else { T::zero() };
        dst[idx] = e;
        sum = sum + e;
    }
    for j in 0..n {
        let idx = base + j * stride;
        dst[idx] = dst[idx] / sum;
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Installs a deliberate backward-rule corruption (verification fixture).
    pub fn set_backward_fault(&mut self, fault: Option<BackwardFault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn tensor(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("op produced inconsistent shape")
    }

    /// Records a trainable leaf; its gradient is reported by `backward`.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let value = Self::tensor(tensor.shape().to_vec(), tensor.data().to_vec());
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let value = Self::tensor(tensor.shape().to_vec(), tensor.into_data());
        self.push(value, Op::Leaf, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Var> {
        Ok(self.constant(Tensor::zeros(shape.to_vec())?))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!("{what}: shapes {sa:?} and {sb:?} differ"));
        }
        Ok(())
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| shape_err!("{what}: expected a matrix, got {:?}", self.shape(v)))
    }

    /// Matrix product `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(shape_err!(
                "matmul: inner dimensions differ for {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let ng = self.needs(&[a, b]);
        Ok(self.push(Self::tensor(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Self::tensor(shape, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let shape = v.shape().to_vec();
        let ng = self.needs(&[a]);
        self.push(Self::tensor(shape, data), op, ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// Adds a bias vector `[n]` to every row of `a` (`[.. × n]`).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(a).last().expect("rank >= 1");
        if self.shape(bias) != [n] {
            return Err(shape_err!(
                "add_bias: bias {:?} does not match trailing dim of {:?}",
                self.shape(bias),
                self.shape(a)
            ));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, bias]);
        Ok(self.push(Self::tensor(shape, data), Op::AddBias(a, bias), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(Self::tensor(vec![c, r], data), Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let ng = self.needs(&[a]);
        Ok(self.push(
            Self::tensor(value.shape().to_vec(), value.into_data()),
            Op::Reshape(a),
            ng,
        ))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err!("softmax: axis {axis} out of range for {shape:?}"));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                softmax_strided(src, &mut out, o * n * inner + i, n, inner, |_| true);
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(Self::tensor(shape, out), Op::Softmax(a, axis), ng))
    }

    /// Row-wise softmax of a matrix restricted to columns whose `keep`
    /// flag is set; masked columns get exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let (r, c) = self.matrix(a, "masked_softmax")?;
        if keep.len() != c {
            return Err(shape_err!(
                "masked_softmax: mask of length {} for {c} columns",
                keep.len()
            ));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Contract(
                "attention row has every key position masked".into(),
            ));
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for row in 0..r {
            softmax_strided(src, &mut out, row * c, c, 1, |j| keep[j]);
        }
        let ng = self.needs(&[a]);
        Ok(self.push(Self::tensor(vec![r, c], out), Op::MaskedSoftmax(a), ng))
    }

    /// Row-wise log-softmax of a matrix, via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "log_softmax")?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for row in 0..r {
            let xs = &src[row * c..(row + 1) * c];
            let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            for (o, &x) in out[row * c..(row + 1) * c].iter_mut().zip(xs) {
                *o = x - lse;
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(Self::tensor(vec![r, c], out), Op::LogSoftmax(a), ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err!("concat: axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut shape = base;
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(Self::tensor(shape, out), Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err!(
                "narrow: [{start}, {}) along axis {axis} out of range for {shape:?}",
                start + len
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let ng = self.needs(&[a]);
        Ok(self.push(Self::tensor(new_shape, out), Op::Narrow { src: a, axis, start }, ng))
    }

    /// Gathers rows of a matrix; rows may repeat (gradients scatter-add).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(a, "gather_rows")?;
        if rows.is_empty() {
            return Err(shape_err!("gather_rows: empty row list"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!(
                "row {bad} out of range for matrix with {r} rows"
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.needs(&[a]);
        Ok(self.push(
            Self::tensor(vec![rows.len(), c], out),
            Op::GatherRows(a, rows.to_vec()),
            ng,
        ))
    }

    /// Row `i` of the result is row `i` of `a` where `take_a[i]`, else of `b`.
    pub fn select_rows(&mut self, take_a: &[bool], a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "select_rows")?;
        let (r, c) = self.matrix(a, "select_rows")?;
        if take_a.len() != r {
            return Err(shape_err!(
                "select_rows: mask of length {} for {r} rows",
                take_a.len()
            ));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * c);
        for (i, &t) in take_a.iter().enumerate() {
            let src = if t { da } else { db };
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(
            Self::tensor(vec![r, c], out),
            Op::SelectRows(take_a.to_vec(), a, b),
            ng,
        ))
    }

    /// Picks one column per row: `out[i] = a[i, cols[i]]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(a, "pick")?;
        if cols.len() != r {
            return Err(shape_err!("pick: {} indices for {r} rows", cols.len()));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Index(format!("column {bad} out of range ({c} columns)")));
        }
        let src = self.value(a).data();
        let out = cols.iter().enumerate().map(|(i, &j)| src[i * c + j]).collect();
        let ng = self.needs(&[a]);
        Ok(self.push(Self::tensor(vec![r], out), Op::Pick(a, cols.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let n = T::from_usize(v.numel()).expect("count");
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s / n), Op::Mean(a), ng)
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// over every path through which a value is used.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        let mut result: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                result[idx] = Some(g);
                continue;
            }
            let factor = match self.fault {
                Some(f) if f.op == node.op.kind() => Some(T::from_f64_lossy(f.factor)),
                _ => None,
            };
            let mut sink = |var: Var, mut contrib: Vec<T>| {
                if !self.nodes[var.0].needs_grad {
                    return;
                }
                if let Some(f) = factor {
                    contrib.iter_mut().for_each(|x| *x = *x * f);
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(contrib),
                }
            };
            self.backprop_node(node, &g, &mut sink);
        }
        Ok(Gradients {
            grads: result,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], sink: &mut impl FnMut(Var, Vec<T>)) {
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("matrix");
                let n = node.value.shape()[1];
                if needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, (n as isize, 1), val(*b), (1, n as isize), &mut da, false);
                    sink(*a, da);
                }
                if needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, val(*a), (1, k as isize), g, (n as isize, 1), &mut db, false);
                    sink(*b, db);
                }
            }
            Op::Add(a, b) => {
                sink(*a, g.to_vec());
                sink(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                sink(*a, g.to_vec());
                sink(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    sink(*a, g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect());
                }
                if needs(*b) {
                    sink(*b, g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(a, c) => sink(*a, g.iter().map(|&x| x * *c).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => sink(*a, g.to_vec()),
            Op::Sigmoid(a) => sink(
                *a,
                g.iter()
                    .zip(out)
                    .map(|(&x, &y)| x * y * (T::one() - y))
                    .collect(),
            ),
            Op::Tanh(a) => sink(
                *a,
                g.iter()
                    .zip(out)
                    .map(|(&x, &y)| x * (T::one() - y * y))
                    .collect(),
            ),
            Op::Relu(a) => sink(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() })
                    .collect(),
            ),
            Op::AddBias(a, bias) => {
                sink(*a, g.to_vec());
                if needs(*bias) {
                    let n = self.nodes[bias.0].value.numel();
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &x)| *d = *d + x);
                    }
                    sink(*bias, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.nodes[a.0].value.dims2().expect("matrix");
                let mut da = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                sink(*a, da);
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut da = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: T = (0..n)
                            .map(|j| g[base + j * inner] * out[base + j * inner])
                            .sum();
                        for j in 0..n {
                            let idx = base + j * inner;
                            da[idx] = out[idx] * (g[idx] - dot);
                        }
                    }
                }
                sink(*a, da);
            }
            Op::MaskedSoftmax(a) => {
                let c = node.value.shape()[1];
                let mut da = vec![T::zero(); g.len()];
                for ((drow, grow), yrow) in da.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                    for ((d, &x), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = y * (x - dot);
                    }
                }
                sink(*a, da);
            }
            Op::LogSoftmax(a) => {
                let c = node.value.shape()[1];
                let mut da = vec![T::zero(); g.len()];
                for ((drow, grow), yrow) in da.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                    let total: T = grow.iter().copied().sum();
                    for ((d, &x), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = x - y.exp() * total;
                    }
                }
                sink(*a, da);
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.shape()[*axis];
                    if needs(p) {
                        let mut dp = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[from..from + w * inner]);
                        }
                        sink(p, dp);
                    }
                    offset += w;
                }
            }
            Op::Narrow { src, axis, start } => {
                let src_shape = self.nodes[src.0].value.shape();
                let (outer, n, inner) = axis_split(src_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut da = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    let from = o * len * inner;
                    da[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                sink(*src, da);
            }
            Op::GatherRows(a, rows) => {
                let c = node.value.shape()[1];
                let mut da = vec![T::zero(); self.nodes[a.0].value.numel()];
                for (k, &i) in rows.iter().enumerate() {
                    da[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(d, &x)| *d = *d + x);
                }
                sink(*a, da);
            }
            Op::SelectRows(take_a, a, b) => {
                let c = node.value.shape()[1];
                let split = |want: bool| {
                    let mut d = g.to_vec();
                    for (row, &t) in d.chunks_mut(c).zip(take_a) {
                        if t != want {
                            row.iter_mut().for_each(|x| *x = T::zero());
                        }
                    }
                    d
                };
                if needs(*a) {
                    sink(*a, split(true));
                }
                if needs(*b) {
                    sink(*b, split(false));
                }
            }
            Op::Pick(a, cols) => {
                let c = self.nodes[a.0].value.shape()[1];
                let mut da = vec![T::zero(); self.nodes[a.0].value.numel()];
                for (i, &j) in cols.iter().enumerate() {
                    da[i * c + j] = g[i];
                }
                sink(*a, da);
            }
            Op::Sum(a) => sink(*a, vec![g[0]; self.nodes[a.0].value.numel()]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                let v = g[0] / T::from_usize(n).expect("count");
                sink(*a, vec![v; n]);
            }
        }
    }
}
