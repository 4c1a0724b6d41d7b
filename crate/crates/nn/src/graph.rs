//! Define-by-run reverse-mode tape.
//!
//! A [`Graph`] is built fresh for every example: each op evaluates eagerly,
//! records its inputs, and [`Graph::backward`] walks the tape in reverse.

use std::collections::HashMap;

use crate::error::NnError;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    SoftmaxRows(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Bce(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<(), NnError> {
    if a == b {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch {
            op,
            left: a,
            right: b,
        })
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, name: &'static str) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// A constant input. Gradients flow into it but are not collected anywhere.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, "constant")
            .expect("constant inputs must be finite")
    }

    pub fn row(&mut self, values: &[T]) -> Var {
        self.constant(Tensor::row(values.to_vec()))
    }

    /// Same value as `v`, cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Trainable parameter; repeated calls within one graph share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self
            .push(Op::Param, store.get(id).clone(), "param")
            .expect("parameters must be finite");
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), Tensor::new(self.shape(a), data), "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), Tensor::new(self.shape(a), data), "mul")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    /// Adds the `1 x n` row `r` to every row of `m`.
    pub fn add_row(&mut self, m: Var, r: Var) -> Result<Var, NnError> {
        let (sm, sr) = (self.shape(m), self.shape(r));
        if sr.rows != 1 || sr.cols != sm.cols {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                left: sm,
                right: sr,
            });
        }
        let mut out = self.value(m).clone();
        let row = self.value(r).data().to_vec();
        for chunk in out.data_mut().chunks_mut(sm.cols.max(1)) {
            for (o, &x) in chunk.iter_mut().zip(&row) {
                *o = *o + x;
            }
        }
        self.push(Op::AddRow(m, r), out, "add_row")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, NnError> {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        self.push(Op::Scale(a, c), Tensor::new(self.shape(a), data), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var, NnError> {
        let data = self.value(a).data().iter().map(|&x| x + c).collect();
        self.push(
            Op::AddScalar(a),
            Tensor::new(self.shape(a), data),
            "add_scalar",
        )
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, NnError> {
        let neg = self.scale(a, -T::one())?;
        self.add_scalar(neg, T::one())
    }

    /// Column-wise concatenation; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = *parts.first().ok_or(NnError::Empty { op: "concat" })?;
        let rows = self.shape(first).rows;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.rows != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(first),
                    right: s,
                });
            }
            cols += s.cols;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push(
            Op::Concat(parts.to_vec()),
            Tensor::new(Shape::new(rows, cols), data),
            "concat",
        )
    }

    /// Stacks `1 x n` rows (or `k x n` blocks) vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = *parts.first().ok_or(NnError::Empty { op: "stack_rows" })?;
        let cols = self.shape(first).cols;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(NnError::ShapeMismatch {
                    op: "stack_rows",
                    left: self.shape(first),
                    right: s,
                });
            }
            rows += s.rows;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(
            Op::StackRows(parts.to_vec()),
            Tensor::new(Shape::new(rows, cols), data),
            "stack_rows",
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(a);
        if start + len > s.cols {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                left: s,
                right: Shape::new(s.rows, start + len),
            });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(s.rows * len);
        for r in 0..s.rows {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        self.push(
            Op::SliceCols(a, start),
            Tensor::new(Shape::new(s.rows, len), data),
            "slice_cols",
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(a);
        if start + len > s.rows {
            return Err(NnError::ShapeMismatch {
                op: "slice_rows",
                left: s,
                right: Shape::new(start + len, s.cols),
            });
        }
        let data = self.value(a).data()[start * s.cols..(start + len) * s.cols].to_vec();
        self.push(
            Op::SliceRows(a, start),
            Tensor::new(Shape::new(len, s.cols), data),
            "slice_rows",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NnError> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out, "transpose")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), Tensor::new(self.shape(a), data), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        let data = self.value(a).data().iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh(a), Tensor::new(self.shape(a), data), "tanh")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NnError> {
        let data = self.value(a).data().iter().map(|&x| x.abs()).collect();
        self.push(Op::Abs(a), Tensor::new(self.shape(a), data), "abs")
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a);
        if s.cols == 0 {
            return Err(NnError::Empty { op: "softmax_rows" });
        }
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(s.cols) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRows(a), out, "softmax_rows")
    }

    /// Sums a `k x n` matrix over its rows into `1 x n` (the child-sum).
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.shape(a);
        let mut out = vec![T::zero(); s.cols];
        for row in self.value(a).data().chunks(s.cols.max(1)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        self.push(Op::SumRows(a), Tensor::row(out), "sum_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.push(Op::Sum(a), Tensor::scalar(total), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NnError> {
        let n = self.shape(a).len();
        if n == 0 {
            return Err(NnError::Empty { op: "mean" });
        }
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.push(
            Op::Mean(a),
            Tensor::scalar(total / T::lit(n as f64)),
            "mean",
        )
    }

    /// Mean squared error between same-shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NnError> {
        same_shape("mse", self.shape(pred), self.shape(target))?;
        let n = T::lit(self.shape(pred).len() as f64);
        let total = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
        self.push(Op::Mse(pred, target), Tensor::scalar(total / n), "mse")
    }

    /// Mean binary cross-entropy; `pred` holds probabilities.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var, NnError> {
        same_shape("bce", self.shape(pred), self.shape(target))?;
        let n = T::lit(self.shape(pred).len() as f64);
        let total = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .fold(T::zero(), |acc, (&p, &y)| {
                let p = clamp_prob(p);
                acc - (y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            });
        self.push(Op::Bce(pred, target), Tensor::scalar(total / n), "bce")
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(
            self.shape(loss),
            Shape::row(1),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-T::one());
                accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(
                    grads,
                    *a,
                    Tensor::new(g.shape(), zip_map(g, vb, |x, y| x * y)),
                );
                accumulate(
                    grads,
                    *b,
                    Tensor::new(g.shape(), zip_map(g, va, |x, y| x * y)),
                );
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul(&vb.transpose()));
                accumulate(grads, *b, va.transpose().matmul(g));
            }
            Op::AddRow(m, r) => {
                accumulate(grads, *m, g.clone());
                let cols = g.shape().cols;
                let mut rg = vec![T::zero(); cols];
                for row in g.data().chunks(cols.max(1)) {
                    for (o, &x) in rg.iter_mut().zip(row) {
                        *o = *o + x;
                    }
                }
                accumulate(grads, *r, Tensor::row(rg));
            }
            Op::Scale(a, c) => {
                let mut ga = g.clone();
                ga.scale_assign(*c);
                accumulate(grads, *a, ga);
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Concat(parts) => {
                let rows = g.shape().rows;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).cols;
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                    }
                    accumulate(grads, p, Tensor::new(Shape::new(rows, w), data));
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let cols = g.shape().cols;
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p);
                    let data = g.data()[offset * cols..(offset + s.rows) * cols].to_vec();
                    accumulate(grads, p, Tensor::new(s, data));
                    offset += s.rows;
                }
            }
            Op::SliceCols(a, start) => {
                let s = self.shape(*a);
                let w = g.shape().cols;
                let mut ga = Tensor::zeros(s);
                for r in 0..s.rows {
                    for c in 0..w {
                        ga.set(r, start + c, g.get(r, c));
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s);
                let off = start * s.cols;
                ga.data_mut()[off..off + g.shape().len()].copy_from_slice(g.data());
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Sigmoid(a) => {
                let data = zip_map(g, out, |gx, y| gx * y * (T::one() - y));
                accumulate(grads, *a, Tensor::new(g.shape(), data));
            }
            Op::Tanh(a) => {
                let data = zip_map(g, out, |gx, y| gx * (T::one() - y * y));
                accumulate(grads, *a, Tensor::new(g.shape(), data));
            }
            Op::Abs(a) => {
                let data = zip_map(g, self.value(*a), |gx, x| {
                    if x > T::zero() {
                        gx
                    } else if x < T::zero() {
                        -gx
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *a, Tensor::new(g.shape(), data));
            }
            Op::SoftmaxRows(a) => {
                let cols = g.shape().cols;
                let mut data = Vec::with_capacity(g.shape().len());
                for (grow, yrow) in g.data().chunks(cols).zip(out.data().chunks(cols)) {
                    let dot = grow
                        .iter()
                        .zip(yrow)
                        .fold(T::zero(), |acc, (&gx, &y)| acc + gx * y);
                    data.extend(grow.iter().zip(yrow).map(|(&gx, &y)| y * (gx - dot)));
                }
                accumulate(grads, *a, Tensor::new(g.shape(), data));
            }
            Op::SumRows(a) => {
                let s = self.shape(*a);
                let mut data = Vec::with_capacity(s.len());
                for _ in 0..s.rows {
                    data.extend_from_slice(g.data());
                }
                accumulate(grads, *a, Tensor::new(s, data));
            }
            Op::Sum(a) => accumulate(grads, *a, Tensor::filled(self.shape(*a), g.item())),
            Op::Mean(a) => {
                let s = self.shape(*a);
                accumulate(
                    grads,
                    *a,
                    Tensor::filled(s, g.item() / T::lit(s.len() as f64)),
                );
            }
            Op::Mse(p, t) => {
                let s = self.shape(*p);
                let k = g.item() * T::lit(2.0 / s.len() as f64);
                let diff = zip_map(self.value(*p), self.value(*t), |a, b| (a - b) * k);
                let neg: Vec<T> = diff.iter().map(|&x| -x).collect();
                accumulate(grads, *p, Tensor::new(s, diff));
                accumulate(grads, *t, Tensor::new(s, neg));
            }
            Op::Bce(p, y) => {
                let s = self.shape(*p);
                let k = g.item() / T::lit(s.len() as f64);
                let (vp, vy) = (self.value(*p), self.value(*y));
                let gp = zip_map(vp, vy, |p, y| {
                    let p = clamp_prob(p);
                    k * ((p - y) / (p * (T::one() - p)))
                });
                let gy = vp.data().iter().map(|&p| {
                    let p = clamp_prob(p);
                    k * ((T::one() - p).ln() - p.ln())
                });
                let gy = gy.collect();
                accumulate(grads, *p, Tensor::new(s, gp));
                accumulate(grads, *y, Tensor::new(s, gy));
            }
        }
    }

    pub(crate) fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds this example's parameter gradients into `into`.
    pub fn accumulate_params(&self, graph: &Graph<T>, into: &mut ParamGrads<T>) {
        for (id, v) in graph.param_vars() {
            if let Some(g) = self.wrt(v) {
                into.add(id, g);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(1e-7);
    p.max(eps).min(T::one() - eps)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}
