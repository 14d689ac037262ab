//! Dense float64 tensors and a reverse-mode tape.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves either borrow
//! their values (parameters shared read-only across threads) or own them.
//! [`Tape::backward`] replays adjoints in reverse recorded order, once.

use std::borrow::Cow;

use rand::Rng;

use crate::error::{IramError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(IramError::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(IramError::Data("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    /// Marks the tensor as a gradient-receiving leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(IramError::dim("accumulate_grad", &self.shape, &[g.len()]));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    SelectRow { x: Var, row: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Slice { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Embedding { table: Var, ids: Vec<Option<usize>> },
    EmbeddingMean { table: Var, bags: Vec<Vec<usize>> },
    Softmax(Var),
    CrossEntropy { logits: Var, label: usize },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
    tag: Option<usize>,
}

/// Adjoints produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the adjoint of `v` into `target.grad`.
    pub fn write_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

fn shape_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Copies a node's value out as an owned tensor (without grad participation).
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Leaves tagged by the caller, in recording order.
    pub fn tagged_leaves(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.tag.map(|t| (t, Var(i))))
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape_numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
            tag: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf that copies `t`; it requires grad iff `t` does.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a leaf that borrows `t`, tagged so gradients can be routed back.
    pub fn borrowed_leaf(&mut self, t: &'a Tensor, tag: usize) -> Var {
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: Cow::Borrowed(&t.data),
            op: Op::Leaf,
            requires_grad: t.requires_grad,
            tag: Some(tag),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if shape_numel(&shape) != data.len() {
            return Err(IramError::dim("constant", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = shape_numel(&shape);
        self.push(shape, vec![0.0; n], Op::Leaf, false)
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(IramError::dim("matmul", &sa, &sb)),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k2] => (*k2, 1, true),
            [k2, n] => (*k2, *n, false),
            _ => return Err(IramError::dim("matmul", &sa, &sb)),
        };
        if k != k2 {
            return Err(IramError::dim("matmul", &sa, &sb));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let shape = match (a_vec, b_vec) {
            (true, true) => vec![],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(IramError::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(self.shape(a).to_vec(), out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds `bias` (rank 1, width d) to a vector of width d or to every row of
    /// an `[n, d]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] || self.shape(x).is_empty() {
            return Err(IramError::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let bv = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % d])
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias { x, bias }, rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Max over consecutive groups of `pool` entries along the last axis.
    pub fn max_pool(&mut self, x: Var, pool: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().unwrap_or(&1);
        if pool == 0 || shape.is_empty() || !last.is_multiple_of(pool) {
            return Err(IramError::dim("max_pool", &shape, &[pool]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(v.len() / pool);
        let mut argmax = Vec::with_capacity(v.len() / pool);
        for (g, chunk) in v.chunks(pool).enumerate() {
            let mut best = 0;
            for (i, c) in chunk.iter().enumerate() {
                if *c > chunk[best] {
                    best = i;
                }
            }
            out.push(chunk[best]);
            argmax.push(g * pool + best);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = last / pool;
        let rg = self.rg(&[x]);
        Ok(self.push(out_shape, out, Op::MaxPool { x, argmax }, rg))
    }

    /// Concatenates scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(IramError::EmptyInput("concat"));
        }
        let mut out = Vec::new();
        for p in parts {
            if self.shape(*p).len() > 1 {
                return Err(IramError::dim("concat", self.shape(*p), &[]));
            }
            out.extend_from_slice(self.value(*p));
        }
        let rg = self.rg(parts);
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-width vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(IramError::EmptyInput("stack"))?;
        let d = self.shape(first).to_vec();
        if d.len() != 1 {
            return Err(IramError::dim("stack", &d, &[]));
        }
        let mut out = Vec::with_capacity(rows.len() * d[0]);
        for r in rows {
            if self.shape(*r) != d.as_slice() {
                return Err(IramError::dim("stack", &d, self.shape(*r)));
            }
            out.extend_from_slice(self.value(*r));
        }
        let rg = self.rg(rows);
        Ok(self.push(vec![rows.len(), d[0]], out, Op::Stack(rows.to_vec()), rg))
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || row >= shape[0] {
            return Err(IramError::dim("select_row", &shape, &[row]));
        }
        let d = shape[1];
        let out = self.value(x)[row * d..(row + 1) * d].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![d], out, Op::SelectRow { x, row }, rg))
    }

    /// Splits a matrix into its rows.
    pub fn rows(&mut self, x: Var) -> Result<Vec<Var>> {
        let n = match self.shape(x) {
            [n, _] => *n,
            s => return Err(IramError::dim("rows", s, &[])),
        };
        (0..n).map(|i| self.select_row(x, i)).collect()
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(IramError::dim("transpose", s, &[])),
        };
        let v = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = v[i * cols + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { x, rows, cols }, rg))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 || len == 0 || start + len > shape[0] {
            return Err(IramError::dim("slice", &shape, &[start, len]));
        }
        let out = self.value(x)[start..start + len].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![len], out, Op::Slice { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(vec![], vec![s], Op::Mean(x), rg)
    }

    /// Inverted dropout. With `train == false` or `p == 0` this returns `x`
    /// itself and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(IramError::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, rg))
    }

    /// Gathers rows of a `[V, d]` table; `None` yields a zero row.
    pub fn embedding(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let (v, d) = match self.shape(table) {
            [v, d] => (*v, *d),
            s => return Err(IramError::dim("embedding", s, &[])),
        };
        if ids.is_empty() {
            return Err(IramError::EmptyInput("embedding"));
        }
        let tv = self.value(table);
        let mut out = vec![0.0; ids.len() * d];
        for (i, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= v {
                    return Err(IramError::dim("embedding", &[v, d], &[id]));
                }
                out[i * d..(i + 1) * d].copy_from_slice(&tv[id * d..(id + 1) * d]);
            }
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Per output row, the mean of the listed table rows; an empty bag gives zeros.
    pub fn embedding_mean(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let (v, d) = match self.shape(table) {
            [v, d] => (*v, *d),
            s => return Err(IramError::dim("embedding_mean", s, &[])),
        };
        if bags.is_empty() {
            return Err(IramError::EmptyInput("embedding_mean"));
        }
        let tv = self.value(table);
        let mut out = vec![0.0; bags.len() * d];
        for (i, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                continue;
            }
            let w = 1.0 / bag.len() as f64;
            let row = &mut out[i * d..(i + 1) * d];
            for &id in bag {
                if id >= v {
                    return Err(IramError::dim("embedding_mean", &[v, d], &[id]));
                }
                for (o, t) in row.iter_mut().zip(&tv[id * d..(id + 1) * d]) {
                    *o += w * t;
                }
            }
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![bags.len(), d],
            out,
            Op::EmbeddingMean {
                table,
                bags: bags.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax over a vector. Masked positions (`mask[i] == false`) are exactly 0.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 {
            return Err(IramError::dim("softmax", &shape, &[]));
        }
        if let Some(m) = mask {
            if m.len() != shape[0] {
                return Err(IramError::dim("softmax", &shape, &[m.len()]));
            }
        }
        let out = softmax_values(self.value(x), mask)?;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Softmax(x), rg))
    }

    /// Negative log-likelihood of `label` under softmax(logits).
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 1 || label >= shape[0] {
            return Err(IramError::Data(format!(
                "label {label} out of range for logits of shape {shape:?}"
            )));
        }
        let v = self.value(logits);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - v[label];
        let rg = self.rg(&[logits]);
        Ok(self.push(vec![], vec![loss], Op::CrossEntropy { logits, label }, rg))
    }

    /// Replays adjoints from a scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(IramError::BackwardTwice);
        }
        if !self.shape(loss).is_empty() {
            return Err(IramError::Rank(self.shape(loss).to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(IramError::Disconnected);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &grads[i] {
                Some(_) if matches!(node.op, Op::Leaf) => continue,
                Some(g) => g.clone(),
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            if !matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |ga| {
                    for ((x, y), w) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, y), w) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *x += y * w;
                    }
                });
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*bias, &mut |gb| {
                    let d = gb.len();
                    for (i, y) in g.iter().enumerate() {
                        gb[i % d] += y;
                    }
                });
            }
            Op::Affine { x, scale } => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, y)| *a += scale * y));
            }
            Op::Sigmoid(x) => {
                let out = &node.value;
                acc(*x, &mut |gx| {
                    for ((a, y), s) in gx.iter_mut().zip(g).zip(out.iter()) {
                        *a += y * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(x) => {
                let out = &node.value;
                acc(*x, &mut |gx| {
                    for ((a, y), t) in gx.iter_mut().zip(g).zip(out.iter()) {
                        *a += y * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(x) => {
                let inp = &nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((a, y), v) in gx.iter_mut().zip(g).zip(inp.iter()) {
                        if *v > 0.0 {
                            *a += y;
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                acc(*x, &mut |gx| {
                    for (y, &j) in g.iter().zip(argmax) {
                        gx[j] += y;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(*p, &mut |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::Stack(rows) => {
                let d = node.shape[1];
                for (r, p) in rows.iter().enumerate() {
                    acc(*p, &mut |gp| add_into(gp, &g[r * d..(r + 1) * d]));
                }
            }
            Op::SelectRow { x, row } => {
                let d = g.len();
                acc(*x, &mut |gx| add_into(&mut gx[row * d..(row + 1) * d], g));
            }
            Op::Transpose { x, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                acc(*x, &mut |gx| {
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                });
            }
            Op::Slice { x, start } => {
                acc(*x, &mut |gx| add_into(&mut gx[*start..*start + g.len()], g));
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |gx| {
                    for ((a, y), m) in gx.iter_mut().zip(g).zip(mask) {
                        *a += y * m;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = node.shape[1];
                acc(*table, &mut |gt| {
                    for (i, id) in ids.iter().enumerate() {
                        if let Some(id) = id {
                            add_into(&mut gt[id * d..(id + 1) * d], &g[i * d..(i + 1) * d]);
                        }
                    }
                });
            }
            Op::EmbeddingMean { table, bags } => {
                let d = node.shape[1];
                acc(*table, &mut |gt| {
                    for (i, bag) in bags.iter().enumerate() {
                        let w = 1.0 / bag.len().max(1) as f64;
                        for &id in bag {
                            for (a, y) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                                *a += w * y;
                            }
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let out = &node.value;
                let dot: f64 = out.iter().zip(g).map(|(p, y)| p * y).sum();
                acc(*x, &mut |gx| {
                    for ((a, y), p) in gx.iter_mut().zip(g).zip(out.iter()) {
                        *a += p * (y - dot);
                    }
                });
            }
            Op::CrossEntropy { logits, label } => {
                let probs = softmax_values(&nodes[logits.0].value, None).expect("unmasked softmax");
                acc(*logits, &mut |gl| {
                    for (j, (a, p)) in gl.iter_mut().zip(&probs).enumerate() {
                        let t = if j == *label { 1.0 } else { 0.0 };
                        *a += g[0] * (p - t);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over the unmasked positions of `x`.
pub fn softmax_values(x: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| on(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(IramError::DegenerateMask);
    }
    let mut out: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| if on(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
        }
    }

    #[test]
    fn matmul_identity_and_row_times_column() {
        let mut tape = Tape::new();
        let eye = tape.input(&Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let m = tape.input(&Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.input(&Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
        let b = tape.input(&Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[1, 1]);
        assert_eq!(tape.value(c), &[11.0]);
    }

    #[test]
    fn matmul_gradient_wrt_left() {
        let a = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap().with_grad();
        let b = Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap();
        let mut tape = Tape::new();
        let va = tape.input(&a);
        let vb = tape.input(&b);
        let c = tape.matmul(va, vb).unwrap();
        let s = tape.sum(c);
        let grads = tape.backward(s).unwrap();
        assert!(close(grads.get(va).unwrap(), &[3.0, 4.0], 1e-12));
        assert!(grads.get(vb).is_none());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.zeros(vec![2, 3]);
        let b = tape.zeros(vec![2, 3]);
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_values(&[0.0, 0.0, 0.0], None).unwrap();
        assert!(close(&s, &[1.0 / 3.0; 3], 1e-15));
        let s = softmax_values(&[1.0, 2.0, 3.0], None).unwrap();
        assert!(close(&s, &[0.09003057, 0.24472847, 0.66524096], 1e-8));
        let s = softmax_values(&[5.0, 5.0], Some(&[true, false])).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_is_degenerate() {
        let mut tape = Tape::new();
        let x = tape.zeros(vec![2]);
        assert!(matches!(
            tape.softmax(x, Some(&[false, false])),
            Err(IramError::DegenerateMask)
        ));
    }

    #[test]
    fn softmax_large_inputs_are_stable() {
        let s = softmax_values(&[1000.0, 1000.0, -1000.0], None).unwrap();
        assert!(close(&s, &[0.5, 0.5, 0.0], 1e-15));
    }

    #[test]
    fn backward_square_and_sum() {
        let x = Tensor::scalar(3.0).with_grad();
        let mut tape = Tape::new();
        let v = tape.input(&x);
        let y = tape.mul(v, v).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(v).unwrap(), &[6.0]);

        let x = Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap().with_grad();
        let mut tape = Tape::new();
        let v = tape.input(&x);
        let y = tape.sum(v);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(v).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let c = tape.input(&Tensor::scalar(2.0));
        assert!(matches!(tape.backward(c), Err(IramError::Disconnected)));

        let mut tape = Tape::new();
        let x = tape.input(&Tensor::vector(vec![1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(IramError::Rank(_))));

        let mut tape = Tape::new();
        let x = tape.input(&Tensor::scalar(2.0).with_grad());
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(IramError::BackwardTwice)));
    }

    #[test]
    fn gradients_write_into_tensor() {
        let mut x = Tensor::vector(vec![1.0, -1.0]).with_grad();
        let mut tape = Tape::new();
        let v = tape.input(&x);
        let y = tape.sum(v);
        let g = tape.backward(y).unwrap();
        g.write_into(v, &mut x).unwrap();
        g.write_into(v, &mut x).unwrap();
        assert_eq!(x.grad().unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        let d = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        for (o, i) in tape.value(d).iter().zip([1.0, 2.0, 3.0]) {
            assert!(*o == 0.0 || (*o - 2.0 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_none_rows_are_zero_and_gradient_scatters() {
        let table = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap().with_grad();
        let mut tape = Tape::new();
        let t = tape.input(&table);
        let e = tape.embedding(t, &[Some(1), None, Some(1)]).unwrap();
        assert_eq!(tape.value(e), &[3.0, 4.0, 0.0, 0.0, 3.0, 4.0]);
        let s = tape.sum(e);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(t).unwrap(), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_mean_of_empty_bag_is_zero() {
        let table = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 6.0]]).unwrap();
        let mut tape = Tape::new();
        let t = tape.input(&table);
        let e = tape.embedding_mean(t, &[vec![], vec![1], vec![0, 1]]).unwrap();
        assert_eq!(tape.value(e), &[0.0, 0.0, 3.0, 6.0, 2.0, 4.0]);
    }

    #[test]
    fn max_pool_picks_group_maximum() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::vector(vec![3.0, 5.0, -1.0, -2.0]));
        let y = tape.max_pool(x, 2).unwrap();
        assert_eq!(tape.value(y), &[5.0, -1.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let logits = Tensor::vector(vec![0.3, -1.2, 2.0]).with_grad();
        let mut tape = Tape::new();
        let l = tape.input(&logits);
        let ce = tape.cross_entropy(l, 2).unwrap();
        let g = tape.backward(ce).unwrap();
        let p = softmax_values(logits.data(), None).unwrap();
        let expect = [p[0], p[1], p[2] - 1.0];
        assert!(close(g.get(l).unwrap(), &expect, 1e-12));
        assert!((tape.scalar_value(ce) + p[2].ln()).abs() < 1e-12);
    }
}
