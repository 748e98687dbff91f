//! Tape-based reverse-mode differentiation over tensors.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! tape in reverse from a scalar node. Node ids are tape positions, so inputs
//! always precede the nodes that consume them.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::nn::kernels::{
    conv1d_backward, conv1d_forward, pool_rows_backward, pool_rows_forward, sigmoid, softmax_cols,
    ConvGeom, Padding,
};
use crate::nn::loss::{check_labels, ldam_forward_backward, LdamConfig};
use crate::nn::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(String),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    PoolRows {
        x: NodeId,
        out: usize,
    },
    SoftmaxCols(NodeId),
    Embed {
        table: NodeId,
        idx: Vec<usize>,
    },
    /// Gradient w.r.t. the logits is computed during the forward pass.
    Ldam {
        logits: NodeId,
        dlogits: Vec<T>,
    },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    params: BTreeMap<String, Tensor<T>>,
    variables: HashMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter; `None` when the loss does not depend on it.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn variable(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.variables.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Adds another gradient set into this one.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (n, g) in &other.params {
            match self.params.get_mut(n) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.params.insert(n.clone(), g.clone());
                }
            }
        }
    }
}

/// Recording tape for one forward/backward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::variable`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        let value = store.get(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string()), true))
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        dilation: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let geom = ConvGeom::new(
            self.value(x).shape(),
            self.value(w).shape(),
            b.map(|b| self.value(b).shape()),
            dilation,
            padding,
        )?;
        let y = conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        Ok(self.push(
            Tensor::new(&[geom.c_out, geom.t], y)?,
            Op::Conv1d { x, w, b, geom },
            needs,
        ))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let needs = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let mut v = self.value(a).clone();
        for (x, &y) in v.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(T::zero()));
        let needs = self.needs(&[x]);
        self.push(v, Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.tanh());
        let needs = self.needs(&[x]);
        self.push(v, Op::Tanh(x), needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        let needs = self.needs(&[x]);
        self.push(v, Op::Sigmoid(x), needs)
    }

    /// Stacks rank-2 tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or(Error::Empty("concat needs at least one tensor"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat: {:?} does not have {cols} columns",
                    v.shape()
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Tensor::new(&[rows, cols], data)?,
            Op::Concat(parts.to_vec()),
            needs,
        ))
    }

    /// Adaptive average pooling of the row (feature) axis to `out` rows.
    pub fn pool_rows(&mut self, x: NodeId, out: usize) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 2 || v.rows() == 0 || out == 0 {
            return Err(Error::Shape(format!("pool_rows on {:?} to {out}", v.shape())));
        }
        let (r, c) = (v.rows(), v.cols());
        let y = pool_rows_forward(v.data(), r, c, out);
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(&[out, c], y)?, Op::PoolRows { x, out }, needs))
    }

    /// Softmax over rows for every column.
    pub fn softmax_cols(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (r, c) = (v.rows(), v.cols());
        let y = Tensor::new(&[r, c], softmax_cols(v.data(), r, c)).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(y, Op::SoftmaxCols(x), needs)
    }

    /// Gathers columns of a `D × V` table: output column `t` is `table[:, idx[t]]`.
    pub fn embed(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (d, vocab) = (tv.rows(), tv.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "embedding index {bad} outside vocabulary of {vocab}"
            )));
        }
        let n = idx.len();
        let mut y = vec![T::zero(); d * n];
        for r in 0..d {
            for (t, &i) in idx.iter().enumerate() {
                y[r * n + t] = tv.data()[r * vocab + i];
            }
        }
        let needs = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(&[d, n], y)?,
            Op::Embed {
                table,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Scalar LDAM loss of `logits` (classes × frames).
    pub fn ldam(&mut self, logits: NodeId, labels: &[usize], cfg: &LdamConfig) -> Result<NodeId> {
        cfg.validate()?;
        let v = self.value(logits);
        if v.rank() != 2 || v.rows() != cfg.n_classes() || v.cols() != labels.len() {
            return Err(Error::Shape(format!(
                "ldam: logits {:?} vs {} classes × {} labels",
                v.shape(),
                cfg.n_classes(),
                labels.len()
            )));
        }
        check_labels(labels, cfg)?;
        let (loss, dlogits) =
            ldam_forward_backward(v.data(), cfg.n_classes(), labels, &cfg.margins(), cfg.logit_scale);
        let needs = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::Ldam { logits, dlogits }, needs))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut total = T::zero();
        for &p in parts {
            let v = self.value(p);
            if v.len() != 1 {
                return Err(Error::Shape(format!("sum expects scalars, got {:?}", v.shape())));
            }
            total += v.item();
        }
        let needs = self.needs(parts);
        Ok(self.push(Tensor::scalar(total), Op::Sum(parts.to_vec()), needs))
    }

    /// Reverse-mode gradients of the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let root = self.nodes.get(loss.0).ok_or(Error::NoForwardPass(loss.0))?;
        if root.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {
                    out.variables
                        .insert(NodeId(i), Tensor::new(node.value.shape(), g)?);
                }
                Op::Param(name) => {
                    let t = Tensor::new(node.value.shape(), g)?;
                    match out.params.get_mut(name) {
                        Some(acc) => acc.add_assign(&t),
                        None => {
                            out.params.insert(name.clone(), t);
                        }
                    }
                }
                Op::Conv1d { x, w, b, geom } => {
                    let mut dx = self.take_grad(&mut grads, *x);
                    let mut dw = self.take_grad(&mut grads, *w);
                    let mut db = b.and_then(|b| self.take_grad(&mut grads, b));
                    conv1d_backward(
                        geom,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &g,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    put(&mut grads, *x, dx);
                    put(&mut grads, *w, dw);
                    if let Some(b) = b {
                        put(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        if let Some(mut d) = self.take_grad(&mut grads, id) {
                            d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g);
                            put(&mut grads, id, Some(d));
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (id, other) in [(*a, *b), (*b, *a)] {
                        if let Some(mut d) = self.take_grad(&mut grads, id) {
                            let o = self.value(other).data();
                            for ((d, &g), &o) in d.iter_mut().zip(&g).zip(o) {
                                *d += g * o;
                            }
                            put(&mut grads, id, Some(d));
                        }
                    }
                }
                Op::Relu(x) => self.unary(&mut grads, *x, &g, |_, y| {
                    if y > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }, &node.value),
                Op::Tanh(x) => {
                    self.unary(&mut grads, *x, &g, |_, y| T::one() - y * y, &node.value)
                }
                Op::Sigmoid(x) => {
                    self.unary(&mut grads, *x, &g, |_, y| y * (T::one() - y), &node.value)
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if let Some(mut d) = self.take_grad(&mut grads, p) {
                            d.iter_mut()
                                .zip(&g[offset..offset + n])
                                .for_each(|(d, &g)| *d += g);
                            put(&mut grads, p, Some(d));
                        }
                        offset += n;
                    }
                }
                Op::PoolRows { x, out: rows_out } => {
                    if let Some(mut d) = self.take_grad(&mut grads, *x) {
                        let v = self.value(*x);
                        pool_rows_backward(&g, v.rows(), v.cols(), *rows_out, &mut d);
                        put(&mut grads, *x, Some(d));
                    }
                }
                Op::SoftmaxCols(x) => {
                    if let Some(mut d) = self.take_grad(&mut grads, *x) {
                        let y = node.value.data();
                        let (r, c) = (node.value.rows(), node.value.cols());
                        for col in 0..c {
                            let mut dot = T::zero();
                            for row in 0..r {
                                dot += g[row * c + col] * y[row * c + col];
                            }
                            for row in 0..r {
                                let k = row * c + col;
                                d[k] += y[k] * (g[k] - dot);
                            }
                        }
                        put(&mut grads, *x, Some(d));
                    }
                }
                Op::Embed { table, idx } => {
                    if let Some(mut d) = self.take_grad(&mut grads, *table) {
                        let vocab = self.value(*table).cols();
                        let n = idx.len();
                        let rows = node.value.rows();
                        for r in 0..rows {
                            for (t, &i) in idx.iter().enumerate() {
                                d[r * vocab + i] += g[r * n + t];
                            }
                        }
                        put(&mut grads, *table, Some(d));
                    }
                }
                Op::Ldam { logits, dlogits } => {
                    if let Some(mut d) = self.take_grad(&mut grads, *logits) {
                        let up = g[0];
                        d.iter_mut()
                            .zip(dlogits)
                            .for_each(|(d, &dl)| *d += up * dl);
                        put(&mut grads, *logits, Some(d));
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        if let Some(mut d) = self.take_grad(&mut grads, p) {
                            d[0] += g[0];
                            put(&mut grads, p, Some(d));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Takes the gradient buffer of `id` (zeros if untouched), or `None`
    /// when `id` does not need a gradient.
    fn take_grad(&self, grads: &mut [Option<Vec<T>>], id: NodeId) -> Option<Vec<T>> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        Some(
            grads[id.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[id.0].value.len()]),
        )
    }

    /// Elementwise chain rule, `local(x, y)` being dy/dx at each element.
    fn unary(
        &self,
        grads: &mut [Option<Vec<T>>],
        x: NodeId,
        g: &[T],
        local: impl Fn(T, T) -> T,
        y: &Tensor<T>,
    ) {
        if let Some(mut d) = self.take_grad(grads, x) {
            let xv = self.value(x).data();
            for (((d, &g), &xi), &yi) in d.iter_mut().zip(g).zip(xv).zip(y.data()) {
                *d += g * local(xi, yi);
            }
            put(grads, x, Some(d));
        }
    }
}

fn put<T>(grads: &mut [Option<Vec<T>>], id: NodeId, g: Option<Vec<T>>) {
    if g.is_some() {
        grads[id.0] = g;
    }
}
