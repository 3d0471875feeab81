//! The recording tape and its differentiable operations.

use std::sync::Arc;

use super::param::{ParamId, ParamStore};
use super::segment::{self, ReduceKind, Segments};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// User-supplied gradient rule: receives the upstream gradient of a node and
/// returns the gradient passed to its single input.
pub type GradHook<T> = Box<dyn FnMut(&Tensor<T>) -> Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    Elu,
    /// `x` for `x > 0`, `slope * x` otherwise.
    LeakyRelu(f64),
}

/// How the right operand of a binary op is laid out against the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `b` has shape `[d]` and is added to every row of an `n × d` operand.
    Row,
    /// `b` has shape `[n, 1]` and is applied across the columns of row `i`.
    Col,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Scale(Var, T),
    AddScalar(Var),
    ConcatCols(Var, Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    GatherRows {
        a: Var,
        index: Arc<[usize]>,
    },
    SegmentReduce {
        kind: ReduceKind,
        values: Var,
        seg: Arc<Segments>,
    },
    SegmentSoftmax {
        scores: Var,
        seg: Arc<Segments>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Custom {
        a: Var,
        hook: GradHook<T>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        row_weight: Vec<T>,
        probs: Tensor<T>,
        total_weight: T,
    },
    L1 {
        pred: Var,
        target: Tensor<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
    /// Accumulated gradient; only leaves keep theirs across backward calls.
    grad: Option<Tensor<T>>,
}

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in evaluation order, so every node's parents have
/// smaller ids and the reverse of insertion order is a valid topological
/// order for the backward sweep.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that accumulates its gradient on the tape; read it with [`Tape::grad`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf bound to a parameter; backward accumulates into the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let bcast = if sa == sb {
            Broadcast::Same
        } else if sa.len() == 2 && sb.len() == 1 && sb[0] == sa[1] {
            Broadcast::Row
        } else if sa.len() == 2 && sb.len() == 2 && sb[0] == sa[0] && sb[1] == 1 {
            Broadcast::Col
        } else {
            return Err(Error::dim("elementwise", sa, sb));
        };
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let value = match bcast {
            Broadcast::Same => av.zip_map(bv, f),
            Broadcast::Row | Broadcast::Col => {
                let cols = av.cols();
                let mut out = av.clone();
                for (i, row) in out.data_mut().chunks_mut(cols.max(1)).enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        let y = if bcast == Broadcast::Row {
                            bv.data()[j]
                        } else {
                            bv.data()[i]
                        };
                        *x = f(*x, y);
                    }
                }
                out
            }
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Binary { kind, a, b, bcast }, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let value = self.value(a).map(|x| match kind {
            UnaryKind::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryKind::Sigmoid => T::one() / (T::one() + (-x).exp()),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            UnaryKind::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
        });
        let rg = self.rg(a);
        self.push(Op::Unary { kind, a }, value, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Elu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(UnaryKind::LeakyRelu(slope), a)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(Op::Scale(a, factor), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), value, rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows() {
            return Err(Error::dim("concat_cols", av.shape(), bv.shape()));
        }
        let (n, d1, d2) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::matrix(n, d1 + d2, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatCols(a, b), value, rg))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || start > end || end > av.cols() {
            return Err(Error::dim("slice_cols", av.shape(), &[start, end]));
        }
        let n = av.rows();
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&av.row(i)[start..end]);
        }
        let value = Tensor::matrix(n, end - start, data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols { a, start }, value, rg))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(Error::dim("gather_rows", av.shape(), &[index.len()]));
        }
        let (n, d) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(index.len() * d);
        for (position, &i) in index.iter().enumerate() {
            if i >= n {
                return Err(Error::Index {
                    op: "gather_rows",
                    position,
                    index: i,
                    bound: n,
                });
            }
            data.extend_from_slice(av.row(i));
        }
        let value = Tensor::matrix(index.len(), d, data)?;
        let rg = self.rg(a);
        Ok(self.push(
            Op::GatherRows {
                a,
                index: Arc::clone(index),
            },
            value,
            rg,
        ))
    }

    /// Sums (or averages) the rows of `values` that share a segment id.
    pub fn segment_reduce(
        &mut self,
        kind: ReduceKind,
        values: Var,
        seg: &Arc<Segments>,
    ) -> Result<Var> {
        let vv = self.value(values);
        if vv.rank() != 2 || vv.rows() != seg.len() {
            return Err(Error::dim("segment_reduce", vv.shape(), &[seg.len()]));
        }
        let value = segment::reduce_forward(kind, vv, seg);
        let rg = self.rg(values);
        Ok(self.push(
            Op::SegmentReduce {
                kind,
                values,
                seg: Arc::clone(seg),
            },
            value,
            rg,
        ))
    }

    /// Softmax over each segment's rows, column by column.
    pub fn segment_softmax(&mut self, scores: Var, seg: &Arc<Segments>) -> Result<Var> {
        let sv = self.value(scores);
        if sv.rank() != 2 || sv.rows() != seg.len() {
            return Err(Error::dim("segment_softmax", sv.shape(), &[seg.len()]));
        }
        let value = segment::softmax_forward(sv, seg);
        let rg = self.rg(scores);
        Ok(self.push(
            Op::SegmentSoftmax {
                scores,
                seg: Arc::clone(seg),
            },
            value,
            rg,
        ))
    }

    /// Records a node whose forward value is supplied by the caller and whose
    /// backward rule is `hook`. The hook runs exactly once per backward sweep
    /// that reaches the node.
    pub fn custom(&mut self, a: Var, value: Tensor<T>, hook: GradHook<T>) -> Result<Var> {
        if value.shape() != self.shape(a) {
            return Err(Error::dim("custom", value.shape(), self.shape(a)));
        }
        let rg = self.rg(a);
        Ok(self.push(Op::Custom { a, hook }, value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.numel().max(1);
        let value = Tensor::scalar(av.sum() / T::lit(n as f64));
        let rg = self.rg(a);
        self.push(Op::Mean(a), value, rg)
    }

    /// Cross-entropy of row-wise softmax against integer targets.
    ///
    /// With `class_weights`, each row is weighted by the weight of its target
    /// class and the result is normalized by the total weight.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[T]>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.rows() != targets.len() {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let k = lv.cols();
        if let Some(w) = class_weights {
            if w.len() != k {
                return Err(Error::dim("cross_entropy", &[k], &[w.len()]));
            }
        }
        let mut probs = lv.clone();
        let mut row_weight = Vec::with_capacity(targets.len());
        let mut total = T::zero();
        let mut weight_total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Contract(format!(
                    "target {t} of row {i} outside class range 0..{k}"
                )));
            }
            let row = probs.row_mut(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
            let log_p = lv.get(i, t) - max - z.ln();
            let w = class_weights.map_or(T::one(), |w| w[t]);
            row_weight.push(w);
            total -= w * log_p;
            weight_total += w;
        }
        if weight_total <= T::zero() {
            return Err(Error::Degenerate(
                "cross-entropy over rows with zero total weight".into(),
            ));
        }
        let value = Tensor::scalar(total / weight_total);
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                row_weight,
                probs,
                total_weight: weight_total,
            },
            value,
            rg,
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::dim("l1_loss", pv.shape(), target.shape()));
        }
        let n = T::lit(pv.numel().max(1) as f64);
        let total: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Op::L1 {
                pred,
                target: target.clone(),
            },
            Tensor::scalar(total / n),
            rg,
        ))
    }

    pub(crate) fn push_batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        value: Tensor<T>,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        train: bool,
    ) -> Var {
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            value,
            rg,
        )
    }

    /// Back-propagates from a one-element `root`.
    ///
    /// Gradients of leaves accumulate: calling this twice doubles what is
    /// stored on input leaves and in `params`. Interior gradients are
    /// recomputed on every call.
    pub fn backward(&mut self, root: Var, params: &mut ParamStore<T>) -> Result<()> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, contrib: Tensor<T>| {
                if !before[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &mut node.op {
                Op::Leaf => {
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::Param(id) => {
                    params.get_mut(*id).grad.add_assign(&g);
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if before[a.0].requires_grad {
                        send(a, g.matmul_t(&before[b.0].value));
                    }
                    if before[b.0].requires_grad {
                        send(b, before[a.0].value.t_matmul(&g));
                    }
                }
                Op::Binary { kind, a, b, bcast } => {
                    let (a, b, kind, bcast) = (*a, *b, *kind, *bcast);
                    binary_backward(kind, bcast, &g, &before[a.0], &before[b.0], a, b, &mut send);
                }
                Op::Unary { kind, a } => {
                    let a = *a;
                    let x = &before[a.0].value;
                    let y = &node.value;
                    let mut out = g;
                    let d = out.data_mut();
                    match *kind {
                        UnaryKind::Relu => {
                            for (gi, &xi) in d.iter_mut().zip(x.data()) {
                                if xi <= T::zero() {
                                    *gi = T::zero();
                                }
                            }
                        }
                        UnaryKind::Sigmoid => {
                            for (gi, &yi) in d.iter_mut().zip(y.data()) {
                                *gi *= yi * (T::one() - yi);
                            }
                        }
                        UnaryKind::Tanh => {
                            for (gi, &yi) in d.iter_mut().zip(y.data()) {
                                *gi *= T::one() - yi * yi;
                            }
                        }
                        UnaryKind::Elu => {
                            for ((gi, &xi), &yi) in d.iter_mut().zip(x.data()).zip(y.data()) {
                                if xi <= T::zero() {
                                    *gi *= yi + T::one();
                                }
                            }
                        }
                        UnaryKind::LeakyRelu(slope) => {
                            let s = T::lit(slope);
                            for (gi, &xi) in d.iter_mut().zip(x.data()) {
                                if xi <= T::zero() {
                                    *gi *= s;
                                }
                            }
                        }
                    }
                    send(a, out);
                }
                Op::Scale(a, factor) => {
                    let mut out = g;
                    out.scale_in_place(*factor);
                    send(*a, out);
                }
                Op::AddScalar(a) => send(*a, g),
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let d1 = before[a.0].value.cols();
                    let d2 = before[b.0].value.cols();
                    let n = g.rows();
                    let mut ga = Vec::with_capacity(n * d1);
                    let mut gb = Vec::with_capacity(n * d2);
                    for i in 0..n {
                        let row = g.row(i);
                        ga.extend_from_slice(&row[..d1]);
                        gb.extend_from_slice(&row[d1..]);
                    }
                    send(a, Tensor::matrix(n, d1, ga)?);
                    send(b, Tensor::matrix(n, d2, gb)?);
                }
                Op::SliceCols { a, start } => {
                    let (a, start) = (*a, *start);
                    let mut out = Tensor::zeros(before[a.0].value.shape());
                    let w = g.cols();
                    for i in 0..g.rows() {
                        out.row_mut(i)[start..start + w].copy_from_slice(g.row(i));
                    }
                    send(a, out);
                }
                Op::GatherRows { a, index } => {
                    let a = *a;
                    let mut out = Tensor::zeros(before[a.0].value.shape());
                    for (k, &i) in index.iter().enumerate() {
                        for (o, &v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    send(a, out);
                }
                Op::SegmentReduce { kind, values, seg } => {
                    send(*values, segment::reduce_backward(*kind, &g, seg));
                }
                Op::SegmentSoftmax { scores, seg } => {
                    send(*scores, segment::softmax_backward(&node.value, &g, seg));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let gv = &before[gamma.0].value;
                    let (n, d) = (g.rows(), g.cols());
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    for i in 0..n {
                        for j in 0..d {
                            dgamma[j] += g.get(i, j) * xhat.get(i, j);
                            dbeta[j] += g.get(i, j);
                        }
                    }
                    if before[x.0].requires_grad {
                        let mut dx = Tensor::zeros(&[n, d]);
                        let nf = T::lit(n as f64);
                        for j in 0..d {
                            let gj = gv.data()[j];
                            if *train {
                                // dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                                let sum_dxhat = dbeta[j] * gj;
                                let sum_dxhat_xhat = dgamma[j] * gj;
                                for i in 0..n {
                                    let dxhat = g.get(i, j) * gj;
                                    let v = inv_std[j] / nf
                                        * (nf * dxhat - sum_dxhat - xhat.get(i, j) * sum_dxhat_xhat);
                                    dx.set(i, j, v);
                                }
                            } else {
                                for i in 0..n {
                                    dx.set(i, j, g.get(i, j) * gj * inv_std[j]);
                                }
                            }
                        }
                        send(x, dx);
                    }
                    send(gamma, Tensor::vector(dgamma));
                    send(beta, Tensor::vector(dbeta));
                }
                Op::Custom { a, hook } => {
                    let out = hook(&g);
                    send(*a, out);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let s = g.item()?;
                    send(a, Tensor::full(before[a.0].value.shape(), s));
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = before[a.0].value.numel().max(1);
                    let s = g.item()? / T::lit(n as f64);
                    send(a, Tensor::full(before[a.0].value.shape(), s));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    row_weight,
                    probs,
                    total_weight,
                } => {
                    let s = g.item()? / *total_weight;
                    let mut out = probs.clone();
                    for (i, (&t, &w)) in targets.iter().zip(row_weight.iter()).enumerate() {
                        let row = out.row_mut(i);
                        row[t] -= T::one();
                        for v in row.iter_mut() {
                            *v *= w * s;
                        }
                    }
                    send(*logits, out);
                }
                Op::L1 { pred, target } => {
                    let pred = *pred;
                    let pv = &before[pred.0].value;
                    let s = g.item()? / T::lit(pv.numel().max(1) as f64);
                    let out = pv.zip_map(target, |p, t| {
                        if p > t {
                            s
                        } else if p < t {
                            -s
                        } else {
                            T::zero()
                        }
                    });
                    send(pred, out);
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn binary_backward<T: Scalar>(
    kind: BinaryKind,
    bcast: Broadcast,
    g: &Tensor<T>,
    an: &Node<T>,
    bn: &Node<T>,
    a: Var,
    b: Var,
    send: &mut impl FnMut(Var, Tensor<T>),
) {
    let (av, bv) = (&an.value, &bn.value);
    let cols = g.cols().max(1);
    let b_at = |i: usize, j: usize| match bcast {
        Broadcast::Same => bv.data()[i * cols + j],
        Broadcast::Row => bv.data()[j],
        Broadcast::Col => bv.data()[i],
    };
    if an.requires_grad {
        let out = match kind {
            BinaryKind::Add | BinaryKind::Sub => g.clone(),
            BinaryKind::Mul | BinaryKind::Div => {
                let mut out = g.clone();
                for (k, v) in out.data_mut().iter_mut().enumerate() {
                    let y = b_at(k / cols, k % cols);
                    *v = if kind == BinaryKind::Mul { *v * y } else { *v / y };
                }
                out
            }
        };
        send(a, out);
    }
    if bn.requires_grad {
        // Per-element contribution to b before reducing over broadcast axes.
        let elem = |k: usize| -> T {
            let gk = g.data()[k];
            match kind {
                BinaryKind::Add => gk,
                BinaryKind::Sub => -gk,
                BinaryKind::Mul => gk * av.data()[k],
                BinaryKind::Div => {
                    let y = b_at(k / cols, k % cols);
                    -gk * av.data()[k] / (y * y)
                }
            }
        };
        let mut out = Tensor::zeros(bv.shape());
        for k in 0..g.numel() {
            let slot = match bcast {
                Broadcast::Same => k,
                Broadcast::Row => k % cols,
                Broadcast::Col => k / cols,
            };
            out.data_mut()[slot] += elem(k);
        }
        send(b, out);
    }
}
