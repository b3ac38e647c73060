//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and backward is a single reverse sweep.

use std::collections::HashMap;

use super::kernels;
use super::params::{ParamId, ParamSet};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Grouping of query rows onto contiguous key rows.
///
/// Query row `r` attends to key rows
/// `(r / queries_per_segment) * keys_per_segment ..` (`keys_per_segment` of them).
/// Inter-agent attention uses `M` queries over `M` keys per environment;
/// entity attention uses one query over `L` keys per agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segments {
    pub queries_per_segment: usize,
    pub keys_per_segment: usize,
}

impl Segments {
    pub fn new(queries_per_segment: usize, keys_per_segment: usize) -> Self {
        Self {
            queries_per_segment,
            keys_per_segment,
        }
    }

    #[inline]
    pub fn key_start(&self, query_row: usize) -> usize {
        (query_row / self.queries_per_segment) * self.keys_per_segment
    }

    fn check(&self, op: &'static str, query_rows: usize, key_rows: usize) -> Result<()> {
        if self.queries_per_segment == 0 || self.keys_per_segment == 0 {
            return Err(Error::shape(op, "empty segments"));
        }
        if query_rows % self.queries_per_segment != 0 {
            return Err(Error::shape(
                op,
                format!("{query_rows} query rows not divisible by {}", self.queries_per_segment),
            ));
        }
        let want = query_rows / self.queries_per_segment * self.keys_per_segment;
        if key_rows != want {
            return Err(Error::shape(
                op,
                format!("expected {want} key rows, got {key_rows}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Concat(Vec<Var>),
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    LogSoftmax(Var),
    SegDot { q: Var, k: Var, seg: Segments, heads: usize, scale: T },
    SegNegSqDist { q: Var, k: Var, seg: Segments },
    SegMix { w: Var, v: Var, seg: Segments, heads: usize },
    GatherCols { x: Var, idx: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Square(Var),
    Clamp { x: Var, lo: T, hi: T },
    Minimum(Var, Var),
    RowSum(Var),
    Mean(Var),
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of leaf inputs produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

fn require_2d<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records parameter `id`. Repeated calls on one tape return the same node.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(params.get(id).value.clone(), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    fn finish(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, rg: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                context: format!("forward value of {op_name}"),
            });
        }
        Ok(self.push(value, op, rg))
    }

    /// `x·W + b` for `x: N×I`, `W: I×O`, `b: O`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, i) = require_2d("affine", self.value(x))?;
        let (wi, o) = require_2d("affine", self.value(w))?;
        if i != wi {
            return Err(Error::shape("affine", format!("x is {n}×{i} but W is {wi}×{o}")));
        }
        let mut out = vec![T::zero(); n * o];
        kernels::matmul(self.value(x).data(), self.value(w).data(), &mut out, n, i, o);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != o {
                return Err(Error::shape("affine", format!("bias has {} values, need {o}", bv.len())));
            }
            kernels::add_bias(&mut out, bv.data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::from_vec(&[n, o], out)?;
        self.finish("affine", value, Op::Affine { x, w, b }, rg)
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        kernels::relu_inplace(value.data_mut());
        let rg = self.rg(x);
        self.finish("relu", value, Op::Relu(x), rg)
    }

    /// Column-wise concatenation of matrices sharing their row count.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            dims.push(require_2d("concat", self.value(x))?);
        }
        let rows = dims[0].0;
        if let Some(d) = dims.iter().find(|d| d.0 != rows) {
            return Err(Error::shape("concat", format!("row counts {rows} and {}", d.0)));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        let value = Tensor::from_vec(&[rows, total], out)?;
        self.finish("concat", value, Op::Concat(xs.to_vec()), rg)
    }

    /// Row-wise softmax where masked entries act as `-inf`.
    pub fn masked_softmax(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let (n, m) = require_2d("masked_softmax", self.value(x))?;
        if mask.len() != n * m {
            return Err(Error::shape("masked_softmax", format!("mask has {} entries, need {}", mask.len(), n * m)));
        }
        let mut out = vec![T::zero(); n * m];
        for r in 0..n {
            let ok = kernels::masked_softmax_row(
                self.value(x).row(r),
                &mask[r * m..(r + 1) * m],
                &mut out[r * m..(r + 1) * m],
            );
            if !ok {
                return Err(Error::precondition("masked_softmax", format!("row {r} is fully masked")));
            }
        }
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[n, m], out)?;
        self.finish("masked_softmax", value, Op::MaskedSoftmax { x, mask }, rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, m) = require_2d("log_softmax", self.value(x))?;
        let mut out = vec![T::zero(); n * m];
        for r in 0..n {
            kernels::log_softmax_row(self.value(x).row(r), &mut out[r * m..(r + 1) * m]);
        }
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[n, m], out)?;
        self.finish("log_softmax", value, Op::LogSoftmax(x), rg)
    }

    /// Per-head scaled dot products between each query row and its segment's keys.
    ///
    /// Output row `r * heads + h`, column `j` is
    /// `scale * <q[r, head h], k[key_start(r) + j, head h]>`.
    pub fn seg_dot(&mut self, q: Var, k: Var, seg: Segments, heads: usize, scale: T) -> Result<Var> {
        let (r, d) = require_2d("seg_dot", self.value(q))?;
        let (s, dk) = require_2d("seg_dot", self.value(k))?;
        if d != dk || heads == 0 || d % heads != 0 {
            return Err(Error::shape("seg_dot", format!("q width {d}, k width {dk}, heads {heads}")));
        }
        seg.check("seg_dot", r, s)?;
        let kps = seg.keys_per_segment;
        let hd = d / heads;
        let (qv, kv) = (self.value(q), self.value(k));
        let mut out = vec![T::zero(); r * heads * kps];
        for row in 0..r {
            let start = seg.key_start(row);
            let qr = qv.row(row);
            for h in 0..heads {
                let o = &mut out[(row * heads + h) * kps..(row * heads + h + 1) * kps];
                for (j, oj) in o.iter_mut().enumerate() {
                    let kr = kv.row(start + j);
                    *oj = kernels::dot(&qr[h * hd..(h + 1) * hd], &kr[h * hd..(h + 1) * hd]) * scale;
                }
            }
        }
        let rg = self.rg(q) || self.rg(k);
        let value = Tensor::from_vec(&[r * heads, kps], out)?;
        self.finish("seg_dot", value, Op::SegDot { q, k, seg, heads, scale }, rg)
    }

    /// `-‖q_r − k_j‖²` between each query row and its segment's keys.
    pub fn seg_neg_sq_dist(&mut self, q: Var, k: Var, seg: Segments) -> Result<Var> {
        let (r, d) = require_2d("seg_neg_sq_dist", self.value(q))?;
        let (s, dk) = require_2d("seg_neg_sq_dist", self.value(k))?;
        if d != dk {
            return Err(Error::shape("seg_neg_sq_dist", format!("widths {d} and {dk}")));
        }
        seg.check("seg_neg_sq_dist", r, s)?;
        let kps = seg.keys_per_segment;
        let (qv, kv) = (self.value(q), self.value(k));
        let mut out = vec![T::zero(); r * kps];
        for row in 0..r {
            let start = seg.key_start(row);
            for j in 0..kps {
                out[row * kps + j] = kernels::neg_sq_dist(qv.row(row), kv.row(start + j));
            }
        }
        let rg = self.rg(q) || self.rg(k);
        let value = Tensor::from_vec(&[r, kps], out)?;
        self.finish("seg_neg_sq_dist", value, Op::SegNegSqDist { q, k, seg }, rg)
    }

    /// Attention-weighted sum of segment values; heads occupy contiguous column blocks.
    pub fn seg_mix(&mut self, w: Var, v: Var, seg: Segments, heads: usize) -> Result<Var> {
        let (wr, kps) = require_2d("seg_mix", self.value(w))?;
        let (s, d) = require_2d("seg_mix", self.value(v))?;
        if heads == 0 || wr % heads != 0 || d % heads != 0 || kps != seg.keys_per_segment {
            return Err(Error::shape(
                "seg_mix",
                format!("weights {wr}×{kps}, values width {d}, heads {heads}"),
            ));
        }
        let r = wr / heads;
        seg.check("seg_mix", r, s)?;
        let hd = d / heads;
        let (wv, vv) = (self.value(w), self.value(v));
        let mut out = vec![T::zero(); r * d];
        for row in 0..r {
            let start = seg.key_start(row);
            for h in 0..heads {
                kernels::mix_into(
                    wv.row(row * heads + h),
                    (0..kps).map(|j| &vv.row(start + j)[h * hd..(h + 1) * hd]),
                    &mut out[row * d + h * hd..row * d + (h + 1) * hd],
                );
            }
        }
        let rg = self.rg(w) || self.rg(v);
        let value = Tensor::from_vec(&[r, d], out)?;
        self.finish("seg_mix", value, Op::SegMix { w, v, seg, heads }, rg)
    }

    /// Picks `x[n, idx[n]]` into an `N×1` column.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = require_2d("gather_cols", self.value(x))?;
        if idx.len() != n || idx.iter().any(|&i| i >= c) {
            return Err(Error::shape("gather_cols", format!("{} indices into {n}×{c}", idx.len())));
        }
        let out = (0..n).map(|r| self.value(x).get2(r, idx[r])).collect();
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[n, 1], out)?;
        self.finish("gather_cols", value, Op::GatherCols { x, idx: idx.to_vec() }, rg)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(av.shape(), data)
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let xv = self.value(x);
        Tensor::from_vec(xv.shape(), xv.data().iter().map(|v| f(*v)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.finish("add", value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.finish("sub", value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.finish("mul", value, Op::Mul(a, b), rg)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("minimum", a, b, |x, y| if x <= y { x } else { y })?;
        let rg = self.rg(a) || self.rg(b);
        self.finish("minimum", value, Op::Minimum(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.map(x, |v| v * c);
        let rg = self.rg(x);
        self.finish("scale", value, Op::Scale(x, c), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.map(x, |v| v.exp());
        let rg = self.rg(x);
        self.finish("exp", value, Op::Exp(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.map(x, |v| v * v);
        let rg = self.rg(x);
        self.finish("square", value, Op::Square(x), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let value = self.map(x, |v| if v < lo { lo } else if v > hi { hi } else { v });
        let rg = self.rg(x);
        self.finish("clamp", value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Sums each row into an `N×1` column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (n, _) = require_2d("row_sum", self.value(x))?;
        let out = (0..n).map(|r| self.value(x).row(r).iter().copied().sum()).collect();
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[n, 1], out)?;
        self.finish("row_sum", value, Op::RowSum(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.finish("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.finish("mean", Tensor::scalar(s / T::of(n as f64)), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        self.finish("reshape", value, Op::Reshape(x), rg)
    }

    /// Propagates `d loss / d node` backwards.
    ///
    /// Parameter gradients are added into `params` (call `zero_grad` between
    /// steps); gradients of [`Tape::input`] leaves are returned.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<T>) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Param(id) => {
                    let p = params.get_mut(*id);
                    if p.grad.shape() != g.shape() {
                        return Err(Error::shape("backward", format!("parameter {} changed shape", p.name)));
                    }
                    p.grad.add_assign(&g);
                }
                op => self.backprop_op(op, &node.value, &g, &mut grads)?,
            }
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_op(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Param(_) => unreachable!("handled by caller"),
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, i) = (xv.rows(), xv.cols());
                let o = wv.cols();
                if self.rg(*x) {
                    let wt = kernels::transpose(wv.data(), i, o);
                    let mut gx = vec![T::zero(); n * i];
                    kernels::matmul(g.data(), &wt, &mut gx, n, o, i);
                    self.accumulate(grads, *x, Tensor::from_vec(&[n, i], gx)?);
                }
                if self.rg(*w) {
                    let xt = kernels::transpose(xv.data(), n, i);
                    let mut gw = vec![T::zero(); i * o];
                    kernels::matmul(&xt, g.data(), &mut gw, i, n, o);
                    self.accumulate(grads, *w, Tensor::from_vec(&[i, o], gw)?);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = vec![T::zero(); o];
                        for r in 0..n {
                            for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                                *acc += *v;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        self.accumulate(grads, *b, Tensor::from_vec(&shape, gb)?);
                    }
                }
            }
            Op::Relu(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| if *y > T::zero() { *gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(out.shape(), data)?);
            }
            Op::Concat(xs) => {
                let rows = out.rows();
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).cols();
                    if self.rg(x) {
                        let mut gx = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gx.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, x, Tensor::from_vec(&[rows, c], gx)?);
                    }
                    offset += c;
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let (n, m) = (out.rows(), out.cols());
                let mut gx = vec![T::zero(); n * m];
                for r in 0..n {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let mut dotp = T::zero();
                    for j in 0..m {
                        if mask[r * m + j] {
                            dotp += y[j] * gr[j];
                        }
                    }
                    for j in 0..m {
                        if mask[r * m + j] {
                            gx[r * m + j] = y[j] * (gr[j] - dotp);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(out.shape(), gx)?);
            }
            Op::LogSoftmax(x) => {
                let (n, m) = (out.rows(), out.cols());
                let mut gx = vec![T::zero(); n * m];
                for r in 0..n {
                    let gs: T = g.row(r).iter().copied().sum();
                    for j in 0..m {
                        gx[r * m + j] = g.get2(r, j) - out.get2(r, j).exp() * gs;
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(out.shape(), gx)?);
            }
            Op::SegDot { q, k, seg, heads, scale } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let (r, d) = (qv.rows(), qv.cols());
                let hd = d / heads;
                let kps = seg.keys_per_segment;
                let mut gq = vec![T::zero(); r * d];
                let mut gk = vec![T::zero(); kv.len()];
                for row in 0..r {
                    let start = seg.key_start(row);
                    let qr = qv.row(row);
                    for h in 0..*heads {
                        let grow = g.row(row * heads + h);
                        for j in 0..kps {
                            let gs = grow[j] * *scale;
                            if gs == T::zero() {
                                continue;
                            }
                            let kr = kv.row(start + j);
                            for c in h * hd..(h + 1) * hd {
                                gq[row * d + c] += gs * kr[c];
                                gk[(start + j) * d + c] += gs * qr[c];
                            }
                        }
                    }
                }
                self.accumulate(grads, *q, Tensor::from_vec(qv.shape(), gq)?);
                self.accumulate(grads, *k, Tensor::from_vec(kv.shape(), gk)?);
            }
            Op::SegNegSqDist { q, k, seg } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let (r, d) = (qv.rows(), qv.cols());
                let kps = seg.keys_per_segment;
                let mut gq = vec![T::zero(); r * d];
                let mut gk = vec![T::zero(); kv.len()];
                let two = T::of(2.0);
                for row in 0..r {
                    let start = seg.key_start(row);
                    for j in 0..kps {
                        let gj = g.get2(row, j);
                        for c in 0..d {
                            let diff = qv.get2(row, c) - kv.get2(start + j, c);
                            gq[row * d + c] -= two * diff * gj;
                            gk[(start + j) * d + c] += two * diff * gj;
                        }
                    }
                }
                self.accumulate(grads, *q, Tensor::from_vec(qv.shape(), gq)?);
                self.accumulate(grads, *k, Tensor::from_vec(kv.shape(), gk)?);
            }
            Op::SegMix { w, v, seg, heads } => {
                let (wv, vv) = (self.value(*w), self.value(*v));
                let d = vv.cols();
                let hd = d / heads;
                let kps = seg.keys_per_segment;
                let r = wv.rows() / heads;
                let mut gw = vec![T::zero(); wv.len()];
                let mut gv = vec![T::zero(); vv.len()];
                for row in 0..r {
                    let start = seg.key_start(row);
                    let grow = g.row(row);
                    for h in 0..*heads {
                        let wrow = wv.row(row * heads + h);
                        let gh = &grow[h * hd..(h + 1) * hd];
                        for j in 0..kps {
                            let vr = &vv.row(start + j)[h * hd..(h + 1) * hd];
                            gw[(row * heads + h) * kps + j] = kernels::dot(gh, vr);
                            let wj = wrow[j];
                            if wj != T::zero() {
                                let base = (start + j) * d + h * hd;
                                for c in 0..hd {
                                    gv[base + c] += wj * gh[c];
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *w, Tensor::from_vec(wv.shape(), gw)?);
                self.accumulate(grads, *v, Tensor::from_vec(vv.shape(), gv)?);
            }
            Op::GatherCols { x, idx } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut gx = vec![T::zero(); xv.len()];
                for (r, &i) in idx.iter().enumerate() {
                    gx[r * c + i] = g.data()[r];
                }
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), gx)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = g.data().iter().map(|v| -*v).collect();
                self.accumulate(grads, *b, Tensor::from_vec(g.shape(), neg)?);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(bv.data()).map(|(x, y)| *x * *y).collect();
                let gb = g.data().iter().zip(av.data()).map(|(x, y)| *x * *y).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.shape(), ga)?);
                self.accumulate(grads, *b, Tensor::from_vec(g.shape(), gb)?);
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = vec![T::zero(); g.len()];
                let mut gb = vec![T::zero(); g.len()];
                for i in 0..g.len() {
                    if av.data()[i] <= bv.data()[i] {
                        ga[i] = g.data()[i];
                    } else {
                        gb[i] = g.data()[i];
                    }
                }
                self.accumulate(grads, *a, Tensor::from_vec(g.shape(), ga)?);
                self.accumulate(grads, *b, Tensor::from_vec(g.shape(), gb)?);
            }
            Op::Scale(x, c) => {
                let data = g.data().iter().map(|v| *v * *c).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::Exp(x) => {
                let data = g.data().iter().zip(out.data()).map(|(gv, y)| *gv * *y).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::Square(x) => {
                let two = T::of(2.0);
                let xv = self.value(*x);
                let data = g.data().iter().zip(xv.data()).map(|(gv, v)| *gv * two * *v).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, v)| if *v >= *lo && *v <= *hi { *gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut gx = Vec::with_capacity(xv.len());
                for r in 0..xv.rows() {
                    gx.extend(std::iter::repeat_n(g.data()[r], c));
                }
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), gx)?);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(xv.shape(), g.data()[0]));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.data()[0] / T::of(xv.len() as f64);
                self.accumulate(grads, *x, Tensor::filled(xv.shape(), v));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshaped(&shape)?);
            }
        }
        Ok(())
    }
}
