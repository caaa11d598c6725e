//! Computation record and reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation pushes one
//! node whose inputs were pushed earlier, so the node order is already a
//! topological order and [`Graph::gradients`] walks it backwards once.

use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn, transpose2};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Concat(Vec<Var>),
    SliceLast { src: Var, start: usize },
    SumAxis { src: Var, axis: usize, scale: T },
    SumAll(Var),
    Transpose(Var),
    Gather { src: Var, idx: Vec<usize> },
    L2Normalize { src: Var, norms: Vec<T> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Graph::gradients`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn split_matmul_shape(shape: &[usize]) -> (&[usize], usize, usize) {
    let n = shape.len();
    (&shape[..n - 2], shape[n - 2], shape[n - 1])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, param: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, rg: bool) -> Result<Var> {
        value.check_finite(name)?;
        Ok(self.push(value, op, rg))
    }

    /// Leaf that does not take part in differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf; its gradient is available from [`Gradients::get`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = p.trainable();
        let v = self.push(p.value().clone(), Op::Leaf, rg);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (la, p, q) = split_matmul_shape(sa);
        let (lb, q2, r) = split_matmul_shape(sb);
        if q != q2 || (!la.is_empty() && !lb.is_empty() && la != lb) {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let lead: Vec<usize> = if la.is_empty() { lb.to_vec() } else { la.to_vec() };
        let batch: usize = lead.iter().product();
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * p * r];
        if lb.is_empty() {
            gemm_nn(batch * p, q, r, ad, bd, &mut out);
        } else if la.is_empty() {
            for i in 0..batch {
                gemm_nn(p, q, r, ad, &bd[i * q * r..(i + 1) * q * r], &mut out[i * p * r..(i + 1) * p * r]);
            }
        } else {
            for i in 0..batch {
                gemm_nn(
                    p,
                    q,
                    r,
                    &ad[i * p * q..(i + 1) * p * q],
                    &bd[i * q * r..(i + 1) * q * r],
                    &mut out[i * p * r..(i + 1) * p * r],
                );
            }
        }
        let mut shape = lead;
        shape.extend([p, r]);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("matmul", Tensor::from_parts_unchecked(shape, out), Op::MatMul(a, b), rg)
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let inner = tb.numel();
        let data =
            ta.data().chunks(inner).flat_map(|chunk| chunk.iter().zip(tb.data()).map(|(&x, &y)| f(x, y))).collect();
        Tensor::from_parts_unchecked(ta.shape().to_vec(), data)
    }

    /// `a + b`, where `b`'s shape equals `a`'s or a trailing suffix of it
    /// (a bias row or a prompt block repeated over leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("add", out, Op::Add(a, b), rg)
    }

    /// `a - b` with the same broadcasting rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("sub", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("sub", out, Op::Sub(a, b), rg)
    }

    /// Elementwise `a * b` with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("mul", out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push_checked("scale", out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push_checked("relu", out, Op::Relu(a), rg)
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let w = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(w) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), out);
        let rg = self.rg(a);
        self.push_checked("softmax", out, Op::Softmax(a), rg)
    }

    /// Mean over rows of `-log softmax(logits)[target]` for `[B×C]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.ndim() != 2 || t.shape()[0] != targets.len() {
            return Err(TensorError::dim(
                "cross_entropy",
                format!("logits {:?} with {} targets", t.shape(), targets.len()),
            ));
        }
        let c = t.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(TensorError::Index { op: "cross_entropy", index: bad, extent: c });
        }
        let mut probs = t.data().to_vec();
        let mut total = T::zero();
        for (row, (&y, logit_row)) in probs.chunks_mut(c).zip(targets.iter().zip(t.data().chunks(c))) {
            let max = row_max(logit_row);
            let mut s = T::zero();
            for &v in logit_row {
                s += (v - max).exp();
            }
            let lse = max + s.ln();
            total += lse - logit_row[y];
            softmax_in_place(row);
        }
        let loss = total / T::from_f64(targets.len() as f64);
        let rg = self.rg(logits);
        self.push_checked(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            rg,
        )
    }

    /// Concatenate along the last axis; leading shapes must agree.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::dim("concat", "no inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(TensorError::shape("concat", self.shape(first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push_checked("concat", Tensor::from_parts_unchecked(shape, out), Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_lastdim(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let w = t.last_dim();
        if len == 0 || start + len > w {
            return Err(TensorError::Index { op: "slice_lastdim", index: start + len, extent: w });
        }
        let data: Vec<T> = t.data().chunks(w).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(a);
        self.push_checked(
            "slice_lastdim",
            Tensor::from_parts_unchecked(shape, data),
            Op::SliceLast { src: a, start },
            rg,
        )
    }

    fn reduce_axis(&mut self, name: &'static str, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.ndim() {
            return Err(TensorError::Index { op: name, index: axis, extent: t.ndim() });
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let n = t.shape()[axis];
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let scale = if mean { T::one() / T::from_f64(n as f64) } else { T::one() };
        let mut out = vec![T::zero(); outer * inner];
        let d = t.data();
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..n {
                let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (x, &y) in dst.iter_mut().zip(src) {
                    *x += y;
                }
            }
            if mean {
                for x in dst.iter_mut() {
                    *x *= scale;
                }
            }
        }
        let mut shape: Vec<usize> = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(a);
        self.push_checked(name, Tensor::from_parts_unchecked(shape, out), Op::SumAxis { src: a, axis, scale }, rg)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("sum_axis", a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("mean_axis", a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push_checked("sum_all", Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Swap the trailing two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.ndim() < 2 {
            return Err(TensorError::dim("transpose", format!("need rank >= 2, got {:?}", t.shape())));
        }
        let (lead, r, c) = split_matmul_shape(t.shape());
        let batch: usize = lead.iter().product();
        let mut out = Vec::with_capacity(t.numel());
        for b in 0..batch {
            out.extend(transpose2(r, c, &t.data()[b * r * c..(b + 1) * r * c]));
        }
        let mut shape = lead.to_vec();
        shape.extend([c, r]);
        let rg = self.rg(a);
        self.push_checked("transpose", Tensor::from_parts_unchecked(shape, out), Op::Transpose(a), rg)
    }

    /// Select entries along the first axis (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(a).select_first(idx)?;
        let rg = self.rg(a);
        self.push_checked("gather_rows", out, Op::Gather { src: a, idx: idx.to_vec() }, rg)
    }

    /// Divide each last-axis row by its Euclidean norm. A zero row is a
    /// non-finite error.
    pub fn l2_normalize_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let w = t.last_dim();
        let mut out = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.numel() / w);
        for row in out.chunks_mut(w) {
            let mut ss = T::zero();
            for &v in row.iter() {
                ss += v * v;
            }
            let n = ss.sqrt();
            for v in row.iter_mut() {
                *v = *v / n;
            }
            norms.push(n);
        }
        let out = Tensor::from_parts_unchecked(t.shape().to_vec(), out);
        let rg = self.rg(a);
        self.push_checked("l2_normalize", out, Op::L2Normalize { src: a, norms }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Gradients of scalar `loss` with respect to every node that requires one.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::Contract(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(lt.shape()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Run [`Graph::gradients`] and add each parameter leaf's gradient into
    /// the store. Calling this twice without zeroing accumulates.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Some(id), Some(g)) = (node.param, grads.grads[i].as_ref()) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => self.backprop_matmul(*a, *b, g, grads),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    let tb = self.value(*b);
                    let inner = tb.numel();
                    let mut gb = vec![T::zero(); inner];
                    for chunk in g.data().chunks(inner) {
                        for (x, &y) in gb.iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                    if neg {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(grads, *b, Tensor::from_parts_unchecked(tb.shape().to_vec(), gb));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let inner = tb.numel();
                if self.rg(*a) {
                    let d = g
                        .data()
                        .chunks(inner)
                        .flat_map(|chunk| chunk.iter().zip(tb.data()).map(|(&x, &y)| x * y))
                        .collect();
                    accumulate(grads, *a, Tensor::from_parts_unchecked(ta.shape().to_vec(), d));
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); inner];
                    for (gc, ac) in g.data().chunks(inner).zip(ta.data().chunks(inner)) {
                        for ((x, &y), &z) in gb.iter_mut().zip(gc).zip(ac) {
                            *x += y * z;
                        }
                    }
                    accumulate(grads, *b, Tensor::from_parts_unchecked(tb.shape().to_vec(), gb));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *a, Tensor::from_parts_unchecked(out.shape().to_vec(), d));
            }
            Op::Softmax(a) => {
                let w = out.last_dim();
                let mut d = Vec::with_capacity(out.numel());
                for (grow, yrow) in g.data().chunks(w).zip(out.data().chunks(w)) {
                    let mut dot = T::zero();
                    for (&gv, &y) in grow.iter().zip(yrow) {
                        dot += gv * y;
                    }
                    d.extend(grow.iter().zip(yrow).map(|(&gv, &y)| y * (gv - dot)));
                }
                accumulate(grads, *a, Tensor::from_parts_unchecked(out.shape().to_vec(), d));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let shape = self.shape(*logits).to_vec();
                let c = shape[1];
                let coef = g.item() / T::from_f64(targets.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * coef).collect();
                for (r, &y) in targets.iter().enumerate() {
                    d[r * c + y] -= coef;
                }
                accumulate(grads, *logits, Tensor::from_parts_unchecked(shape, d));
            }
            Op::Concat(parts) => {
                let total = out.last_dim();
                let rows = out.numel() / total;
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p).to_vec();
                    let w = s[s.len() - 1];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, Tensor::from_parts_unchecked(s, d));
                    }
                    offset += w;
                }
            }
            Op::SliceLast { src, start } => {
                let s = self.shape(*src).to_vec();
                let w = s[s.len() - 1];
                let len = out.last_dim();
                let mut d = vec![T::zero(); self.value(*src).numel()];
                for (drow, grow) in d.chunks_mut(w).zip(g.data().chunks(len)) {
                    drow[*start..*start + len].copy_from_slice(grow);
                }
                accumulate(grads, *src, Tensor::from_parts_unchecked(s, d));
            }
            Op::SumAxis { src, axis, scale } => {
                let s = self.shape(*src).to_vec();
                let outer: usize = s[..*axis].iter().product();
                let n = s[*axis];
                let inner: usize = s[axis + 1..].iter().product();
                let mut d = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let grow = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..n {
                        d.extend(grow.iter().map(|&v| v * *scale));
                    }
                }
                accumulate(grads, *src, Tensor::from_parts_unchecked(s, d));
            }
            Op::SumAll(a) => {
                accumulate(grads, *a, Tensor::full(self.shape(*a), g.item()));
            }
            Op::Transpose(a) => {
                // out is [.., c, r]; gradient goes back through the inverse swap.
                let (lead, c, r) = split_matmul_shape(out.shape());
                let batch: usize = lead.iter().product();
                let mut d = Vec::with_capacity(g.numel());
                for b in 0..batch {
                    d.extend(transpose2(c, r, &g.data()[b * r * c..(b + 1) * r * c]));
                }
                accumulate(grads, *a, Tensor::from_parts_unchecked(self.shape(*a).to_vec(), d));
            }
            Op::Gather { src, idx } => {
                let ts = self.value(*src);
                let inner = ts.numel() / ts.shape()[0];
                let mut d = vec![T::zero(); ts.numel()];
                for (k, &row) in idx.iter().enumerate() {
                    for (x, &y) in
                        d[row * inner..(row + 1) * inner].iter_mut().zip(&g.data()[k * inner..(k + 1) * inner])
                    {
                        *x += y;
                    }
                }
                accumulate(grads, *src, Tensor::from_parts_unchecked(ts.shape().to_vec(), d));
            }
            Op::L2Normalize { src, norms } => {
                let w = out.last_dim();
                let mut d = Vec::with_capacity(out.numel());
                for ((grow, yrow), &n) in g.data().chunks(w).zip(out.data().chunks(w)).zip(norms) {
                    let mut dot = T::zero();
                    for (&gv, &y) in grow.iter().zip(yrow) {
                        dot += gv * y;
                    }
                    d.extend(grow.iter().zip(yrow).map(|(&gv, &y)| (gv - y * dot) / n));
                }
                accumulate(grads, *src, Tensor::from_parts_unchecked(out.shape().to_vec(), d));
            }
            Op::Reshape(a) => {
                let s = self.shape(*a).to_vec();
                accumulate(grads, *a, Tensor::from_parts_unchecked(s, g.data().to_vec()));
            }
        }
    }

    fn backprop_matmul(&self, a: Var, b: Var, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (la, p, q) = split_matmul_shape(ta.shape());
        let (lb, _, r) = split_matmul_shape(tb.shape());
        let batch: usize = if la.is_empty() { lb.iter().product() } else { la.iter().product() };
        let (ad, bd, gd) = (ta.data(), tb.data(), g.data());
        if self.rg(a) {
            let mut da = vec![T::zero(); ta.numel()];
            if lb.is_empty() {
                gemm_nt(batch * p, r, q, gd, bd, &mut da);
            } else {
                for i in 0..batch {
                    let dst = if la.is_empty() { &mut da[..] } else { &mut da[i * p * q..(i + 1) * p * q] };
                    gemm_nt(p, r, q, &gd[i * p * r..(i + 1) * p * r], &bd[i * q * r..(i + 1) * q * r], dst);
                }
            }
            accumulate(grads, a, Tensor::from_parts_unchecked(ta.shape().to_vec(), da));
        }
        if self.rg(b) {
            let mut db = vec![T::zero(); tb.numel()];
            if lb.is_empty() {
                gemm_tn(q, batch * p, r, ad, gd, &mut db);
            } else {
                for i in 0..batch {
                    let asrc = if la.is_empty() { ad } else { &ad[i * p * q..(i + 1) * p * q] };
                    gemm_tn(q, p, r, asrc, &gd[i * p * r..(i + 1) * p * r], &mut db[i * q * r..(i + 1) * q * r]);
                }
            }
            accumulate(grads, b, Tensor::from_parts_unchecked(tb.shape().to_vec(), db));
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn row_max<T: Scalar>(row: &[T]) -> T {
    row.iter().copied().fold(T::neg_infinity(), T::max)
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row_max(row);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
