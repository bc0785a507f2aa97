//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the tape is already a topological
//! order; `backward` walks it once in reverse and every node is visited exactly
//! once. Gradients from multiple consumers of a node accumulate.

use rand::Rng;

use crate::array::{broadcast_index_map, broadcast_shapes, Array, Real};
use crate::error::{Error, Result};
use crate::kernels;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    ClampMin(Var, T),
    MatMul(Var, Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm { x: Var, inv_std: Vec<T> },
    Dropout { x: Var, scale: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Sum { x: Var, axis: usize },
    SumAll(Var),
    MaskedFill { x: Var, mask: Vec<bool> },
    Gather { x: Var, indices: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Relu(_) => "relu",
            Op::ClampMin(..) => "clamp_min",
            Op::MatMul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::Embedding { .. } => "embedding",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Permute { .. } => "permute",
            Op::Reshape(_) => "reshape",
            Op::Sum { .. } => "sum",
            Op::SumAll(_) => "sum_all",
            Op::MaskedFill { .. } => "masked_fill",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Array<T>>>,
    backward_done: bool,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf; receives no gradient.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    // ---- elementwise binary (broadcasting) ----

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(Array<T>, bool)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let rg = self.rg(a) || self.rg(b);
        if sa == sb {
            let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            return Ok((Array::from_parts(sa, data), rg));
        }
        let out = broadcast_shapes(&sa, &sb).ok_or_else(|| shape_err(name, &sa, &sb))?;
        let ma = broadcast_index_map(&sa, &out);
        let mb = broadcast_index_map(&sb, &out);
        let data = ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect();
        Ok((Array::from_parts(out, data), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), rg))
    }

    // ---- elementwise unary ----

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        let rg = self.rg(x);
        self.push(v, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.exp());
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.ln());
        let rg = self.rg(x);
        self.push(v, Op::Log(x), rg)
    }

    /// Square root. The gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.sqrt());
        let rg = self.rg(x);
        self.push(v, Op::Sqrt(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| if e > T::zero() { e } else { T::zero() });
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: T) -> Var {
        let v = self.value(x).map(|e| if e > floor { e } else { floor });
        let rg = self.rg(x);
        self.push(v, Op::ClampMin(x, floor), rg)
    }

    // ---- linear algebra ----

    /// `[.., m, k] x [.., k, n]` with identical leading dims, or `[.., m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let batch_a: usize = sa[..sa.len() - 2].iter().product();
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = vec![T::zero(); batch_a * m * n];
        if shared_rhs {
            kernels::gemm_nn(va, vb, &mut out, batch_a * m, k, n);
        } else {
            for bi in 0..batch_a {
                kernels::gemm_nn(
                    &va[bi * m * k..(bi + 1) * m * k],
                    &vb[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::from_parts(shape, out), Op::MatMul(a, b), rg))
    }

    /// Swap two axes.
    pub fn transpose(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let n = self.shape(x).len();
        if d0 >= n || d1 >= n {
            return Err(Error::Shape(format!(
                "transpose: axes ({d0}, {d1}) out of range for rank {n}"
            )));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(d0, d1);
        self.permute(x, &axes)
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!("permute: bad axes {axes:?} for shape {shape:?}")));
        }
        let out = kernels::permute(self.value(x).data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Array::from_parts(out_shape, out),
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    // ---- normalization ----

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax: axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out = self.value(x).data().to_vec();
        kernels::softmax_inplace(&mut out, outer, n, inner, false);
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::Softmax(x, axis), rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("log_softmax: axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out = self.value(x).data().to_vec();
        kernels::softmax_inplace(&mut out, outer, n, inner, true);
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::LogSoftmax(x, axis), rg))
    }

    /// Normalize over the last axis to zero mean and unit (biased) variance.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layer_norm: scalar input".into()))?;
        let rows = if d == 0 { 0 } else { self.value(x).len() / d };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let dn = T::from_f64(d as f64);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / dn;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::LayerNorm { x, inv_std }, rg))
    }

    /// Inverted dropout. Identity when `!train` or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !train || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Usage(format!("dropout rate {p} must be < 1")));
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let scale: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let v = Array::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(x);
        Ok(self.push(v, Op::Dropout { x, scale }, rg))
    }

    // ---- indexing ----

    /// Rows of a `[V, d]` table: output `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape(format!("embedding: table must be 2-D, got {shape:?}")));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Shape(format!("embedding: id {bad} >= table rows {v}")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Array::from_parts(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat: axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &n)| d != axis && n != first[d])
            {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Array::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::Shape(format!(
                "slice: {start}..{end} on axis {axis} of shape {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = o * n * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = w;
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(out_shape, out), Op::Slice { x, axis, start }, rg))
    }

    /// Replace entries where `mask` is true by `value`; those entries get zero gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: T) -> Result<Var> {
        let src = self.value(x);
        if mask.len() != src.len() {
            return Err(Error::Shape(format!(
                "masked_fill: mask has {} entries for shape {:?}",
                mask.len(),
                src.shape()
            )));
        }
        let data = src
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let v = Array::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(x);
        Ok(self.push(
            v,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// 1-D array of the entries at the given flat indices.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::Shape(format!("gather: index {bad} >= {}", src.len())));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Array::from_parts(vec![indices.len()], data),
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    // ---- reductions ----

    /// Sum over `axis`, keeping it as size 1 when `keepdim`.
    pub fn sum(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("sum: axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        let mut out_shape = shape;
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let rg = self.rg(x);
        let node = self.push(Array::from_parts(out_shape, out), Op::Sum { x, axis }, rg);
        Ok(node)
    }

    pub fn mean(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("mean: axis {axis} out of range")))?;
        let s = self.sum(x, axis, keepdim)?;
        Ok(self.scale(s, T::one() / T::from_f64(n as f64)))
    }

    /// Scalar sum of every entry.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        let rg = self.rg(x);
        self.push(Array::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    // ---- backward ----

    /// Clear gradients so `backward` may run again on this graph.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last `backward` with respect to `v`, if it received one.
    pub fn grad(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; call zero_grad() first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Array::ones(self.shape(loss).to_vec()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g) {
                    *e = *e + x;
                }
            }
            slot @ None => {
                *slot = Some(Array::from_parts(self.nodes[v.0].value.shape().to_vec(), g));
            }
        }
    }

    /// Sum a gradient of broadcast shape `out` back to the operand's shape.
    fn unbroadcast(&self, v: Var, out: &[usize], g: &[T]) -> Vec<T> {
        let s = self.shape(v);
        if s == out {
            return g.to_vec();
        }
        let map = broadcast_index_map(s, out);
        let mut r = vec![T::zero(); self.value(v).len()];
        for (&j, &x) in map.iter().zip(g) {
            r[j] = r[j] + x;
        }
        r
    }

    fn operand_expanded(&self, v: Var, out: &[usize]) -> Vec<T> {
        let s = self.shape(v);
        let d = self.value(v).data();
        if s == out {
            return d.to_vec();
        }
        broadcast_index_map(s, out).into_iter().map(|j| d[j]).collect()
    }

    fn propagate(&mut self, i: usize, g: &Array<T>) {
        let out_shape = g.shape().to_vec();
        let gd = g.data();
        // Take the op out to appease the borrow checker; restored at the end.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.unbroadcast(*a, &out_shape, gd);
                let gb = self.unbroadcast(*b, &out_shape, gd);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Sub(a, b) => {
                let ga = self.unbroadcast(*a, &out_shape, gd);
                let neg: Vec<T> = gd.iter().map(|&x| -x).collect();
                let gb = self.unbroadcast(*b, &out_shape, &neg);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let vb = self.operand_expanded(*b, &out_shape);
                    let t: Vec<T> = gd.iter().zip(&vb).map(|(&x, &y)| x * y).collect();
                    let ga = self.unbroadcast(*a, &out_shape, &t);
                    self.accumulate(*a, ga);
                }
                if self.rg(*b) {
                    let va = self.operand_expanded(*a, &out_shape);
                    let t: Vec<T> = gd.iter().zip(&va).map(|(&x, &y)| x * y).collect();
                    let gb = self.unbroadcast(*b, &out_shape, &t);
                    self.accumulate(*b, gb);
                }
            }
            Op::Div(a, b) => {
                let vb = self.operand_expanded(*b, &out_shape);
                if self.rg(*a) {
                    let t: Vec<T> = gd.iter().zip(&vb).map(|(&x, &y)| x / y).collect();
                    let ga = self.unbroadcast(*a, &out_shape, &t);
                    self.accumulate(*a, ga);
                }
                if self.rg(*b) {
                    let y = self.nodes[i].value.data();
                    let t: Vec<T> = gd
                        .iter()
                        .zip(y)
                        .zip(&vb)
                        .map(|((&x, &q), &d)| -x * q / d)
                        .collect();
                    let gb = self.unbroadcast(*b, &out_shape, &t);
                    self.accumulate(*b, gb);
                }
            }
            Op::Affine(x, s) => {
                let t = gd.iter().map(|&v| v * *s).collect();
                self.accumulate(*x, t);
            }
            Op::Exp(x) => {
                let y = self.nodes[i].value.data();
                let t = gd.iter().zip(y).map(|(&a, &b)| a * b).collect();
                self.accumulate(*x, t);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let t = gd.iter().zip(xv).map(|(&a, &b)| a / b).collect();
                self.accumulate(*x, t);
            }
            Op::Sqrt(x) => {
                let y = self.nodes[i].value.data();
                let half = T::from_f64(0.5);
                let t = gd
                    .iter()
                    .zip(y)
                    .map(|(&a, &b)| if b > T::zero() { a * half / b } else { T::zero() })
                    .collect();
                self.accumulate(*x, t);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let t = gd
                    .iter()
                    .zip(xv)
                    .map(|(&a, &b)| if b > T::zero() { a } else { T::zero() })
                    .collect();
                self.accumulate(*x, t);
            }
            Op::ClampMin(x, floor) => {
                let xv = self.value(*x).data();
                let t = gd
                    .iter()
                    .zip(xv)
                    .map(|(&a, &b)| if b > *floor { a } else { T::zero() })
                    .collect();
                self.accumulate(*x, t);
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, gd),
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = split_axis(&out_shape, *axis);
                let y = self.nodes[i].value.data();
                let mut t = vec![T::zero(); gd.len()];
                for o in 0..outer {
                    for c in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + c;
                        let dot = (0..n).fold(T::zero(), |s, j| s + gd[idx(j)] * y[idx(j)]);
                        for j in 0..n {
                            t[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(*x, t);
            }
            Op::LogSoftmax(x, axis) => {
                let (outer, n, inner) = split_axis(&out_shape, *axis);
                let y = self.nodes[i].value.data();
                let mut t = vec![T::zero(); gd.len()];
                for o in 0..outer {
                    for c in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + c;
                        let total = (0..n).fold(T::zero(), |s, j| s + gd[idx(j)]);
                        for j in 0..n {
                            t[idx(j)] = gd[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
                self.accumulate(*x, t);
            }
            Op::LayerNorm { x, inv_std } => {
                let d = *out_shape.last().unwrap();
                let y = self.nodes[i].value.data();
                let dn = T::from_f64(d as f64);
                let mut t = vec![T::zero(); gd.len()];
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &gd[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let sg = gr.iter().fold(T::zero(), |s, &v| s + v);
                    let sgy = gr.iter().zip(yr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for j in 0..d {
                        t[r * d + j] = is / dn * (dn * gr[j] - sg - yr[j] * sgy);
                    }
                }
                self.accumulate(*x, t);
            }
            Op::Dropout { x, scale } => {
                let t = gd.iter().zip(scale).map(|(&a, &s)| a * s).collect();
                self.accumulate(*x, t);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut t = vec![T::zero(); self.value(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        t[id * d + j] = t[id * d + j] + gd[r * d + j];
                    }
                }
                self.accumulate(*table, t);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    let mut t = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        t.extend_from_slice(&gd[base..base + n * inner]);
                    }
                    offset += n;
                    self.accumulate(v, t);
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&in_shape, *axis);
                let w = out_shape[*axis];
                let mut t = vec![T::zero(); self.value(*x).len()];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    t[dst..dst + w * inner].copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
                }
                self.accumulate(*x, t);
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (o, &a) in axes.iter().enumerate() {
                    inverse[a] = o;
                }
                let t = kernels::permute(gd, &out_shape, &inverse);
                self.accumulate(*x, t);
            }
            Op::Reshape(x) => self.accumulate(*x, gd.to_vec()),
            Op::Sum { x, axis } => {
                let in_shape = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&in_shape, *axis);
                let mut t = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let dst = (o * n + j) * inner;
                        t[dst..dst + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(*x, t);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(*x, vec![gd[0]; n]);
            }
            Op::MaskedFill { x, mask } => {
                let t = gd
                    .iter()
                    .zip(mask)
                    .map(|(&a, &m)| if m { T::zero() } else { a })
                    .collect();
                self.accumulate(*x, t);
            }
            Op::Gather { x, indices } => {
                let mut t = vec![T::zero(); self.value(*x).len()];
                for (&j, &a) in indices.iter().zip(gd) {
                    t[j] = t[j] + a;
                }
                self.accumulate(*x, t);
            }
        }
        self.nodes[i].op = op;
    }

    fn matmul_backward(&mut self, a: Var, b: Var, gd: &[T]) {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared_rhs = sb.len() == 2;
        if self.rg(a) {
            let vb = self.value(b).data();
            let mut ga = vec![T::zero(); batch * m * k];
            if shared_rhs {
                kernels::gemm_nt(gd, vb, &mut ga, batch * m, n, k);
            } else {
                for bi in 0..batch {
                    kernels::gemm_nt(
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &vb[bi * k * n..(bi + 1) * k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            self.accumulate(a, ga);
        }
        if self.rg(b) {
            let va = self.value(a).data();
            let mut gb = vec![T::zero(); self.value(b).len()];
            if shared_rhs {
                kernels::gemm_tn(va, gd, &mut gb, batch * m, k, n);
            } else {
                for bi in 0..batch {
                    kernels::gemm_tn(
                        &va[bi * m * k..(bi + 1) * m * k],
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
            self.accumulate(b, gb);
        }
    }
}
