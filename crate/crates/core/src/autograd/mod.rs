//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op appends one node holding its forward value and whatever it needs
//! for the backward pass. Inputs always precede their consumers, so append
//! order is a topological order and [`Tape::backward`] simply walks the nodes
//! in reverse, summing contributions into each input's gradient.
//!
//! Broadcasting: binary ops take the left operand's shape. The right operand
//! must have the same rank with every extent either equal or 1; its gradient
//! is the upstream gradient summed over the expanded axes.
//!
//! All kernels are single-threaded with fixed reduction order, so results are
//! bitwise reproducible.

pub mod gradcheck;
pub mod kernels;

use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, numel, Scalar, Tensor};
pub use kernels::ConvGeom;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: T,
    },
    AddScalar {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        axes: Vec<usize>,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Upsample2x {
        a: Var,
    },
    MaxPool2x2 {
        a: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    SumTrailing {
        a: Var,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Upsample2x { .. } => "upsample2x",
            Op::MaxPool2x2 { .. } => "maxpool2x2",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::SumTrailing { .. } => "sum",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    scope: usize,
}

/// Result of a batch-norm forward in training mode: the batch mean and the
/// unbiased batch variance, for updating running statistics.
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

/// The computation record.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
    scopes: Vec<String>,
    current_scope: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            scopes: vec![String::new()],
            current_scope: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node and gradient so the tape can record a new pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
        self.scopes.truncate(1);
        self.current_scope = 0;
    }

    /// Label subsequent nodes; used to name the offending layer when a
    /// forward pass produces non-finite values. Returns the previous label.
    pub fn set_scope(&mut self, name: &str) -> String {
        let prev = self.scopes[self.current_scope].clone();
        self.current_scope = match self.scopes.iter().position(|s| s == name) {
            Some(i) => i,
            None => {
                self.scopes.push(name.to_string());
                self.scopes.len() - 1
            }
        };
        prev
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            scope: self.current_scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated into `v` by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// First node (in record order) whose value contains NaN or ±inf, as
    /// `(scope label, op name)`.
    pub fn first_non_finite(&self) -> Option<(String, &'static str)> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| (self.scopes[n.scope].clone(), n.op.name()))
    }

    // ---- ops -------------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// `x[..., K] · w[K, M] + b[M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let k = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != k || b.is_some_and(|b| self.shape(b) != [ws[1]]) {
            return Err(Error::shape(
                "linear",
                format!("weight [{k},M] and bias [M]"),
                format!("x {} w {}", fmt_shape(xs), fmt_shape(ws)),
            ));
        }
        let m = ws[1];
        let rows = self.value(x).numel() / k;
        let mut out = vec![T::zero(); rows * m];
        T::gemm(rows, k, m, self.value(x).data(), k as isize, 1, self.value(w).data(), m as isize, 1, &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.iter_mut().zip(bias).for_each(|(o, &bv)| *o += bv);
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::matmul_forward(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::MatMul { a, b }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        kernels::check_broadcast(name, self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); av.numel()];
        kernels::for_each_broadcast(av.shape(), bv.shape(), |i, j| out[i] = f(av.data()[i], bv.data()[j]));
        Ok(Tensor::from_parts(av.shape().to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Mul { a, b }, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "div", |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Div { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let y = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(y, Op::Scale { a, s }, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let y = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(y, Op::AddScalar { a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN passes through so non-finite values stay visible downstream
        let y = self.value(a).map(|v| if v < T::zero() { T::zero() } else { v });
        let rg = self.rg(a);
        self.push(y, Op::Relu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(y, Op::Sigmoid { a }, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() == 0 {
            return Err(Error::shape("softmax", "rank >= 1", "scalar"));
        }
        let y = kernels::softmax_last_forward(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(y, Op::Softmax { a }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(y, Op::Reshape { a }, rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.value(a).rank();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank && axes.iter().all(|&ax| ax < rank && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(Error::shape("permute", format!("a permutation of 0..{rank}"), format!("{axes:?}")));
        }
        let y = kernels::permute_forward(self.value(a), axes);
        let rg = self.rg(a);
        Ok(self.push(y, Op::Permute { a, axes: axes.to_vec() }, rg))
    }

    /// Swap two axes.
    pub fn transpose(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let rank = self.value(a).rank();
        if i >= rank || j >= rank {
            return Err(Error::shape("transpose", format!("axes < {rank}"), format!("({i},{j})")));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(i, j);
        self.permute(a, &axes)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a);
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range within axis {axis} of {}", fmt_shape(shape)),
                format!("{start}..{}", start + len),
            ));
        }
        let y = kernels::slice_forward(self.value(a), axis, start, len);
        let rg = self.rg(a);
        Ok(self.push(y, Op::Slice { a, axis, start }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?).to_vec();
        for &p in parts {
            let s = self.shape(p);
            let ok = axis < first.len()
                && s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("shapes matching {} off axis {axis}", fmt_shape(&first)),
                    fmt_shape(s),
                ));
            }
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = kernels::concat_forward(&values, axis);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(y, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Split `axis` into `parts` equal pieces.
    pub fn split(&mut self, a: Var, axis: usize, parts: usize) -> Result<Vec<Var>> {
        let shape = self.shape(a);
        if axis >= shape.len() || parts == 0 || shape[axis] % parts != 0 {
            return Err(Error::shape(
                "split",
                format!("axis {axis} divisible by {parts}"),
                fmt_shape(shape),
            ));
        }
        let len = shape[axis] / parts;
        (0..parts).map(|i| self.slice(a, axis, i * len, len)).collect()
    }

    /// Nearest-neighbour ×2 upsampling of the two trailing axes of `[N,C,H,W]`.
    pub fn upsample_nearest2x(&mut self, a: Var) -> Result<Var> {
        require_rank4("upsample_nearest2x", self.shape(a))?;
        let y = kernels::upsample2x_forward(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(y, Op::Upsample2x { a }, rg))
    }

    pub fn max_pool2x2(&mut self, a: Var) -> Result<Var> {
        let s = require_rank4("max_pool2x2", self.shape(a))?;
        if s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("max_pool2x2", "H, W >= 2", fmt_shape(&s)));
        }
        let (y, argmax) = kernels::maxpool2x2_forward(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(y, Op::MaxPool2x2 { a, argmax }, rg))
    }

    /// Per-channel batch normalization of `[N,C,H,W]`.
    ///
    /// With `running = None` the batch's own statistics are used and returned
    /// as [`BatchMoments`]; otherwise the given `(mean, var)` are treated as
    /// constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let s = require_rank4("batchnorm2d", self.shape(x))?;
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batchnorm2d",
                format!("scale/shift [{c}]"),
                format!("{} / {}", fmt_shape(self.shape(gamma)), fmt_shape(self.shape(beta))),
            ));
        }
        let eps = T::of(eps);
        let (mean, var, moments) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::shape("batchnorm2d running stats", c, m.len()));
                }
                (m.to_vec(), v.to_vec(), None)
            }
            None => {
                let (m, v) = kernels::channel_stats(self.value(x));
                let count = (s[0] * s[2] * s[3]) as f64;
                let corr = T::of(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
                let unbiased = v.iter().map(|&vv| vv * corr).collect();
                let moments = BatchMoments {
                    mean: m.clone(),
                    var_unbiased: unbiased,
                };
                (m, v, Some(moments))
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let hw = s[2] * s[3];
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut y = vec![T::zero(); xv.numel()];
        for n in 0..s[0] {
            for ch in 0..c {
                let off = (n * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    y[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::from_parts(s.clone(), y),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: Tensor::from_parts(s, xhat),
                inv_std,
                batch_stats: running.is_none(),
            },
            rg,
        );
        Ok((v, moments))
    }

    /// Sum over the trailing `k` axes; the result keeps the leading axes
    /// (`k == rank` yields a rank-0 scalar).
    pub fn sum_trailing(&mut self, a: Var, k: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if k > shape.len() {
            return Err(Error::shape("sum", format!("at most {} axes", shape.len()), k));
        }
        let keep = shape[..shape.len() - k].to_vec();
        let inner = numel(&shape[shape.len() - k..]);
        let out: Vec<T> = self
            .value(a)
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(keep, out), Op::SumTrailing { a }, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let k = self.value(a).rank();
        self.sum_trailing(a, k).expect("k == rank")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    // ---- backward --------------------------------------------------------

    /// Backpropagate from a one-element `loss`, accumulating (summing)
    /// gradients into every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage(
                "backward called twice on the same record; reset and re-run the forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {}",
                fmt_shape(self.shape(loss))
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let contributions = self.node_backward(i, &gy);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn node_backward(&self, i: usize, gy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (rg(*x), rg(*w), b.is_some_and(|b| rg(b)));
                let (dx, dw, db) = kernels::conv2d_backward(val(*x), val(*w), b.is_some(), geom, gy, need);
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((*b, db));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (k, m) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.numel() / k;
                if rg(*x) {
                    let mut dx = vec![T::zero(); xv.numel()];
                    T::gemm(rows, m, k, gy.data(), m as isize, 1, wv.data(), 1, m as isize, &mut dx, false);
                    out.push((*x, Tensor::from_parts(xv.shape().to_vec(), dx)));
                }
                if rg(*w) {
                    let mut dw = vec![T::zero(); wv.numel()];
                    T::gemm(k, rows, m, xv.data(), 1, k as isize, gy.data(), m as isize, 1, &mut dw, false);
                    out.push((*w, Tensor::from_parts(wv.shape().to_vec(), dw)));
                }
                if let Some(b) = b.filter(|&b| rg(b)) {
                    let mut db = vec![T::zero(); m];
                    for row in gy.data().chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    out.push((b, Tensor::from_parts(vec![m], db)));
                }
            }
            Op::MatMul { a, b } => {
                let (da, db) = kernels::matmul_backward(val(*a), val(*b), gy, (rg(*a), rg(*b)));
                out.extend(da.map(|g| (*a, g)));
                out.extend(db.map(|g| (*b, g)));
            }
            Op::Add { a, b } => {
                if rg(*a) {
                    out.push((*a, gy.clone()));
                }
                if rg(*b) {
                    out.push((*b, reduce_broadcast(gy, val(*b).shape(), |g, _| g)));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if rg(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    kernels::for_each_broadcast(av.shape(), bv.shape(), |i, j| da[i] = gy.data()[i] * bv.data()[j]);
                    out.push((*a, Tensor::from_parts(av.shape().to_vec(), da)));
                }
                if rg(*b) {
                    out.push((*b, reduce_broadcast(gy, bv.shape(), |g, i| g * av.data()[i])));
                }
            }
            Op::Div { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if rg(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    kernels::for_each_broadcast(av.shape(), bv.shape(), |i, j| da[i] = gy.data()[i] / bv.data()[j]);
                    out.push((*a, Tensor::from_parts(av.shape().to_vec(), da)));
                }
                if rg(*b) {
                    // d(a/b)/db = −a/b² = −y/b
                    let mut db = vec![T::zero(); bv.numel()];
                    kernels::for_each_broadcast(av.shape(), bv.shape(), |i, j| {
                        db[j] -= gy.data()[i] * node.value.data()[i] / bv.data()[j];
                    });
                    out.push((*b, Tensor::from_parts(bv.shape().to_vec(), db)));
                }
            }
            Op::Scale { a, s } => out.push((*a, gy.map(|g| g * *s))),
            Op::AddScalar { a } => out.push((*a, gy.clone())),
            Op::Relu { a } => {
                let d = gy
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*a, Tensor::from_parts(gy.shape().to_vec(), d)));
            }
            Op::Sigmoid { a } => {
                let d = gy
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                out.push((*a, Tensor::from_parts(gy.shape().to_vec(), d)));
            }
            Op::Softmax { a } => {
                let d = *gy.shape().last().unwrap();
                let mut dx = vec![T::zero(); gy.numel()];
                for ((dxr, gr), yr) in dx.chunks_mut(d).zip(gy.data().chunks(d)).zip(node.value.data().chunks(d)) {
                    let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for ((o, &g), &y) in dxr.iter_mut().zip(gr).zip(yr) {
                        *o = y * (g - dot);
                    }
                }
                out.push((*a, Tensor::from_parts(gy.shape().to_vec(), dx)));
            }
            Op::Reshape { a } => {
                out.push((*a, Tensor::from_parts(val(*a).shape().to_vec(), gy.data().to_vec())));
            }
            Op::Permute { a, axes } => {
                out.push((*a, kernels::permute_forward(gy, &kernels::inverse_permutation(axes))));
            }
            Op::Slice { a, axis, start } => {
                let src = val(*a).shape();
                let (outer, ext, inner) = kernels::split_around(src, *axis);
                let len = gy.shape()[*axis];
                let mut dx = vec![T::zero(); numel(src)];
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&gy.data()[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*a, Tensor::from_parts(src.to_vec(), dx)));
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if rg(p) {
                        out.push((p, kernels::slice_forward(gy, *axis, start, len)));
                    }
                    start += len;
                }
            }
            Op::Upsample2x { a } => out.push((*a, kernels::upsample2x_backward(gy, val(*a).shape()))),
            Op::MaxPool2x2 { a, argmax } => {
                let mut dx = vec![T::zero(); val(*a).numel()];
                for (&src, &g) in argmax.iter().zip(gy.data()) {
                    dx[src] += g;
                }
                out.push((*a, Tensor::from_parts(val(*a).shape().to_vec(), dx)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = gy.shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            sum_g[ch] += gy.data()[i];
                            sum_gx[ch] += gy.data()[i] * xhat.data()[i];
                        }
                    }
                }
                if rg(*gamma) {
                    out.push((*gamma, Tensor::from_parts(vec![c], sum_gx.clone())));
                }
                if rg(*beta) {
                    out.push((*beta, Tensor::from_parts(vec![c], sum_g.clone())));
                }
                if rg(*x) {
                    let g = val(*gamma).data();
                    let m = T::of((n * hw) as f64);
                    let mut dx = vec![T::zero(); gy.numel()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let k = g[ch] * inv_std[ch];
                            for i in off..off + hw {
                                dx[i] = if *batch_stats {
                                    k / m * (m * gy.data()[i] - sum_g[ch] - xhat.data()[i] * sum_gx[ch])
                                } else {
                                    k * gy.data()[i]
                                };
                            }
                        }
                    }
                    out.push((*x, Tensor::from_parts(s.to_vec(), dx)));
                }
            }
            Op::SumTrailing { a } => {
                let src = val(*a).shape();
                let inner = numel(src) / gy.numel();
                let dx = gy
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g, inner))
                    .collect();
                out.push((*a, Tensor::from_parts(src.to_vec(), dx)));
            }
        }
        out
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn require_rank4(op: &'static str, s: &[usize]) -> Result<Vec<usize>> {
    if s.len() == 4 {
        Ok(s.to_vec())
    } else {
        Err(Error::shape(op, "[N,C,H,W]", fmt_shape(s)))
    }
}

/// Sum `f(grad[i], i)` over the broadcast axes into a tensor of `rhs` shape.
fn reduce_broadcast<T: Scalar>(gy: &Tensor<T>, rhs: &[usize], f: impl Fn(T, usize) -> T) -> Tensor<T> {
    let mut acc = vec![T::zero(); numel(rhs)];
    kernels::for_each_broadcast(gy.shape(), rhs, |i, j| acc[j] += f(gy.data()[i], i));
    Tensor::from_parts(rhs.to_vec(), acc)
}
