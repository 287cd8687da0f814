use std::borrow::Cow;
use std::f64::consts::PI;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
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
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Softmax {
        x: Var,
        temperature: f64,
    },
    LogSoftmax {
        x: Var,
        temperature: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Softplus(Var),
    Mse(Var, Var),
    MaskedMse {
        a: Var,
        b: Var,
        mask: Vec<bool>,
        count: usize,
    },
    CrossEntropy {
        target: Var,
        logp: Var,
    },
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    MeanRows(Var),
    Sum(Var),
    WindowedAttention {
        q: Var,
        k: Var,
        v: Var,
        half: usize,
        scale: f64,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already a topological order; `backward` walks it in reverse.
///
/// Leaves created with [`Graph::param`] or [`Graph::param_ref`] collect
/// gradients. Repeated `backward` calls add to those gradients until
/// [`Graph::zero_grad`].
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    leaf_grads: Vec<Option<Tensor>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.044_715;
    let s = (2.0 / PI).sqrt();
    let u = s * (x + C * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * C * x * x);
    (y, dy)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires)
    }

    /// Trainable leaf owning its value.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Trainable leaf borrowing its value.
    pub fn param_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    /// Takes the accumulated gradient out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.leaf_grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Copy of `x` that is cut off from the tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        Ok(self.derived(Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    fn check_expand(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip_expand(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let nb = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % nb]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    /// `a + b`, where `b`'s shape must equal a trailing part of `a`'s shape
    /// (it is repeated over the leading dimensions).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_expand("add", a, b)?;
        let t = self.zip_expand(a, b, |x, y| x + y);
        Ok(self.derived(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_expand("sub", a, b)?;
        let t = self.zip_expand(a, b, |x, y| x - y);
        Ok(self.derived(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product with the same expansion rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_expand("mul", a, b)?;
        let t = self.zip_expand(a, b, |x, y| x * y);
        Ok(self.derived(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v * c);
        self.derived(t, Op::Scale(x, c), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        Ok(self.derived(Tensor::matrix(c, r, out), Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::Shape {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let t = t.reshaped(shape)?;
        Ok(self.derived(t, Op::Reshape(x), &[x]))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                left: shape.to_vec(),
                right: vec![axis, start, end],
            });
        }
        let (outer, inner) = outer_inner(shape, axis);
        let dim = shape[axis];
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            out.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = width;
        let t = Tensor::new(new_shape, out)?;
        Ok(self.derived(t, Op::Slice { x, axis, start }, &[x]))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base_shape = self.shape(*first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::Shape {
                op: "concat",
                left: base_shape,
                right: vec![axis],
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", self.value(*first), self.value(x)));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let d = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.derived(
            t,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// Softmax of `x / temperature` along the last axis.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v / temperature - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.derived(t, Op::Softmax { x, temperature }, &[x])
    }

    /// Log-softmax of `x / temperature` along the last axis.
    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
            let lse = m + row
                .iter()
                .map(|&v| (v / temperature - m).exp())
                .sum::<f64>()
                .ln();
            row.iter_mut().for_each(|v| *v = *v / temperature - lse);
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.derived(t, Op::LogSoftmax { x, temperature }, &[x])
    }

    /// Layer normalization over the last axis with optional affine
    /// parameters of that axis' size.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(shape_err("layer_norm", t, self.value(p)));
            }
        }
        let rows = t.numel() / d.max(1);
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in t.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (j, v) in row.iter().enumerate() {
                xhat[r * d + j] = (v - mean) * is;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gamma {
            let g = self.value(g).data();
            out.iter_mut().enumerate().for_each(|(i, v)| *v *= g[i % d]);
        }
        if let Some(b) = beta {
            let b = self.value(b).data();
            out.iter_mut().enumerate().for_each(|(i, v)| *v += b[i % d]);
        }
        let shape = t.shape().to_vec();
        let inputs: Vec<Var> = [Some(x), gamma, beta].into_iter().flatten().collect();
        Ok(self.derived(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &inputs,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| gelu_parts(v).0);
        self.derived(t, Op::Gelu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.derived(t, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::ln);
        self.derived(t, Op::Log(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.derived(t, Op::Tanh(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.map(x, softplus);
        self.derived(t, Op::Softplus(x), &[x])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mse", ta, tb));
        }
        let n = ta.numel().max(1) as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        Ok(self.derived(Tensor::scalar(s / n), Op::Mse(a, b), &[a, b]))
    }

    /// Mean squared difference over the elements where `mask` is true; 0
    /// when nothing is selected.
    pub fn masked_mse(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || mask.len() != ta.numel() {
            return Err(shape_err("masked_mse", ta, tb));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((x, y), _)| (x - y).powi(2))
            .sum();
        let v = if count > 0 { s / count as f64 } else { 0.0 };
        Ok(self.derived(
            Tensor::scalar(v),
            Op::MaskedMse {
                a,
                b,
                mask: mask.to_vec(),
                count,
            },
            &[a, b],
        ))
    }

    /// `-sum(target * logp)` over the last axis, averaged over the leading
    /// rows.
    pub fn cross_entropy(&mut self, target: Var, logp: Var) -> Result<Var> {
        let (tt, tl) = (self.value(target), self.value(logp));
        if tt.shape() != tl.shape() {
            return Err(shape_err("cross_entropy", tt, tl));
        }
        let rows = (tt.numel() / tt.last_dim().max(1)).max(1) as f64;
        let s: f64 = tt.data().iter().zip(tl.data()).map(|(p, l)| -p * l).sum();
        Ok(self.derived(
            Tensor::scalar(s / rows),
            Op::CrossEntropy { target, logp },
            &[target, logp],
        ))
    }

    /// Replaces the elements where `mask` is true by `value`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::Shape {
                op: "masked_fill",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = t
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.derived(
            t,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            &[x],
        ))
    }

    /// Mean over the first axis of a 2-D tensor.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || t.shape()[0] == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; c];
        for row in t.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.derived(Tensor::vector(out), Op::MeanRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Banded attention `softmax(scale * q k^T) v` where row `i` only sees
    /// keys `j` with `|i - j| <= half`. Costs O(n * (2 half + 1) * d).
    pub fn windowed_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        half: usize,
        scale: f64,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape().len() != 2 || tq.shape() != tk.shape() {
            return Err(shape_err("windowed_attention", tq, tk));
        }
        if tv.shape().len() != 2 || tv.shape()[0] != tq.shape()[0] {
            return Err(shape_err("windowed_attention", tq, tv));
        }
        let (n, d) = (tq.shape()[0], tq.shape()[1]);
        let dv = tv.shape()[1];
        let half = half.min(n.saturating_sub(1));
        let band = 2 * half + 1;
        let mut probs = vec![0.0; n * band];
        let mut out = vec![0.0; n * dv];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let row = &mut probs[i * band..(i + 1) * band];
            let qi = &qd[i * d..(i + 1) * d];
            let mut m = f64::NEG_INFINITY;
            for j in lo..=hi {
                let kj = &kd[j * d..(j + 1) * d];
                let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                row[j + half - i] = s;
                m = m.max(s);
            }
            let mut z = 0.0;
            for j in lo..=hi {
                let e = (row[j + half - i] - m).exp();
                row[j + half - i] = e;
                z += e;
            }
            let oi = &mut out[i * dv..(i + 1) * dv];
            for j in lo..=hi {
                let p = row[j + half - i] / z;
                row[j + half - i] = p;
                let vj = &vd[j * dv..(j + 1) * dv];
                oi.iter_mut().zip(vj).for_each(|(o, x)| *o += p * x);
            }
        }
        Ok(self.derived(
            Tensor::matrix(n, dv, out),
            Op::WindowedAttention {
                q,
                k,
                v,
                half,
                scale,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Back-propagates from a one-element `root`, adding into the gradients
    /// of every trainable leaf that it depends on.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rt = self.value(root);
        if rt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rt.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::new(shape, g).expect("gradient shape")),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, 0.0, &mut da);
                    add_into(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, 0.0, &mut db);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    let nb = self.value(*b).numel();
                    let mut db = vec![0.0; nb];
                    g.iter()
                        .enumerate()
                        .for_each(|(j, x)| db[j % nb] += sign * x);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let nb = tb.numel();
                if self.wants(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(j, x)| x * tb.data()[j % nb])
                        .collect();
                    add_into(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; nb];
                    g.iter()
                        .zip(ta.data())
                        .enumerate()
                        .for_each(|(j, (x, y))| db[j % nb] += x * y);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[0], s[1]);
                let mut dx = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        dx[b * r + a] = g[a * c + b];
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::Slice { x, axis, start } => {
                let src = self.value(*x).shape();
                let (outer, inner) = outer_inner(src, *axis);
                let dim = src[*axis];
                let width = node.value.shape()[*axis];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    let from = o * width * inner;
                    dx[dst..dst + width * inner].copy_from_slice(&g[from..from + width * inner]);
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let total = shape[*axis];
                let mut offset = 0;
                for x in xs {
                    let d = self.value(*x).shape()[*axis];
                    if self.wants(*x) {
                        let mut dx = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            dx.extend_from_slice(&g[s..s + d * inner]);
                        }
                        add_into(&mut grads[x.0], &dx);
                    }
                    offset += d;
                }
            }
            Op::Softmax { x, temperature } => {
                let d = node.value.last_dim();
                let mut dx = vec![0.0; g.len()];
                for ((y, gy), dxr) in out.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dxr[j] = y[j] * (gy[j] - dot) / temperature;
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::LogSoftmax { x, temperature } => {
                let d = node.value.last_dim();
                let mut dx = vec![0.0; g.len()];
                for ((y, gy), dxr) in out.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                    let total: f64 = gy.iter().sum();
                    for j in 0..d {
                        dxr[j] = (gy[j] - y[j].exp() * total) / temperature;
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gam = gamma.map(|p| self.value(p).data());
                if self.wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, is) in inv_std.iter().enumerate() {
                        let gy = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = match gam {
                            Some(gm) => gy.iter().zip(gm).map(|(a, b)| a * b).collect(),
                            None => gy.to_vec(),
                        };
                        let m1 = dxh.iter().sum::<f64>() / d as f64;
                        let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = is * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                if let Some(p) = gamma.filter(|p| self.wants(*p)) {
                    let mut dg = vec![0.0; d];
                    g.iter()
                        .zip(xhat)
                        .enumerate()
                        .for_each(|(j, (a, b))| dg[j % d] += a * b);
                    add_into(&mut grads[p.0], &dg);
                }
                if let Some(p) = beta.filter(|p| self.wants(*p)) {
                    let mut db = vec![0.0; d];
                    g.iter().enumerate().for_each(|(j, a)| db[j % d] += a);
                    add_into(&mut grads[p.0], &db);
                }
            }
            Op::Gelu(x) => {
                let xs = self.value(*x).data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xs)
                    .map(|(a, &v)| a * gelu_parts(v).1)
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Exp(x) => {
                let dx: Vec<f64> = g.iter().zip(out).map(|(a, y)| a * y).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Log(x) => {
                let xs = self.value(*x).data();
                let dx: Vec<f64> = g.iter().zip(xs).map(|(a, v)| a / v).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = g.iter().zip(out).map(|(a, y)| a * (1.0 - y * y)).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Softplus(x) => {
                let xs = self.value(*x).data();
                let dx: Vec<f64> = g.iter().zip(xs).map(|(a, &v)| a * sigmoid(v)).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = 2.0 * g[0] / ta.numel().max(1) as f64;
                let diff: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| c * (x - y))
                    .collect();
                if self.wants(*a) {
                    add_into(&mut grads[a.0], &diff);
                }
                if self.wants(*b) {
                    let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::MaskedMse { a, b, mask, count } => {
                if *count == 0 {
                    return;
                }
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = 2.0 * g[0] / *count as f64;
                let diff: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .zip(mask)
                    .map(|((x, y), &m)| if m { c * (x - y) } else { 0.0 })
                    .collect();
                if self.wants(*a) {
                    add_into(&mut grads[a.0], &diff);
                }
                if self.wants(*b) {
                    let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::CrossEntropy { target, logp } => {
                let (tt, tl) = (self.value(*target), self.value(*logp));
                let rows = (tt.numel() / tt.last_dim().max(1)).max(1) as f64;
                let c = -g[0] / rows;
                if self.wants(*target) {
                    let d: Vec<f64> = tl.data().iter().map(|l| c * l).collect();
                    add_into(&mut grads[target.0], &d);
                }
                if self.wants(*logp) {
                    let d: Vec<f64> = tt.data().iter().map(|p| c * p).collect();
                    add_into(&mut grads[logp.0], &d);
                }
            }
            Op::MaskedFill { x, mask } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(mask)
                    .map(|(&a, &m)| if m { 0.0 } else { a })
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::MeanRows(x) => {
                let s = self.value(*x).shape();
                let (r, c) = (s[0], s[1]);
                let dx: Vec<f64> = (0..r * c).map(|j| g[j % c] / r as f64).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).numel()];
                add_into(&mut grads[x.0], &dx);
            }
            Op::WindowedAttention {
                q,
                k,
                v,
                half,
                scale,
                probs,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, d) = (tq.shape()[0], tq.shape()[1]);
                let dv = tv.shape()[1];
                let band = 2 * half + 1;
                let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
                let mut dq = vec![0.0; n * d];
                let mut dk = vec![0.0; n * d];
                let mut dvv = vec![0.0; n * dv];
                let mut dp = vec![0.0; band];
                for i in 0..n {
                    let lo = i.saturating_sub(*half);
                    let hi = (i + half).min(n - 1);
                    let row = &probs[i * band..(i + 1) * band];
                    let gi = &g[i * dv..(i + 1) * dv];
                    let mut dot = 0.0;
                    for j in lo..=hi {
                        let p = row[j + half - i];
                        let vj = &vd[j * dv..(j + 1) * dv];
                        let s: f64 = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dp[j + half - i] = s;
                        dot += p * s;
                        dvv[j * dv..(j + 1) * dv]
                            .iter_mut()
                            .zip(gi)
                            .for_each(|(o, a)| *o += p * a);
                    }
                    for j in lo..=hi {
                        let ds = scale * row[j + half - i] * (dp[j + half - i] - dot);
                        for c in 0..d {
                            dq[i * d + c] += ds * kd[j * d + c];
                            dk[j * d + c] += ds * qd[i * d + c];
                        }
                    }
                }
                if self.wants(*q) {
                    add_into(&mut grads[q.0], &dq);
                }
                if self.wants(*k) {
                    add_into(&mut grads[k.0], &dk);
                }
                if self.wants(*v) {
                    add_into(&mut grads[v.0], &dvv);
                }
            }
        }
    }
}
