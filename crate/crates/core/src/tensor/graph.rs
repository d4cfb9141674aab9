//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in creation order, so node inputs always
//! precede the node itself. Leaves are either trainable (`param`) or
//! constant; gradients are only propagated along paths that reach a
//! trainable leaf.
//!
//! Subgradient conventions: ReLU'(0) = 0, `clamp_min` passes no gradient at
//! the threshold, `abs'(0) = 0`, `sqrt'(0) = 0`, and max-pool / masked-max
//! route the gradient to the first maximal element in row-major order.

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        spatial: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    ClampMin(Var, T),
    SumLast {
        x: Var,
        len: usize,
    },
    SumAll(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    MaskedMax {
        x: Var,
        arg: Vec<usize>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-threaded recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
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

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// 2-D convolution over NCHW input with OIHW weights and zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            left: xs.clone(),
            right: ws.clone(),
        };
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride == 0 {
            return Err(mismatch());
        }
        let ho = kernels::conv_out_len(xs[2], ws[2], stride, pad).ok_or_else(mismatch)?;
        let wo = kernels::conv_out_len(xs[3], ws[3], stride, pad).ok_or_else(mismatch)?;
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: vec![ws[0]],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            ho,
            wo,
        };
        let keep = self.needs_grad(w);
        let (out, cols) = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
            keep,
        );
        let needs = self.needs_grad(x) || keep || b.is_some_and(|b| self.needs_grad(b));
        let value = Tensor::from_parts(vec![geom.n, geom.cout, ho, wo], out);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, needs))
    }

    /// Affine map `x W^T + b` for `x: [N, in]`, `W: [out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: xs,
                right: ws,
            });
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * dout];
        let mut beta = T::zero();
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::ShapeMismatch {
                    op: "dense bias",
                    left: vec![dout],
                    right: self.shape(b).to_vec(),
                });
            }
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
            beta = T::one();
        }
        T::gemm(
            n,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            din as isize,
            1,
            self.value(w).data(),
            1,
            din as isize,
            beta,
            &mut out,
            dout as isize,
            1,
        );
        let needs = self.needs_grad(x) || self.needs_grad(w) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(Tensor::from_parts(vec![n, dout], out), Op::Dense { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs_grad(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// Square-window max-pool on NCHW input, no padding.
    pub fn max_pool(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bad = || Error::ShapeMismatch {
            op: "max_pool",
            left: xs.clone(),
            right: vec![size, size],
        };
        if xs.len() != 4 || size == 0 {
            return Err(bad());
        }
        let ho = kernels::conv_out_len(xs[2], size, stride, 0).ok_or_else(bad)?;
        let wo = kernels::conv_out_len(xs[3], size, stride, 0).ok_or_else(bad)?;
        let geom = PoolGeom {
            planes: xs[0] * xs[1],
            h: xs[2],
            w: xs[3],
            size,
            stride,
            ho,
            wo,
        };
        let (out, arg) = kernels::maxpool_forward(self.value(x).data(), &geom);
        let needs = self.needs_grad(x);
        let value = Tensor::from_parts(vec![xs[0], xs[1], ho, wo], out);
        Ok(self.push(value, Op::MaxPool { x, arg }, needs))
    }

    /// Mean over every axis after the first two: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool",
                left: xs,
                right: vec![],
            });
        }
        let spatial: usize = xs[2..].iter().product();
        let inv = 1.0 / spatial as f64;
        let out = self
            .value(x)
            .data()
            .chunks(spatial)
            .map(|c| T::from_f64_lossy(c.iter().map(|v| v.as_f64()).sum::<f64>() * inv))
            .collect();
        let needs = self.needs_grad(x);
        Ok(self.push(
            Tensor::from_parts(vec![xs[0], xs[1]], out),
            Op::GlobalAvgPool { x, spatial },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let needs = self.needs_grad(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).sub(self.value(b))?;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let needs = self.needs_grad(x);
        self.push(value, Op::Scale(x, s), needs)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        let needs = self.needs_grad(x);
        self.push(value, Op::Abs(x), needs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let needs = self.needs_grad(x);
        self.push(value, Op::Square(x), needs)
    }

    /// Elementwise square root; inputs must be nonnegative.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|v| *v < T::zero()) {
            return Err(Error::invalid("sqrt of a negative value"));
        }
        let value = self.value(x).map(|v| v.sqrt());
        let needs = self.needs_grad(x);
        Ok(self.push(value, Op::Sqrt(x), needs))
    }

    /// `max(x, lo)` elementwise.
    pub fn clamp_min(&mut self, x: Var, lo: T) -> Var {
        let value = self.value(x).map(|v| if v > lo { v } else { lo });
        let needs = self.needs_grad(x);
        self.push(value, Op::ClampMin(x, lo), needs)
    }

    /// Sums the trailing axis: `[.., n] -> [..]` (`[n] -> [1]`).
    pub fn sum_last(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let len = *xs.last().expect("tensor rank >= 1");
        let mut shape = xs[..xs.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = self
            .value(x)
            .data()
            .chunks(len)
            .map(|c| T::from_f64_lossy(c.iter().map(|v| v.as_f64()).sum()))
            .collect();
        let needs = self.needs_grad(x);
        self.push(Tensor::from_parts(shape, out), Op::SumLast { x, len }, needs)
    }

    /// Sum of every element into a `[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = T::from_f64_lossy(self.value(x).sum());
        let needs = self.needs_grad(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    /// Row-wise softmax over the trailing axis of a `[N, C]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                left: xs,
                right: vec![],
            });
        }
        let mut out = Vec::with_capacity(xs[0] * xs[1]);
        for row in self.value(x).data().chunks(xs[1]) {
            out.extend(softmax_row(row));
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Tensor::from_parts(xs, out), Op::Softmax(x), needs))
    }

    /// Per-example cross-entropy of `[N, C]` logits, shape `[N]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let xs = self.shape(logits).to_vec();
        if xs.len() != 2 || xs[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: xs,
                right: vec![labels.len()],
            });
        }
        let c = xs[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: c,
            });
        }
        let mut probs = Vec::with_capacity(xs[0] * c);
        let mut out = Vec::with_capacity(xs[0]);
        for (row, &label) in self.value(logits).data().chunks(c).zip(labels) {
            let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
            out.push(T::from_f64_lossy(lse - row[label].as_f64()));
            probs.extend(softmax_row(row));
        }
        let needs = self.needs_grad(logits);
        Ok(self.push(
            Tensor::from_parts(vec![xs[0]], out),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Row-wise maximum of `[N, C]` over the entries where `allowed` is set.
    pub fn masked_max(&mut self, x: Var, allowed: &[bool]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || allowed.len() != xs[0] * xs[1] {
            return Err(Error::ShapeMismatch {
                op: "masked_max",
                left: xs,
                right: vec![allowed.len()],
            });
        }
        let c = xs[1];
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(xs[0]);
        let mut arg = Vec::with_capacity(xs[0]);
        for r in 0..xs[0] {
            let mut best: Option<usize> = None;
            for j in 0..c {
                let i = r * c + j;
                if allowed[i] && best.is_none_or(|b| data[i] > data[b]) {
                    best = Some(i);
                }
            }
            let best = best.ok_or_else(|| Error::invalid("masked_max: row with no allowed entry"))?;
            out.push(data[best]);
            arg.push(best);
        }
        let needs = self.needs_grad(x);
        Ok(self.push(Tensor::from_parts(vec![xs[0]], out), Op::MaskedMax { x, arg }, needs))
    }

    /// Picks `x[r, idx[r]]` from a `[N, C]` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || idx.len() != xs[0] {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: xs,
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= xs[1]) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: xs[1],
            });
        }
        let data = self.value(x).data();
        let out = idx.iter().enumerate().map(|(r, &j)| data[r * xs[1] + j]).collect();
        let flat = idx.iter().enumerate().map(|(r, &j)| r * xs[1] + j).collect();
        let needs = self.needs_grad(x);
        Ok(self.push(Tensor::from_parts(vec![xs[0]], out), Op::Gather { x, idx: flat }, needs))
    }

    /// Row-wise `||a - b||_1` over all trailing axes.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        self.flatten_tail_sum(d)
    }

    /// Row-wise `||a - b||_2` over all trailing axes.
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.square(d);
        let s = self.flatten_tail_sum(d)?;
        self.sqrt(s)
    }

    fn flatten_tail_sum(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let x = if xs.len() > 2 {
            let tail: usize = xs[1..].iter().product();
            self.reshape(x, &[xs[0], tail])?
        } else {
            x
        };
        Ok(self.sum_last(x))
    }

    /// Gradients of the scalar `out` with respect to every node that needs one.
    pub fn backward(&self, out: Var) -> Result<Grads<T>> {
        let os = self.value(out);
        if os.len() != 1 {
            return Err(Error::NonScalarOutput(os.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(vec![T::one()]);

        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes[..=out.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Grads { grads, shapes })
    }

    /// Gradients for the requested leaves, zero-filled when unreachable.
    pub fn gradients(&self, out: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let grads = self.backward(out)?;
        Ok(wrt
            .iter()
            .map(|&v| grads.get(v).unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec())))
            .collect())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.needs_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                if self.needs_grad(*x) {
                    let dx = kernels::conv2d_backward_input(g, self.value(*w).data(), geom);
                    self.accumulate(grads, *x, dx);
                }
                if self.needs_grad(*w) {
                    let src = if cols.is_empty() {
                        self.value(*x).data()
                    } else {
                        cols.as_slice()
                    };
                    let dw = kernels::conv2d_backward_weight(g, src, geom);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.needs_grad(*b) {
                        let db = kernels::channel_sums(g, geom.n, geom.cout, geom.ho * geom.wo);
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xs = self.shape(*x);
                let (n, din) = (xs[0], xs[1]);
                let dout = self.shape(*w)[0];
                if self.needs_grad(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    T::gemm(
                        n,
                        dout,
                        din,
                        T::one(),
                        g,
                        dout as isize,
                        1,
                        self.value(*w).data(),
                        din as isize,
                        1,
                        T::zero(),
                        &mut dx,
                        din as isize,
                        1,
                    );
                    self.accumulate(grads, *x, dx);
                }
                if self.needs_grad(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(
                        dout,
                        n,
                        din,
                        T::one(),
                        g,
                        1,
                        dout as isize,
                        self.value(*x).data(),
                        din as isize,
                        1,
                        T::zero(),
                        &mut dw,
                        din as isize,
                        1,
                    );
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.needs_grad(*b) {
                        let db = kernels::channel_sums(g, n, dout, 1);
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::MaxPool { x, arg } => {
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (&gi, &a) in g.iter().zip(arg) {
                    d[a] += gi;
                }
                self.accumulate(grads, *x, d);
            }
            Op::GlobalAvgPool { x, spatial } => {
                let inv = T::from_f64_lossy(1.0 / *spatial as f64);
                let mut d = Vec::with_capacity(g.len() * spatial);
                for &gi in g {
                    d.extend(std::iter::repeat_n(gi * inv, *spatial));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect());
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a).data();
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(&gi, &y)| gi * y).collect());
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.iter().map(|&v| v * *s).collect()),
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let d = g.iter().zip(xv).map(|(&gi, &xi)| gi * sign(xi)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = T::one() + T::one();
                let d = g.iter().zip(xv).map(|(&gi, &xi)| gi * two * xi).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sqrt(x) => {
                let yv = node.value.data();
                let two = T::one() + T::one();
                let d = g
                    .iter()
                    .zip(yv)
                    .map(|(&gi, &yi)| if yi > T::zero() { gi / (two * yi) } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::ClampMin(x, lo) => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi > *lo { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::SumLast { x, len } => {
                let mut d = Vec::with_capacity(g.len() * len);
                for &gi in g {
                    d.extend(std::iter::repeat_n(gi, *len));
                }
                self.accumulate(grads, *x, d);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Softmax(x) => {
                let c = node.value.shape()[1];
                let mut d = Vec::with_capacity(node.value.len());
                for (yr, gr) in node.value.data().chunks(c).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gi)| y.as_f64() * gi.as_f64()).sum();
                    let dot = T::from_f64_lossy(dot);
                    d.extend(yr.iter().zip(gr).map(|(&y, &gi)| y * (gi - dot)));
                }
                self.accumulate(grads, *x, d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let mut d = probs.clone();
                for (r, (&label, &gi)) in labels.iter().zip(g).enumerate() {
                    d[r * c + label] -= T::one();
                    for v in &mut d[r * c..(r + 1) * c] {
                        *v *= gi;
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::MaskedMax { x, arg } | Op::Gather { x, idx: arg } => {
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (&gi, &a) in g.iter().zip(arg) {
                    d[a] += gi;
                }
                self.accumulate(grads, *x, d);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get_mut(v.0)?.take()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g))
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn softmax_row<T: Scalar>(row: &[T]) -> impl Iterator<Item = T> + '_ {
    let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v.as_f64() - m).exp()).sum();
    row.iter().map(move |v| T::from_f64_lossy((v.as_f64() - m).exp() / z))
}
