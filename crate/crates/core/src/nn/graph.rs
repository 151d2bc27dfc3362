//! Reverse-mode differentiation over a per-forward tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameter leaves borrow
//! their tensors from a [`ParamStore`]; whether a leaf accumulates a gradient
//! is decided by the set of trainable components handed to the graph, which
//! is how the training stages freeze everything they must not touch.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::{Component, ParamId, ParamStore};
use super::tensor::{matmul, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
        cols: Vec<T>,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Affine {
        x: NodeId,
        scale: T,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Loss {
        x: NodeId,
        grad: Tensor<T>,
    },
    WeightedSum {
        terms: Vec<(NodeId, T)>,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    trainable: Vec<Component>,
    nodes: Vec<Node<'a, T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Parameter gradients produced by [`Graph::backward`], indexed by [`ParamId`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// Graph in which only parameters of `trainable` components receive gradients.
    pub fn new(store: &'a ParamStore<T>, trainable: &[Component]) -> Self {
        Self {
            store,
            trainable: trainable.to_vec(),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// Graph with every parameter frozen; no backward caches are kept.
    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self::new(store, &[])
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn input_ref(&mut self, value: &'a Tensor<T>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let p = self.store.get(id);
        let requires_grad = self.trainable.contains(&p.component);
        let node = self.push(Cow::Borrowed(&p.value), Op::Param(id), requires_grad);
        self.param_nodes.insert(id, node);
        node
    }

    /// Same-padded 2-D convolution, stride 1, odd square kernel.
    ///
    /// `x` is `(N, C, H, W)`, `w` is `(O, C, k, k)`, `b` is `(O)`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, c, h, wd) = dims4(xv);
        let (o, wc, k, k2) = dims4(wv);
        assert_eq!(c, wc, "conv2d channel mismatch");
        assert_eq!(k, k2);
        assert!(k % 2 == 1, "conv2d expects an odd kernel");
        let pad = k / 2;
        let hw = h * wd;
        let ckk = c * k * k;
        let requires_grad = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        let bias = self.value(b).data();

        let mut out = vec![T::zero(); n * o * hw];
        let mut cols = if requires_grad {
            vec![T::zero(); n * ckk * hw]
        } else {
            Vec::new()
        };
        let mut scratch = if requires_grad {
            Vec::new()
        } else {
            vec![T::zero(); ckk * hw]
        };
        for s in 0..n {
            let xs = &xv.data()[s * c * hw..(s + 1) * c * hw];
            let col: &mut [T] = if requires_grad {
                &mut cols[s * ckk * hw..(s + 1) * ckk * hw]
            } else {
                &mut scratch
            };
            im2col(xs, c, h, wd, k, pad, col);
            let os = &mut out[s * o * hw..(s + 1) * o * hw];
            for (ch, row) in os.chunks_mut(hw).enumerate() {
                row.fill(bias[ch]);
            }
            matmul(wv.data(), false, col, false, os, o, ckk, hw, true);
        }
        let value = Tensor::from_vec(&[n, o, h, wd], out);
        self.push(
            Cow::Owned(value),
            Op::Conv2d { x, w, b, pad, cols },
            requires_grad,
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let slope = T::from_f64_lossy(slope);
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.requires_grad(x);
        self.push(Cow::Owned(value), Op::LeakyRelu { x, slope }, rg)
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(xv);
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial size");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let d = xv.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for idx in [
                        base + 2 * y * w + 2 * xx + 1,
                        base + (2 * y + 1) * w + 2 * xx,
                        base + (2 * y + 1) * w + 2 * xx + 1,
                    ] {
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.requires_grad(x);
        let value = Tensor::from_vec(&[n, c, oh, ow], out);
        self.push(Cow::Owned(value), Op::MaxPool2 { x, argmax }, rg)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(xv);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * oh * ow];
        let d = xv.data();
        for plane in 0..n * c {
            let src = &d[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.requires_grad(x);
        let value = Tensor::from_vec(&[n, c, oh, ow], out);
        self.push(Cow::Owned(value), Op::Upsample2 { x }, rg)
    }

    /// Channel-axis concatenation of two `(N, C, H, W)` tensors.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, ca, h, w) = dims4(av);
        let (nb, cb, hb, wb) = dims4(bv);
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial mismatch");
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            out.extend_from_slice(&av.data()[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&bv.data()[s * cb * plane..(s + 1) * cb * plane]);
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::from_vec(&[n, ca + cb, h, w], out);
        self.push(Cow::Owned(value), Op::Concat { a, b }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Cow::Owned(value), Op::Add { a, b }, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(sigmoid);
        let rg = self.requires_grad(x);
        self.push(Cow::Owned(value), Op::Sigmoid { x }, rg)
    }

    /// `(x - shift) * scale`.
    pub fn affine(&mut self, x: NodeId, shift: f64, scale: f64) -> NodeId {
        let (shift, scale) = (T::from_f64_lossy(shift), T::from_f64_lossy(scale));
        let value = self.value(x).map(|v| (v - shift) * scale);
        let rg = self.requires_grad(x);
        self.push(Cow::Owned(value), Op::Affine { x, scale }, rg)
    }

    /// Mean over the spatial axes: `(N, C, H, W)` to `(N, C)`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(xv);
        let inv = T::one() / T::from_usize(h * w).unwrap();
        let out: Vec<T> = xv
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.requires_grad(x);
        let value = Tensor::from_vec(&[n, c], out);
        self.push(Cow::Owned(value), Op::GlobalAvgPool { x }, rg)
    }

    /// `x·wᵀ + b` with `x: (N, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, fin) = (xv.dim(0), xv.dim(1));
        let fout = wv.dim(0);
        assert_eq!(wv.dim(1), fin, "linear input width mismatch");
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        matmul(xv.data(), false, wv.data(), true, &mut out, n, fin, fout, true);
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        let value = Tensor::from_vec(&[n, fout], out);
        self.push(Cow::Owned(value), Op::Linear { x, w, b }, rg)
    }

    /// Scalar loss node with a precomputed gradient with respect to `x`.
    pub fn loss(&mut self, x: NodeId, value: T, grad: Tensor<T>) -> NodeId {
        assert_eq!(grad.shape(), self.value(x).shape());
        let rg = self.requires_grad(x);
        self.push(Cow::Owned(Tensor::scalar(value)), Op::Loss { x, grad }, rg)
    }

    /// Weighted sum of scalar nodes, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let terms: Vec<(NodeId, T)> = terms
            .iter()
            .map(|&(id, w)| (id, T::from_f64_lossy(w)))
            .collect();
        let mut total = T::zero();
        for &(id, w) in &terms {
            total = total + w * self.value(id).data()[0];
        }
        let rg = terms.iter().any(|&(id, _)| self.requires_grad(id));
        self.push(Cow::Owned(Tensor::scalar(total)), Op::WeightedSum { terms }, rg)
    }

    /// Backpropagate from the scalar node `root`.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => param_grads[pid.0] = Some(gout),
                Op::Conv2d { x, w, b, pad, cols } => {
                    self.conv2d_backward(&gout, *x, *w, *b, *pad, cols, &mut grads)
                }
                Op::LeakyRelu { x, slope } => {
                    if self.requires_grad(*x) {
                        let xv = self.value(*x).data();
                        let mut g = gout;
                        for (gi, &xi) in g.data_mut().iter_mut().zip(xv) {
                            if xi <= T::zero() {
                                *gi = *gi * *slope;
                            }
                        }
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    if self.requires_grad(*x) {
                        let mut g = Tensor::zeros(self.value(*x).shape());
                        let gd = g.data_mut();
                        for (&src, &go) in argmax.iter().zip(gout.data()) {
                            gd[src as usize] = gd[src as usize] + go;
                        }
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Upsample2 { x } => {
                    if self.requires_grad(*x) {
                        let xs = self.value(*x).shape().to_vec();
                        let (h, w) = (xs[2], xs[3]);
                        let (oh, ow) = (2 * h, 2 * w);
                        let mut g = Tensor::zeros(&xs);
                        let gd = g.data_mut();
                        for (plane, src) in gout.data().chunks(oh * ow).enumerate() {
                            let dst = &mut gd[plane * h * w..(plane + 1) * h * w];
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let t = (y / 2) * w + xx / 2;
                                    dst[t] = dst[t] + src[y * ow + xx];
                                }
                            }
                        }
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Concat { a, b } => {
                    let (n, ca, h, w) = dims4(self.value(*a));
                    let cb = self.value(*b).dim(1);
                    let plane = h * w;
                    let gd = gout.data();
                    let stride = (ca + cb) * plane;
                    if self.requires_grad(*a) {
                        let mut ga = Vec::with_capacity(n * ca * plane);
                        for s in 0..n {
                            ga.extend_from_slice(&gd[s * stride..s * stride + ca * plane]);
                        }
                        accumulate(&mut grads, *a, Tensor::from_vec(&[n, ca, h, w], ga));
                    }
                    if self.requires_grad(*b) {
                        let mut gb = Vec::with_capacity(n * cb * plane);
                        for s in 0..n {
                            gb.extend_from_slice(&gd[s * stride + ca * plane..(s + 1) * stride]);
                        }
                        accumulate(&mut grads, *b, Tensor::from_vec(&[n, cb, h, w], gb));
                    }
                }
                Op::Add { a, b } => {
                    if self.requires_grad(*a) {
                        accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.requires_grad(*b) {
                        accumulate(&mut grads, *b, gout);
                    }
                }
                Op::Sigmoid { x } => {
                    if self.requires_grad(*x) {
                        let y = node.value.data();
                        let mut g = gout;
                        for (gi, &yi) in g.data_mut().iter_mut().zip(y) {
                            *gi = *gi * yi * (T::one() - yi);
                        }
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Affine { x, scale } => {
                    if self.requires_grad(*x) {
                        let s = *scale;
                        accumulate(&mut grads, *x, gout.map(|g| g * s));
                    }
                }
                Op::GlobalAvgPool { x } => {
                    if self.requires_grad(*x) {
                        let xs = self.value(*x).shape().to_vec();
                        let plane = xs[2] * xs[3];
                        let inv = T::one() / T::from_usize(plane).unwrap();
                        let mut data = Vec::with_capacity(gout.len() * plane);
                        for &g in gout.data() {
                            data.extend(std::iter::repeat_n(g * inv, plane));
                        }
                        accumulate(&mut grads, *x, Tensor::from_vec(&xs, data));
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, fin) = (xv.dim(0), xv.dim(1));
                    let fout = wv.dim(0);
                    if self.requires_grad(*w) {
                        let mut gw = vec![T::zero(); fout * fin];
                        matmul(gout.data(), true, xv.data(), false, &mut gw, fout, n, fin, false);
                        accumulate(&mut grads, *w, Tensor::from_vec(&[fout, fin], gw));
                    }
                    if self.requires_grad(*b) {
                        let mut gb = vec![T::zero(); fout];
                        for row in gout.data().chunks(fout) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a = *a + v;
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::from_vec(&[fout], gb));
                    }
                    if self.requires_grad(*x) {
                        let mut gx = vec![T::zero(); n * fin];
                        matmul(gout.data(), false, wv.data(), false, &mut gx, n, fout, fin, false);
                        accumulate(&mut grads, *x, Tensor::from_vec(&[n, fin], gx));
                    }
                }
                Op::Loss { x, grad } => {
                    if self.requires_grad(*x) {
                        let up = gout.data()[0];
                        accumulate(&mut grads, *x, grad.map(|g| g * up));
                    }
                }
                Op::WeightedSum { terms } => {
                    let up = gout.data()[0];
                    for &(id, w) in terms {
                        if self.requires_grad(id) {
                            accumulate(&mut grads, id, Tensor::scalar(up * w));
                        }
                    }
                }
            }
        }
        Gradients { grads: param_grads }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        gout: &Tensor<T>,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
        cols: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (n, c, h, wd) = dims4(self.value(x));
        let wv = self.value(w);
        let (o, _, k, _) = dims4(wv);
        let hw = h * wd;
        let ckk = c * k * k;
        let gd = gout.data();

        if self.requires_grad(w) {
            let mut gw = vec![T::zero(); o * ckk];
            for s in 0..n {
                let go = &gd[s * o * hw..(s + 1) * o * hw];
                let col = &cols[s * ckk * hw..(s + 1) * ckk * hw];
                matmul(go, false, col, true, &mut gw, o, hw, ckk, true);
            }
            accumulate(grads, w, Tensor::from_vec(wv.shape(), gw));
        }
        if self.requires_grad(b) {
            let mut gb = vec![T::zero(); o];
            for s in 0..n {
                for (ch, row) in gd[s * o * hw..(s + 1) * o * hw].chunks(hw).enumerate() {
                    gb[ch] = gb[ch] + row.iter().copied().sum::<T>();
                }
            }
            accumulate(grads, b, Tensor::from_vec(&[o], gb));
        }
        if self.requires_grad(x) {
            let mut gx = vec![T::zero(); n * c * hw];
            let mut gcol = vec![T::zero(); ckk * hw];
            for s in 0..n {
                let go = &gd[s * o * hw..(s + 1) * o * hw];
                matmul(wv.data(), true, go, false, &mut gcol, ckk, o, hw, false);
                col2im(&gcol, c, h, wd, k, pad, &mut gx[s * c * hw..(s + 1) * c * hw]);
            }
            accumulate(grads, x, Tensor::from_vec(&[n, c, h, wd], gx));
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected a 4-D tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Unfold `(C, H, W)` into `(C·k·k, H·W)` patches with zero padding.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, out: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * hw;
                let dst = &mut out[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ki as isize - pad as isize;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kj as isize - pad as isize;
                    for (xx, v) in line.iter_mut().enumerate() {
                        let sx = xx as isize + shift;
                        *v = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto `(C, H, W)`.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, out: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * hw;
                let src = &cols[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ki as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kj as isize - pad as isize;
                    for xx in 0..w {
                        let sx = xx as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<(&str, Tensor<f64>)>) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .into_iter()
            .map(|(n, t)| store.register(n.to_string(), Component::Encoder, t))
            .collect();
        (store, ids)
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Build `sum(c ⊙ f(x))` for a fixed random `c` and check the input
    /// gradient of a single-op function against central differences.
    fn check_op(
        shape: &[usize],
        f: impl Fn(&mut Graph<'_, f64>, NodeId) -> NodeId,
        tol: f64,
    ) {
        let x0 = lcg(shape.iter().product(), 7);
        let (store, ids) = store_with(vec![("x", Tensor::from_vec(shape, x0.clone()))]);
        let eval = |store: &ParamStore<f64>| -> (f64, Option<Tensor<f64>>) {
            let mut g = Graph::new(store, &[Component::Encoder]);
            let x = g.param(ids[0]);
            let y = f(&mut g, x);
            let yv = g.value(y).clone();
            let c = lcg(yv.len(), 99);
            let value: f64 = yv.data().iter().zip(&c).map(|(a, b)| a * b).sum();
            let root = g.loss(y, value, Tensor::from_vec(yv.shape(), c));
            let grads = g.backward(root);
            (value, grads.get(ids[0]).cloned())
        };
        let (_, analytic) = eval(&store);
        let analytic = analytic.expect("gradient reaches the parameter");
        let eps = 1e-6;
        for i in 0..x0.len() {
            let mut plus = store.clone();
            plus.value_mut(ids[0]).data_mut()[i] += eps;
            let mut minus = store.clone();
            minus.value_mut(ids[0]).data_mut()[i] -= eps;
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!((fd - a).abs() < tol, "element {i}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let wv = Tensor::from_vec(&[3, 2, 3, 3], lcg(54, 3));
        let bv = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]);
        let (wstore, wids) = store_with(vec![("w", wv), ("b", bv)]);
        check_op(
            &[2, 2, 4, 5],
            |g, x| {
                let w = g.input(wstore.value(wids[0]).clone());
                let b = g.input(wstore.value(wids[1]).clone());
                g.conv2d(x, w, b)
            },
            1e-7,
        );
    }

    #[test]
    fn conv2d_weight_gradient_matches_finite_differences() {
        let x = Tensor::from_vec(&[2, 2, 4, 4], lcg(64, 5));
        check_op(
            &[3, 2, 3, 3],
            |g, w| {
                let xi = g.input(x.clone());
                let b = g.input(Tensor::zeros(&[3]));
                g.conv2d(xi, w, b)
            },
            1e-7,
        );
    }

    #[test]
    fn pooling_and_resampling_gradients() {
        check_op(&[2, 3, 4, 4], |g, x| g.max_pool2(x), 1e-7);
        check_op(&[1, 2, 3, 3], |g, x| g.upsample2(x), 1e-7);
        check_op(&[2, 3, 4, 4], |g, x| g.global_avg_pool(x), 1e-7);
        check_op(&[2, 3, 2, 2], |g, x| g.sigmoid(x), 1e-7);
        check_op(&[2, 3, 2, 2], |g, x| g.leaky_relu(x, 0.1), 1e-7);
        check_op(&[2, 3, 2, 2], |g, x| g.affine(x, 0.4, 2.5), 1e-7);
    }

    #[test]
    fn merge_gradients() {
        check_op(
            &[2, 2, 2, 2],
            |g, x| {
                let y = g.sigmoid(x);
                g.concat_channels(x, y)
            },
            1e-7,
        );
        check_op(
            &[2, 2, 2, 2],
            |g, x| {
                let y = g.sigmoid(x);
                g.add(x, y)
            },
            1e-7,
        );
    }

    #[test]
    fn linear_gradients() {
        let w = Tensor::from_vec(&[4, 3], lcg(12, 11));
        check_op(
            &[5, 3],
            |g, x| {
                let wi = g.input(w.clone());
                let b = g.input(Tensor::from_vec(&[4], vec![0.5; 4]));
                g.linear(x, wi, b)
            },
            1e-7,
        );
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let (store, ids) = store_with(vec![("x", Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]))]);
        let mut g = Graph::new(&store, &[Component::Decoder]);
        let x = g.param(ids[0]);
        let y = g.sigmoid(x);
        let root = g.loss(y, 0.0, Tensor::full(&[1, 1, 2, 2], 1.0));
        assert!(!g.requires_grad(root));
        assert!(g.backward(root).get(ids[0]).is_none());
    }
}
