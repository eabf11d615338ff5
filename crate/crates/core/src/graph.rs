//! A define-by-run reverse-mode autodiff tape.
//!
//! Every model forward builds a fresh [`Graph`] for one sample. Leaves created
//! with [`Graph::param`] are tracked; leaves created with [`Graph::input`] are
//! constants. Ops whose inputs are all constants are never differentiated, which
//! is how frozen sub-networks run under no-gradient semantics.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{self, ConvGeom};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    stride: usize,
    pad: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Abs(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    ConcatChannels(Vec<Var>),
    Resize(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRowBias { x: Var, bias: Var },
    SoftmaxRows(Var),
    Transpose(Var),
    Reshape(Var),
    Mse(Var, Var),
    CrossEntropy2 { logits: Var, target: Vec<u8> },
    Combine(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

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
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op: if tracked { op } else { Op::Leaf }, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Hash of every branch taken by a non-smooth op: ReLU and abs input
    /// signs, max-pool winners. Two evaluations with equal signatures lie on
    /// the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| h = (h ^ v).wrapping_mul(PRIME);
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    mix(i as u64);
                    for v in self.nodes[x.0].value.data() {
                        mix(u64::from(*v > T::zero()));
                    }
                }
                Op::MaxPool2 { argmax, .. } => {
                    mix(i as u64);
                    argmax.iter().for_each(|&a| mix(u64::from(a)));
                }
                _ => {}
            }
        }
        h
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("shape");
        let tr = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Add(a, b), tr)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("shape");
        let tr = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Sub(a, b), tr)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let tr = self.tracked(a);
        self.push(t, Op::Scale(a, s), tr)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let tr = self.tracked(a);
        self.push(t, Op::Relu(a), tr)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.abs());
        let tr = self.tracked(a);
        self.push(t, Op::Abs(a), tr)
    }

    /// Convolution of a `[C, H, W]` map with a `[O, C, k, k]` kernel and optional `[O]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (c, h, wd) = self.value(x).dims3();
        let ws = self.value(w).shape().to_vec();
        assert!(ws.len() == 4 && ws[1] == c && ws[2] == ws[3], "conv2d weight {:?} for {} channels", ws, c);
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: ws[2], stride, pad };
        let (oh, ow) = geom.out_hw();
        let o = ws[0];
        let mut out = vec![T::zero(); o * oh * ow];
        let xd = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), o, geom.col_rows());
        if geom.is_pointwise() {
            gemm(wm, MatRef::new(xd, c, h * wd), &mut out, false);
        } else {
            let cols = kernels::im2col(xd, geom);
            gemm(wm, MatRef::new(&cols, geom.col_rows(), oh * ow), &mut out, false);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), oh * ow);
        }
        let tr = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        let t = Tensor::from_vec(&[o, oh, ow], out).expect("shape");
        self.push(t, Op::Conv2d { x, w, b, spec: ConvSpec { stride, pad } }, tr)
    }

    /// Transposed convolution with a `[C, O, k, k]` kernel; output side is `(H − 1)·s − 2p + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (c, h, wd) = self.value(x).dims3();
        let ws = self.value(w).shape().to_vec();
        assert!(ws.len() == 4 && ws[0] == c && ws[2] == ws[3], "conv_transpose2d weight {:?} for {} channels", ws, c);
        let (o, k) = (ws[1], ws[2]);
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (wd - 1) * stride + k - 2 * pad;
        let geom = ConvGeom { channels: o, height: oh, width: ow, kernel: k, stride, pad };
        debug_assert_eq!(geom.out_hw(), (h, wd));
        let mut cols = vec![T::zero(); o * k * k * h * wd];
        gemm(
            MatRef::new(self.value(w).data(), c, o * k * k).t(),
            MatRef::new(self.value(x).data(), c, h * wd),
            &mut cols,
            false,
        );
        let mut out = vec![T::zero(); o * oh * ow];
        kernels::col2im(&cols, geom, &mut out);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), oh * ow);
        }
        let tr = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        let t = Tensor::from_vec(&[o, oh, ow], out).expect("shape");
        self.push(t, Op::ConvTranspose2d { x, w, b, spec: ConvSpec { stride, pad } }, tr)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let (out, argmax) = kernels::max_pool2(self.value(x).data(), c, h, w);
        let t = Tensor::from_vec(&[c, h / 2, w / 2], out).expect("shape");
        let tr = self.tracked(x);
        self.push(t, Op::MaxPool2 { x, argmax }, tr)
    }

    /// Channelwise concatenation of `[C_i, H, W]` maps.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (_, h, w) = self.value(parts[0]).dims3();
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let (pc, ph, pw) = self.value(p).dims3();
            assert_eq!((ph, pw), (h, w), "concat spatial dims");
            data.extend_from_slice(self.value(p).data());
            c += pc;
        }
        let tr = parts.iter().any(|&p| self.tracked(p));
        let t = Tensor::from_vec(&[c, h, w], data).expect("shape");
        self.push(t, Op::ConcatChannels(parts.to_vec()), tr)
    }

    /// Half-pixel bilinear resize of a `[C, H, W]` map.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let out = kernels::resize_bilinear(self.value(x).data(), c, h, w, oh, ow);
        let t = Tensor::from_vec(&[c, oh, ow], out).expect("shape");
        let tr = self.tracked(x);
        self.push(t, Op::Resize(x), tr)
    }

    /// `op(a) · op(b)` for matrices, where `op` optionally transposes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (ar, ac) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let ma = mat(self.value(a).data(), ar, ac, ta);
        let mb = mat(self.value(b).data(), br, bc, tb);
        let m = if ta { ac } else { ar };
        let n = if tb { br } else { bc };
        let mut out = vec![T::zero(); m * n];
        gemm(ma, mb, &mut out, false);
        let tr = self.tracked(a) || self.tracked(b);
        let t = Tensor::from_vec(&[m, n], out).expect("shape");
        self.push(t, Op::MatMul { a, b, ta, tb }, tr)
    }

    /// Adds a length-N bias to every row of an `M × N` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let (m, n) = self.value(x).dims2();
        assert_eq!(self.value(bias).len(), n, "row bias length");
        let bd = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            for (v, &b) in row.iter_mut().zip(&bd) {
                *v += b;
            }
        }
        debug_assert_eq!(t.len(), m * n);
        let tr = self.tracked(x) || self.tracked(bias);
        self.push(t, Op::AddRowBias { x, bias }, tr)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, n) = self.value(x).dims2();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let tr = self.tracked(x);
        self.push(t, Op::SoftmaxRows(x), tr)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (m, n) = self.value(x).dims2();
        let t = Tensor::from_vec(&[n, m], transpose(self.value(x).data(), m, n)).expect("shape");
        let tr = self.tracked(x);
        self.push(t, Op::Transpose(x), tr)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        let tr = self.tracked(x);
        self.push(t, Op::Reshape(x), tr)
    }

    /// Mean squared error between two equally shaped tensors, as a scalar node.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mse shape");
        let s: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let v = s / T::cst(va.len() as f64);
        let tr = self.tracked(a) || self.tracked(b);
        self.push(Tensor::scalar(v), Op::Mse(a, b), tr)
    }

    /// Mean two-class cross-entropy of `[2, H, W]` logits against a 0/1 target.
    pub fn cross_entropy2(&mut self, logits: Var, target: &[u8]) -> Var {
        let (c, h, w) = self.value(logits).dims3();
        assert_eq!(c, 2, "cross_entropy2 expects two logit channels");
        assert_eq!(target.len(), h * w, "cross_entropy2 target size");
        let d = self.value(logits).data();
        let n = h * w;
        let mut s = T::zero();
        for (p, &y) in target.iter().enumerate() {
            let (l0, l1) = (d[p], d[n + p]);
            let mx = l0.max(l1);
            let lse = mx + ((l0 - mx).exp() + (l1 - mx).exp()).ln();
            s += lse - if y == 0 { l0 } else { l1 };
        }
        let v = s / T::cst(n as f64);
        let tr = self.tracked(logits);
        self.push(Tensor::scalar(v), Op::CrossEntropy2 { logits, target: target.to_vec() }, tr)
    }

    /// Weighted sum `Σ wᵢ·xᵢ` of equally shaped nodes.
    pub fn combine(&mut self, terms: &[(Var, T)]) -> Var {
        let mut t = Tensor::zeros(self.value(terms[0].0).shape());
        for &(v, wgt) in terms {
            assert_eq!(self.value(v).shape(), t.shape(), "combine shape");
            for (o, &x) in t.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += wgt * x;
            }
        }
        let tr = terms.iter().any(|&(v, _)| self.tracked(v));
        self.push(t, Op::Combine(terms.to_vec()), tr)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tracked(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s)),
            Op::Relu(a) => {
                let data = g.data().iter().zip(node.value.data()).map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() });
                acc(*a, Tensor::from_vec(g.shape(), data.collect()).expect("shape"));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                });
                acc(*a, Tensor::from_vec(g.shape(), data.collect()).expect("shape"));
            }
            Op::Conv2d { x, w, b, spec } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (c, h, wd) = xv.dims3();
                let ws = wv.shape();
                let geom = ConvGeom { channels: c, height: h, width: wd, kernel: ws[2], stride: spec.stride, pad: spec.pad };
                let (oh, ow) = geom.out_hw();
                let o = ws[0];
                let gm = MatRef::new(g.data(), o, oh * ow);
                let cols_owned;
                let cols: &[T] = if geom.is_pointwise() {
                    xv.data()
                } else {
                    cols_owned = kernels::im2col(xv.data(), geom);
                    &cols_owned
                };
                if self.tracked(*w) {
                    let mut dw = vec![T::zero(); o * geom.col_rows()];
                    gemm(gm, MatRef::new(cols, geom.col_rows(), oh * ow).t(), &mut dw, false);
                    acc(*w, Tensor::from_vec(ws, dw).expect("shape"));
                }
                if let Some(b) = b {
                    acc(*b, Tensor::from_vec(&[o], channel_sums(g.data(), o)).expect("shape"));
                }
                if self.tracked(*x) {
                    let mut dcols = vec![T::zero(); geom.col_rows() * oh * ow];
                    gemm(MatRef::new(wv.data(), o, geom.col_rows()).t(), gm, &mut dcols, false);
                    if geom.is_pointwise() {
                        acc(*x, Tensor::from_vec(&[c, h, wd], dcols).expect("shape"));
                    } else {
                        let mut dx = vec![T::zero(); c * h * wd];
                        kernels::col2im(&dcols, geom, &mut dx);
                        acc(*x, Tensor::from_vec(&[c, h, wd], dx).expect("shape"));
                    }
                }
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (c, h, wd) = xv.dims3();
                let ws = wv.shape();
                let (o, k) = (ws[1], ws[2]);
                let (_, oh, ow) = node.value.dims3();
                let geom = ConvGeom { channels: o, height: oh, width: ow, kernel: k, stride: spec.stride, pad: spec.pad };
                let gcols = kernels::im2col(g.data(), geom);
                let gc = MatRef::new(&gcols[..], o * k * k, h * wd);
                if self.tracked(*w) {
                    let mut dw = vec![T::zero(); c * o * k * k];
                    gemm(MatRef::new(xv.data(), c, h * wd), gc.t(), &mut dw, false);
                    acc(*w, Tensor::from_vec(ws, dw).expect("shape"));
                }
                if let Some(b) = b {
                    acc(*b, Tensor::from_vec(&[o], channel_sums(g.data(), o)).expect("shape"));
                }
                if self.tracked(*x) {
                    let mut dx = vec![T::zero(); c * h * wd];
                    gemm(MatRef::new(wv.data(), c, o * k * k), gc, &mut dx, false);
                    acc(*x, Tensor::from_vec(&[c, h, wd], dx).expect("shape"));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    d[i as usize] += gv;
                }
                acc(*x, dx);
            }
            Op::ConcatChannels(parts) => {
                let (_, h, w) = g.dims3();
                let mut start = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[0];
                    let slice = g.data()[start * h * w..(start + pc) * h * w].to_vec();
                    acc(p, Tensor::from_vec(&[pc, h, w], slice).expect("shape"));
                    start += pc;
                }
            }
            Op::Resize(x) => {
                let (c, h, w) = self.value(*x).dims3();
                let (_, oh, ow) = g.dims3();
                let dx = kernels::resize_bilinear_backward(g.data(), c, h, w, oh, ow);
                acc(*x, Tensor::from_vec(&[c, h, w], dx).expect("shape"));
            }
            Op::MatMul { a, b, ta, tb } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (ar, ac) = av.dims2();
                let (br, bc) = bv.dims2();
                let (m, n) = g.dims2();
                let gm = MatRef::new(g.data(), m, n);
                let opa = mat(av.data(), ar, ac, *ta);
                let opb = mat(bv.data(), br, bc, *tb);
                if self.tracked(*a) {
                    let mut da = vec![T::zero(); ar * ac];
                    if *ta {
                        gemm(opb, gm.t(), &mut da, false);
                    } else {
                        gemm(gm, opb.t(), &mut da, false);
                    }
                    acc(*a, Tensor::from_vec(&[ar, ac], da).expect("shape"));
                }
                if self.tracked(*b) {
                    let mut db = vec![T::zero(); br * bc];
                    if *tb {
                        gemm(gm.t(), opa, &mut db, false);
                    } else {
                        gemm(opa.t(), gm, &mut db, false);
                    }
                    acc(*b, Tensor::from_vec(&[br, bc], db).expect("shape"));
                }
            }
            Op::AddRowBias { x, bias } => {
                acc(*x, g.clone());
                if self.tracked(*bias) {
                    let (_, n) = g.dims2();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*bias, Tensor::from_vec(self.value(*bias).shape(), db).expect("shape"));
                }
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = g.dims2();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.data().chunks(n).zip(node.value.data().chunks(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &y)| y * (gv - dot)));
                }
                acc(*x, Tensor::from_vec(g.shape(), dx).expect("shape"));
            }
            Op::Transpose(x) => {
                let (m, n) = g.dims2();
                acc(*x, Tensor::from_vec(&[n, m], transpose(g.data(), m, n)).expect("shape"));
            }
            Op::Reshape(x) => acc(*x, g.clone().reshaped(self.value(*x).shape())),
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = T::cst(2.0) * g.data()[0] / T::cst(va.len() as f64);
                let d: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| k * (x - y)).collect();
                let da = Tensor::from_vec(va.shape(), d).expect("shape");
                if self.tracked(*b) {
                    acc(*b, da.map(|v| -v));
                }
                acc(*a, da);
            }
            Op::CrossEntropy2 { logits, target } => {
                let lv = self.value(*logits);
                let n = target.len();
                let k = g.data()[0] / T::cst(n as f64);
                let d = lv.data();
                let mut dl = vec![T::zero(); 2 * n];
                for (p, &y) in target.iter().enumerate() {
                    let (l0, l1) = (d[p], d[n + p]);
                    let mx = l0.max(l1);
                    let (e0, e1) = ((l0 - mx).exp(), (l1 - mx).exp());
                    let s = e0 + e1;
                    let (p0, p1) = (e0 / s, e1 / s);
                    let (y0, y1) = if y == 0 { (T::one(), T::zero()) } else { (T::zero(), T::one()) };
                    dl[p] = k * (p0 - y0);
                    dl[n + p] = k * (p1 - y1);
                }
                acc(*logits, Tensor::from_vec(lv.shape(), dl).expect("shape"));
            }
            Op::Combine(terms) => {
                for &(v, wgt) in terms {
                    acc(v, g.map(|x| x * wgt));
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], retained for leaves only.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

fn mat<T>(data: &[T], rows: usize, cols: usize, trans: bool) -> MatRef<'_, T> {
    let m = MatRef::new(data, rows, cols);
    if trans {
        m.t()
    } else {
        m
    }
}

fn transpose<T: Scalar>(d: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    out
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (ch, &b) in out.chunks_mut(plane).zip(bias) {
        ch.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums<T: Scalar>(g: &[T], channels: usize) -> Vec<T> {
    let plane = g.len() / channels;
    g.chunks(plane).map(|c| c.iter().copied().sum()).collect()
}
