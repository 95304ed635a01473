//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive in execution order, so node ids are a
//! topological order by construction. [`Tape::backward`] walks the nodes in
//! reverse, propagating output gradients to inputs, and accumulates the
//! results into trainable leaves. Intermediate gradients are scratch and
//! discarded, so calling `backward` twice adds the leaf gradients twice.

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{self, ConvGeom, Homography, PasteGeom, WarpPlan};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        batch: usize,
        cols: Vec<T>,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Warp {
        x: Var,
        plan: WarpPlan<T>,
        channels: usize,
    },
    TotalVariation {
        x: Var,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Paste {
        image: Var,
        patch: Var,
        mask: Vec<T>,
        geom: PasteGeom,
    },
    Stack {
        xs: Vec<Var>,
    },
    BceWithLogits {
        x: Var,
        target: Vec<T>,
        weight: Vec<T>,
    },
    SmoothL1 {
        x: Var,
        target: Vec<T>,
        weight: Vec<T>,
        beta: T,
    },
    RangeViolation {
        x: Var,
        lo: T,
        hi: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    trainable: bool,
    grad: Option<Tensor<T>>,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn expect_shape(op: &'static str, got: &[usize], rank: usize) -> Result<()> {
    if got.len() != rank {
        return Err(shape_err(op, format!("expected rank {rank}, got shape {got:?}")));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is accumulated by [`backward`](Self::backward).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            trainable: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            trainable: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Cross-correlation of `[B, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_shape("conv2d", &xs, 4)?;
        expect_shape("conv2d", &ws, 4)?;
        if xs[1] != ws[1] {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, kernel expects {}", xs[1], ws[1]),
            ));
        }
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, padding)?;
        let (out, cols) = kernels::conv2d_forward(&geom, xs[0], self.value(x).data(), self.value(w).data());
        let value = Tensor::new(vec![xs[0], ws[0], geom.oh, geom.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                geom,
                batch: xs[0],
                cols,
            },
            &[x, w],
        ))
    }

    /// Adds `b[c]` to every element of channel `c` of a `[B, C, ...]` tensor.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b);
        if xs.len() < 2 || bs != [xs[1]] {
            return Err(shape_err("channel_bias", format!("input {xs:?}, bias {bs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = bias[i % xs[1]];
            chunk.iter_mut().for_each(|o| *o += bv);
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(value, Op::ChannelBias { x, b }, &[x, b]))
    }

    /// `x · wᵀ + b` for `x: [B, In]`, `w: [Out, In]`, `b: [Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        expect_shape("linear", &xs, 2)?;
        expect_shape("linear", &ws, 2)?;
        if xs[1] != ws[1] || bs != [ws[0]] {
            return Err(shape_err("linear", format!("input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let (batch, inp, outp) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); batch * outp];
        for row in out.chunks_mut(outp) {
            row.copy_from_slice(self.value(b).data());
        }
        T::gemm(
            batch,
            inp,
            outp,
            T::one(),
            self.value(x).data(),
            inp as isize,
            1,
            self.value(w).data(),
            1,
            inp as isize,
            T::one(),
            &mut out,
            outp as isize,
            1,
        );
        let value = Tensor::new(vec![batch, outp], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::sigmoid);
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    /// `scale · x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| v * scale + shift);
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Mean of all elements; the mean of an empty tensor is 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = if v.is_empty() {
            T::zero()
        } else {
            v.data().iter().copied().sum::<T>() / T::of(v.len() as f64)
        };
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// Projective warp of a `[C, H, W]` image. Gradients reach the pixels
    /// only; the homography is treated as data.
    pub fn bilinear_warp(
        &mut self,
        image: Var,
        homography: &Homography,
        out_h: usize,
        out_w: usize,
    ) -> Result<(Var, Tensor<T>)> {
        let s = self.shape(image).to_vec();
        expect_shape("bilinear_warp", &s, 3)?;
        let plan = WarpPlan::new(homography, s[1], s[2], out_h, out_w)?;
        let value = Tensor::new(vec![s[0], out_h, out_w], plan.apply(self.value(image).data(), s[0]))?;
        let mask = Tensor::new(vec![out_h, out_w], plan.mask())?;
        let v = self.push(
            value,
            Op::Warp {
                x: image,
                plan,
                channels: s[0],
            },
            &[image],
        );
        Ok((v, mask))
    }

    /// Anisotropic L1 total variation of a `[C, H, W]` image, averaged over
    /// the number of adjacent pairs.
    pub fn total_variation(&mut self, image: Var) -> Result<Var> {
        let s = self.shape(image).to_vec();
        expect_shape("total_variation", &s, 3)?;
        let tv = kernels::total_variation(self.value(image).data(), s[0], s[1], s[2]);
        Ok(self.push(Tensor::scalar(tv), Op::TotalVariation { x: image }, &[image]))
    }

    /// Channels `start..start+len` of a `[B, C, ...]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || start + len > s[1] {
            return Err(shape_err(
                "slice_channels",
                format!("channels {start}..{} of {s:?}", start + len),
            ));
        }
        let inner: usize = s[2..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(s[0] * len * inner);
        for b in 0..s[0] {
            let base = (b * s[1] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[1] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::SliceChannels { x, start }, &[x]))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Flat gather: `out[i] = x.data[idx[i]]`, shape `[idx.len()]`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err("gather", format!("index {bad} out of {} elements", src.len())));
        }
        let value = Tensor::new(vec![idx.len()], idx.iter().map(|&i| src[i]).collect())?;
        Ok(self.push(value, Op::Gather { x, idx }, &[x]))
    }

    /// Composites a `[C, ph, pw]` patch onto a `[C, H, W]` image with origin
    /// `(y0, x0)`, blending by a constant `[ph, pw]` mask. Pixels falling
    /// outside the image are dropped.
    pub fn paste(&mut self, image: Var, patch: Var, mask: &Tensor<T>, y0: isize, x0: isize) -> Result<Var> {
        let is = self.shape(image).to_vec();
        let ps = self.shape(patch).to_vec();
        expect_shape("paste", &is, 3)?;
        expect_shape("paste", &ps, 3)?;
        if is[0] != ps[0] || mask.shape() != [ps[1], ps[2]] {
            return Err(shape_err(
                "paste",
                format!("image {is:?}, patch {ps:?}, mask {:?}", mask.shape()),
            ));
        }
        let geom = PasteGeom {
            c: is[0],
            h: is[1],
            w: is[2],
            ph: ps[1],
            pw: ps[2],
            y0,
            x0,
        };
        let out = kernels::paste(&geom, self.value(image).data(), self.value(patch).data(), mask.data());
        let value = Tensor::new(is, out)?;
        Ok(self.push(
            value,
            Op::Paste {
                image,
                patch,
                mask: mask.data().to_vec(),
                geom,
            },
            &[image, patch],
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let items: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::stack(&items)?;
        Ok(self.push(value, Op::Stack { xs: xs.to_vec() }, xs))
    }

    /// `Σ weight · BCE(sigmoid(x), target)` computed from logits.
    pub fn bce_with_logits(&mut self, x: Var, target: Vec<T>, weight: Vec<T>) -> Result<Var> {
        let n = self.value(x).len();
        if target.len() != n || weight.len() != n {
            return Err(shape_err(
                "bce_with_logits",
                format!("{n} logits, {} targets, {} weights", target.len(), weight.len()),
            ));
        }
        let loss = self
            .value(x)
            .data()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((&z, &t), &w)| w * (kernels::softplus(z) - t * z))
            .sum();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { x, target, weight }, &[x]))
    }

    /// `Σ weight · smooth_l1(x − target)` with transition point `beta`.
    pub fn smooth_l1(&mut self, x: Var, target: Vec<T>, weight: Vec<T>, beta: T) -> Result<Var> {
        let n = self.value(x).len();
        if target.len() != n || weight.len() != n {
            return Err(shape_err(
                "smooth_l1",
                format!("{n} values, {} targets, {} weights", target.len(), weight.len()),
            ));
        }
        if beta <= T::zero() {
            return Err(TensorError::Invalid {
                op: "smooth_l1",
                detail: "beta must be positive".into(),
            });
        }
        let half = T::of(0.5);
        let loss = self
            .value(x)
            .data()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((&v, &t), &w)| {
                let d = (v - t).abs();
                w * if d < beta { half * d * d / beta } else { d - half * beta }
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 {
                x,
                target,
                weight,
                beta,
            },
            &[x],
        ))
    }

    /// Mean over elements of the squared distance outside `[lo, hi]`.
    pub fn range_violation(&mut self, x: Var, lo: T, hi: T) -> Var {
        let v = self.value(x);
        let n = v.len().max(1);
        let s: T = v
            .data()
            .iter()
            .map(|&p| {
                let d = if p < lo {
                    lo - p
                } else if p > hi {
                    p - hi
                } else {
                    T::zero()
                };
                d * d
            })
            .sum();
        self.push(Tensor::scalar(s / T::of(n as f64)), Op::RangeViolation { x, lo, hi }, &[x])
    }

    /// Reverse accumulation from a scalar `root` into all trainable leaves.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rs = self.shape(root);
        if self.value(root).len() != 1 {
            return Err(TensorError::NonScalarRoot { shape: rs.to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                if node.trainable {
                    match &mut node.grad {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                    }
                }
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                geom,
                batch,
                cols,
            } => {
                if let Some(dw) = slot(grads, nodes, *w) {
                    kernels::conv2d_kernel_grad(geom, *batch, g, cols, dw);
                }
                let kernel = nodes[w.0].value.data();
                if let Some(dx) = slot(grads, nodes, *x) {
                    kernels::conv2d_input_grad(geom, *batch, g, kernel, dx);
                }
            }
            Op::ChannelBias { x, b } => {
                let s = nodes[x.0].value.shape();
                let (c, inner) = (s[1], s[2..].iter().product::<usize>());
                if let Some(db) = slot(grads, nodes, *b) {
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        db[i % c] += chunk.iter().copied().sum::<T>();
                    }
                }
                if let Some(dx) = slot(grads, nodes, *x) {
                    add_into(dx, g);
                }
            }
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (batch, inp, outp) = (xs[0], xs[1], nodes[w.0].value.shape()[0]);
                if let Some(db) = slot(grads, nodes, *b) {
                    for row in g.chunks(outp) {
                        add_into(db, row);
                    }
                }
                if let Some(dw) = slot(grads, nodes, *w) {
                    T::gemm(
                        outp,
                        batch,
                        inp,
                        T::one(),
                        g,
                        1,
                        outp as isize,
                        nodes[x.0].value.data(),
                        inp as isize,
                        1,
                        T::one(),
                        dw,
                        inp as isize,
                        1,
                    );
                }
                if let Some(dx) = slot(grads, nodes, *x) {
                    T::gemm(
                        batch,
                        outp,
                        inp,
                        T::one(),
                        g,
                        outp as isize,
                        1,
                        nodes[w.0].value.data(),
                        inp as isize,
                        1,
                        T::one(),
                        dx,
                        inp as isize,
                        1,
                    );
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = nodes[x.0].value.data();
                if let Some(dx) = slot(grads, nodes, *x) {
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if v > T::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Sigmoid { x } => {
                let y = nodes[id].value.data();
                if let Some(dx) = slot(grads, nodes, *x) {
                    for ((d, &gi), &s) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * s * (T::one() - s);
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = slot(grads, nodes, *a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(grads, nodes, *b) {
                    add_into(db, g);
                }
            }
            Op::Sub { a, b } => {
                if let Some(da) = slot(grads, nodes, *a) {
                    add_into(da, g);
                }
                if let Some(db) = slot(grads, nodes, *b) {
                    db.iter_mut().zip(g).for_each(|(d, &gi)| *d -= gi);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(da) = slot(grads, nodes, *a) {
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if let Some(db) = slot(grads, nodes, *b) {
                    for ((d, &gi), &y) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * y;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * *scale);
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean { x } => {
                let n = nodes[x.0].value.len();
                if let Some(dx) = slot(grads, nodes, *x) {
                    let s = g[0] / T::of(n.max(1) as f64);
                    dx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Warp { x, plan, channels } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    plan.apply_adjoint(g, *channels, dx);
                }
            }
            Op::TotalVariation { x } => {
                let v = &nodes[x.0].value;
                let s = v.shape();
                if let Some(dx) = slot(grads, nodes, *x) {
                    kernels::total_variation_grad(v.data(), s[0], s[1], s[2], g[0], dx);
                }
            }
            Op::SliceChannels { x, start } => {
                let s = nodes[x.0].value.shape();
                let len = nodes[id].value.shape()[1];
                let inner: usize = s[2..].iter().product();
                if let Some(dx) = slot(grads, nodes, *x) {
                    for b in 0..s[0] {
                        let base = (b * s[1] + start) * inner;
                        add_into(&mut dx[base..base + len * inner], &g[b * len * inner..(b + 1) * len * inner]);
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    add_into(dx, g);
                }
            }
            Op::Gather { x, idx } => {
                if let Some(dx) = slot(grads, nodes, *x) {
                    for (&i, &gi) in idx.iter().zip(g) {
                        dx[i] += gi;
                    }
                }
            }
            Op::Paste {
                image,
                patch,
                mask,
                geom,
            } => {
                // Two disjoint buffers are needed; take them out of the slot table.
                let di = nodes[image.0].requires_grad.then(|| take_or_zero(grads, nodes, *image));
                let dp = nodes[patch.0].requires_grad.then(|| take_or_zero(grads, nodes, *patch));
                let (mut di, mut dp) = (di, dp);
                kernels::paste_grad(geom, mask, g, di.as_deref_mut(), dp.as_deref_mut());
                if let Some(d) = di {
                    grads[image.0] = Some(d);
                }
                if let Some(d) = dp {
                    if patch == image {
                        add_into(grads[patch.0].as_mut().expect("just stored"), &d);
                    } else {
                        grads[patch.0] = Some(d);
                    }
                }
            }
            Op::Stack { xs } => {
                let mut off = 0;
                for &x in xs {
                    let n = nodes[x.0].value.len();
                    if let Some(dx) = slot(grads, nodes, x) {
                        add_into(dx, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::BceWithLogits { x, target, weight } => {
                let xv = nodes[x.0].value.data();
                if let Some(dx) = slot(grads, nodes, *x) {
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += g[0] * weight[i] * (kernels::sigmoid(xv[i]) - target[i]);
                    }
                }
            }
            Op::SmoothL1 {
                x,
                target,
                weight,
                beta,
            } => {
                let xv = nodes[x.0].value.data();
                if let Some(dx) = slot(grads, nodes, *x) {
                    for (i, d) in dx.iter_mut().enumerate() {
                        let diff = xv[i] - target[i];
                        let dl = if diff.abs() < *beta { diff / *beta } else { diff.signum() };
                        *d += g[0] * weight[i] * dl;
                    }
                }
            }
            Op::RangeViolation { x, lo, hi } => {
                let xv = nodes[x.0].value.data();
                let n = T::of(xv.len().max(1) as f64);
                if let Some(dx) = slot(grads, nodes, *x) {
                    let two = T::of(2.0);
                    for (d, &p) in dx.iter_mut().zip(xv) {
                        if p < *lo {
                            *d += g[0] * two * (p - *lo) / n;
                        } else if p > *hi {
                            *d += g[0] * two * (p - *hi) / n;
                        }
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn take_or_zero<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.len()])
}

/// Gradient buffer of `v`, if it takes part in differentiation.
fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut Vec<T>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
}
