//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation computes its value eagerly and
//! records what it needs for the backward pass. The tape is rebuilt on every
//! forward pass, there is no caching. Gradients only flow into nodes that
//! require them, so frozen subgraphs (the pretrained full-reference branch)
//! cost nothing on the way back.

use crate::error::{Error, Result};
use crate::kernels::{col2im_acc, gemm_acc, im2col, transpose, ConvGeom};
use crate::tensor::{Real, Shape, TensorData};

/// Handle to a node on the tape. Only valid for the graph that produced it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    Relu {
        x: NodeId,
    },
    MaxPool2 {
        x: NodeId,
        /// Flat input index of the window maximum, per output element.
        argmax: Vec<u32>,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    AbsDiff {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Sum {
        x: NodeId,
    },
    Dot {
        a: NodeId,
        b: NodeId,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
    },
}

struct Node<T> {
    value: TensorData<T>,
    /// Empty until the backward pass reaches this node.
    grad: Vec<T>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode tape over `(n, c, h, w)` tensors.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Inserts a constant leaf. No gradient is computed for it.
    pub fn leaf(&mut self, value: TensorData<T>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Inserts a leaf that accumulates gradient (parameters, checked inputs).
    pub fn leaf_with_grad(&mut self, value: TensorData<T>) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &TensorData<T> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of `id`, if the backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        let n = &self.nodes[id.0];
        if n.grad.is_empty() {
            None
        } else {
            Some(&n.grad)
        }
    }

    fn push(&mut self, value: TensorData<T>, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: Vec::new(),
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// 2-D convolution: `x (n, c_in, h, w)` with `w (c_out, c_in, k, k)` and
    /// `b (1, c_out, 1, 1)`, square kernel, zero padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        if ws.h != ws.w {
            return Err(Error::InvalidArgument(format!(
                "conv2d: kernel must be square, got {ws}"
            )));
        }
        let k = ws.h;
        if xs.c != ws.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d input/weight",
                lhs: xs,
                rhs: ws,
            });
        }
        if bs != Shape::new(1, ws.n, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "conv2d weight/bias",
                lhs: ws,
                rhs: bs,
            });
        }
        if stride < 1 {
            return Err(Error::InvalidArgument(
                "conv2d: stride must be >= 1".into(),
            ));
        }
        if xs.h + 2 * padding < k || xs.w + 2 * padding < k {
            return Err(Error::NonPositiveConvOutput {
                input: xs,
                kernel: k,
                stride,
                padding,
            });
        }
        let geom = ConvGeom {
            c_in: xs.c,
            h: xs.h,
            w: xs.w,
            k,
            stride,
            padding,
            out_h: (xs.h + 2 * padding - k) / stride + 1,
            out_w: (xs.w + 2 * padding - k) / stride + 1,
        };

        let c_out = ws.n;
        let out_shape = Shape::new(xs.n, c_out, geom.out_h, geom.out_w);
        let mut out = vec![T::ZERO; out_shape.len()];
        let mut cols = vec![T::ZERO; geom.patch_len() * geom.out_len()];
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let in_per = xs.c * xs.h * xs.w;
        let out_per = c_out * geom.out_len();
        for n in 0..xs.n {
            im2col(&xv[n * in_per..(n + 1) * in_per], &geom, &mut cols);
            let y = &mut out[n * out_per..(n + 1) * out_per];
            gemm_acc(c_out, geom.out_len(), geom.patch_len(), wv, &cols, y);
            for co in 0..c_out {
                let bias = bv[co];
                for v in &mut y[co * geom.out_len()..(co + 1) * geom.out_len()] {
                    *v += bias;
                }
            }
        }
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(
            TensorData::from_vec(out_shape, out)?,
            rg,
            Op::Conv2d { x, w, b, geom },
        ))
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let shape = xv.shape();
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let rg = self.requires(x);
        self.push(
            TensorData::from_vec(shape, data).expect("same length"),
            rg,
            Op::Relu { x },
        )
    }

    /// 2x2 max pooling with stride 2. Requires even spatial dims. Gradient is
    /// routed to the first maximum in window scan order.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape();
        if !xs.h.is_multiple_of(2) || !xs.w.is_multiple_of(2) || xs.h == 0 || xs.w == 0 {
            return Err(Error::OddPoolInput(xs));
        }
        let (oh, ow) = (xs.h / 2, xs.w / 2);
        let out_shape = Shape::new(xs.n, xs.c, oh, ow);
        let mut out = Vec::with_capacity(out_shape.len());
        let mut argmax = Vec::with_capacity(out_shape.len());
        let xv = self.value(x).data();
        for nc in 0..xs.n * xs.c {
            let plane = nc * xs.h * xs.w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = plane + (oy * 2) * xs.w + ox * 2;
                    let mut best = xv[best_idx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = plane + (oy * 2 + dy) * xs.w + ox * 2 + dx;
                            if xv[idx] > best {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
        let rg = self.requires(x);
        Ok(self.push(
            TensorData::from_vec(out_shape, out)?,
            rg,
            Op::MaxPool2 { x, argmax },
        ))
    }

    /// Spatial mean per channel: `(n, c, h, w) -> (n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape();
        if xs.h == 0 || xs.w == 0 {
            return Err(Error::InvalidArgument(format!(
                "global_avg_pool: empty spatial dims in {xs}"
            )));
        }
        let hw = xs.h * xs.w;
        let inv = T::from_f64(1.0 / hw as f64);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xs.n * xs.c);
        for nc in 0..xs.n * xs.c {
            let mut acc = T::ZERO;
            for &v in &xv[nc * hw..(nc + 1) * hw] {
                acc += v;
            }
            out.push(acc * inv);
        }
        let rg = self.requires(x);
        Ok(self.push(
            TensorData::from_vec(Shape::vector(xs.n, xs.c), out)?,
            rg,
            Op::GlobalAvgPool { x },
        ))
    }

    /// Fully connected layer `y = x W^T + b` over vector tensors:
    /// `x (n, d_in, 1, 1)`, `w (d_out, d_in, 1, 1)`, `b (1, d_out, 1, 1)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        if !xs.is_vector() {
            return Err(Error::NotAVector {
                op: "linear input",
                shape: xs,
            });
        }
        if !ws.is_vector() && !(ws.h == 1 && ws.w == 1) {
            return Err(Error::NotAVector {
                op: "linear weight",
                shape: ws,
            });
        }
        if ws.c != xs.c {
            return Err(Error::ShapeMismatch {
                op: "linear input/weight",
                lhs: xs,
                rhs: ws,
            });
        }
        let (d_out, d_in) = (ws.n, ws.c);
        if bs != Shape::new(1, d_out, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "linear weight/bias",
                lhs: ws,
                rhs: bs,
            });
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(xs.n * d_out);
        for i in 0..xs.n {
            let row = &xv[i * d_in..(i + 1) * d_in];
            for o in 0..d_out {
                let wrow = &wv[o * d_in..(o + 1) * d_in];
                let mut acc = bv[o];
                for (a, b) in row.iter().zip(wrow) {
                    acc += *a * *b;
                }
                out.push(acc);
            }
        }
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(
            TensorData::from_vec(Shape::vector(xs.n, d_out), out)?,
            rg,
            Op::Linear { x, w, b },
        ))
    }

    /// Elementwise `|a - b|`. The subgradient at `a == b` is zero.
    pub fn abs_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "abs_diff",
                lhs: sa,
                rhs: sb,
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            TensorData::from_vec(sa, data)?,
            rg,
            Op::AbsDiff { a, b },
        ))
    }

    /// Concatenates vector tensors along the feature axis, preserving order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| {
            Error::InvalidArgument("concat: need at least one part".into())
        })?;
        let fs = self.value(first).shape();
        let mut c_total = 0;
        for &p in parts {
            let ps = self.value(p).shape();
            if ps.n != fs.n {
                return Err(Error::BatchMismatch {
                    op: "concat",
                    lhs: fs.n,
                    rhs: ps.n,
                });
            }
            if (ps.h, ps.w) != (fs.h, fs.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: fs,
                    rhs: ps,
                });
            }
            c_total += ps.c;
        }
        let out_shape = Shape::new(fs.n, c_total, fs.h, fs.w);
        let mut out = Vec::with_capacity(out_shape.len());
        for n in 0..fs.n {
            for &p in parts {
                let pv = self.value(p);
                let per = pv.shape().c * fs.h * fs.w;
                out.extend_from_slice(&pv.data()[n * per..(n + 1) * per]);
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            TensorData::from_vec(out_shape, out)?,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let mut acc = T::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let rg = self.requires(x);
        self.push(
            TensorData::from_vec(Shape::scalar(), vec![acc]).expect("scalar"),
            rg,
            Op::Sum { x },
        )
    }

    /// Scalar product of two same-shape tensors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut acc = T::ZERO;
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
            acc += x * y;
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            TensorData::from_vec(Shape::scalar(), vec![acc])?,
            rg,
            Op::Dot { a, b },
        ))
    }

    /// Mean squared error between two same-shape tensors, as a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let sp = self.value(pred).shape();
        let st = self.value(target).shape();
        if sp != st {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: sp,
                rhs: st,
            });
        }
        if sp.is_empty() {
            return Err(Error::LengthMismatch {
                op: "mse",
                lhs: 0,
                rhs: 0,
            });
        }
        let inv = T::from_f64(1.0 / sp.len() as f64);
        let mut acc = T::ZERO;
        for (&p, &t) in self.value(pred).data().iter().zip(self.value(target).data()) {
            let d = p - t;
            acc += d * d;
        }
        acc = acc * inv;
        let rg = self.requires(pred) || self.requires(target);
        Ok(self.push(
            TensorData::from_vec(Shape::scalar(), vec![acc])?,
            rg,
            Op::Mse { pred, target },
        ))
    }

    /// Hash of the activation pattern of this graph: ReLU sign masks,
    /// max-pool argmax choices and abs-difference signs, in tape order. Two
    /// evaluations of the same expression lie on the same smooth piece of
    /// the function iff their fingerprints agree, which is what makes a
    /// central difference across them meaningful.
    pub fn kink_fingerprint(&self) -> u64 {
        // FNV-1a over the switch decisions.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    let mut acc: u8 = 0;
                    let mut n = 0;
                    for &v in self.nodes[x.0].value.data() {
                        acc = (acc << 1) | u8::from(v > T::ZERO);
                        n += 1;
                        if n == 8 {
                            eat(acc);
                            acc = 0;
                            n = 0;
                        }
                    }
                    if n > 0 {
                        eat(acc);
                    }
                }
                Op::MaxPool2 { argmax, .. } => {
                    for &i in argmax {
                        eat(i as u8);
                        eat((i >> 8) as u8);
                        eat((i >> 16) as u8);
                        eat((i >> 24) as u8);
                    }
                }
                Op::AbsDiff { a, b } => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let mut acc: u8 = 0;
                    let mut n = 0;
                    for (&x, &y) in av.iter().zip(bv) {
                        let sign: u8 = if x > y {
                            2
                        } else if x < y {
                            1
                        } else {
                            0
                        };
                        acc = (acc << 2) | sign;
                        n += 1;
                        if n == 4 {
                            eat(acc);
                            acc = 0;
                            n = 0;
                        }
                    }
                    if n > 0 {
                        eat(acc);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Runs the backward pass from a scalar output node.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        let os = self.value(out).shape();
        if os.len() != 1 {
            return Err(Error::NonScalarOutput(os));
        }
        if !self.requires(out) {
            return Err(Error::InvalidArgument(
                "backward: output does not depend on any gradient-tracked input".into(),
            ));
        }
        self.nodes[out.0].grad = vec![T::ONE];
        for id in (0..=out.0).rev() {
            if self.nodes[id].requires_grad && !self.nodes[id].grad.is_empty() {
                self.backward_step(id)?;
            }
        }
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, delta: &[T]) {
        let node = &mut self.nodes[id.0];
        if node.grad.is_empty() {
            node.grad = vec![T::ZERO; node.value.data().len()];
        }
        for (g, d) in node.grad.iter_mut().zip(delta) {
            *g += *d;
        }
    }

    fn backward_step(&mut self, id: usize) -> Result<()> {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => self.backward_conv2d(id, x, w, b, &geom),
            Op::Relu { x } => {
                if self.requires(x) {
                    let delta: Vec<T> = {
                        let dy = &self.nodes[id].grad;
                        let xv = self.nodes[x.0].value.data();
                        xv.iter()
                            .zip(dy)
                            .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
                            .collect()
                    };
                    self.add_grad(x, &delta);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if self.requires(x) {
                    let mut delta = vec![T::ZERO; self.nodes[x.0].value.data().len()];
                    let dy = &self.nodes[id].grad;
                    for (out_i, &src) in argmax.iter().enumerate() {
                        delta[src as usize] += dy[out_i];
                    }
                    self.add_grad(x, &delta);
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.requires(x) {
                    let xs = self.nodes[x.0].value.shape();
                    let hw = xs.h * xs.w;
                    let inv = T::from_f64(1.0 / hw as f64);
                    let mut delta = vec![T::ZERO; xs.len()];
                    let dy = &self.nodes[id].grad;
                    for nc in 0..xs.n * xs.c {
                        let g = dy[nc] * inv;
                        for v in &mut delta[nc * hw..(nc + 1) * hw] {
                            *v += g;
                        }
                    }
                    self.add_grad(x, &delta);
                }
            }
            Op::Linear { x, w, b } => self.backward_linear(id, x, w, b),
            Op::AbsDiff { a, b } => {
                let need_a = self.requires(a);
                let need_b = self.requires(b);
                if need_a || need_b {
                    let signed: Vec<T> = {
                        let dy = &self.nodes[id].grad;
                        let av = self.nodes[a.0].value.data();
                        let bv = self.nodes[b.0].value.data();
                        av.iter()
                            .zip(bv)
                            .zip(dy)
                            .map(|((&x, &y), &g)| {
                                if x > y {
                                    g
                                } else if x < y {
                                    -g
                                } else {
                                    T::ZERO
                                }
                            })
                            .collect()
                    };
                    if need_a {
                        self.add_grad(a, &signed);
                    }
                    if need_b {
                        let neg: Vec<T> = signed.iter().map(|&v| -v).collect();
                        self.add_grad(b, &neg);
                    }
                }
            }
            Op::Concat { parts } => {
                let out_shape = self.nodes[id].value.shape();
                let hw = out_shape.h * out_shape.w;
                let mut offset_c = 0;
                for &p in &parts {
                    let ps = self.nodes[p.0].value.shape();
                    if self.requires(p) {
                        let mut delta = vec![T::ZERO; ps.len()];
                        let dy = &self.nodes[id].grad;
                        let per_out = out_shape.c * hw;
                        let per_in = ps.c * hw;
                        for n in 0..out_shape.n {
                            let src = &dy[n * per_out + offset_c * hw
                                ..n * per_out + offset_c * hw + per_in];
                            delta[n * per_in..(n + 1) * per_in].copy_from_slice(src);
                        }
                        self.add_grad(p, &delta);
                    }
                    offset_c += ps.c;
                }
            }
            Op::Sum { x } => {
                if self.requires(x) {
                    let g = self.nodes[id].grad[0];
                    let delta = vec![g; self.nodes[x.0].value.data().len()];
                    self.add_grad(x, &delta);
                }
            }
            Op::Dot { a, b } => {
                let g = self.nodes[id].grad[0];
                if self.requires(a) {
                    let delta: Vec<T> =
                        self.nodes[b.0].value.data().iter().map(|&v| v * g).collect();
                    self.add_grad(a, &delta);
                }
                if self.requires(b) {
                    let delta: Vec<T> =
                        self.nodes[a.0].value.data().iter().map(|&v| v * g).collect();
                    self.add_grad(b, &delta);
                }
            }
            Op::Mse { pred, target } => {
                let need_p = self.requires(pred);
                let need_t = self.requires(target);
                if need_p || need_t {
                    let g = self.nodes[id].grad[0];
                    let n = self.nodes[pred.0].value.data().len();
                    let scale = T::from_f64(2.0 / n as f64) * g;
                    let dpred: Vec<T> = {
                        let pv = self.nodes[pred.0].value.data();
                        let tv = self.nodes[target.0].value.data();
                        pv.iter().zip(tv).map(|(&p, &t)| (p - t) * scale).collect()
                    };
                    if need_p {
                        self.add_grad(pred, &dpred);
                    }
                    if need_t {
                        let neg: Vec<T> = dpred.iter().map(|&v| -v).collect();
                        self.add_grad(target, &neg);
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_conv2d(&mut self, id: usize, x: NodeId, w: NodeId, b: NodeId, geom: &ConvGeom) {
        let need_x = self.requires(x);
        let need_w = self.requires(w);
        let need_b = self.requires(b);
        if !(need_x || need_w || need_b) {
            return;
        }
        let xs = self.nodes[x.0].value.shape();
        let ws = self.nodes[w.0].value.shape();
        let c_out = ws.n;
        let patch = geom.patch_len();
        let out_hw = geom.out_len();
        let in_per = xs.c * xs.h * xs.w;
        let out_per = c_out * out_hw;

        let mut dx = if need_x {
            vec![T::ZERO; xs.len()]
        } else {
            Vec::new()
        };
        let mut dw = if need_w {
            vec![T::ZERO; ws.len()]
        } else {
            Vec::new()
        };
        let mut db = if need_b {
            vec![T::ZERO; c_out]
        } else {
            Vec::new()
        };

        {
            let dy_all = &self.nodes[id].grad;
            let xv = self.nodes[x.0].value.data();
            let wv = self.nodes[w.0].value.data();

            let mut cols = vec![T::ZERO; patch * out_hw];
            let mut cols_t = if need_w {
                vec![T::ZERO; patch * out_hw]
            } else {
                Vec::new()
            };
            let mut w_t = if need_x {
                let mut t = vec![T::ZERO; wv.len()];
                transpose(c_out, patch, wv, &mut t);
                t
            } else {
                Vec::new()
            };
            let mut dcols = if need_x {
                vec![T::ZERO; patch * out_hw]
            } else {
                Vec::new()
            };

            for n in 0..xs.n {
                let dy = &dy_all[n * out_per..(n + 1) * out_per];
                if need_w || need_x {
                    im2col(&xv[n * in_per..(n + 1) * in_per], geom, &mut cols);
                }
                if need_w {
                    transpose(patch, out_hw, &cols, &mut cols_t);
                    gemm_acc(c_out, patch, out_hw, dy, &cols_t, &mut dw);
                }
                if need_b {
                    for co in 0..c_out {
                        let mut acc = T::ZERO;
                        for &v in &dy[co * out_hw..(co + 1) * out_hw] {
                            acc += v;
                        }
                        db[co] += acc;
                    }
                }
                if need_x {
                    for v in dcols.iter_mut() {
                        *v = T::ZERO;
                    }
                    gemm_acc(patch, out_hw, c_out, &w_t, dy, &mut dcols);
                    col2im_acc(&dcols, geom, &mut dx[n * in_per..(n + 1) * in_per]);
                }
            }
            w_t.clear();
        }

        if need_x {
            self.add_grad(x, &dx);
        }
        if need_w {
            self.add_grad(w, &dw);
        }
        if need_b {
            self.add_grad(b, &db);
        }
    }

    fn backward_linear(&mut self, id: usize, x: NodeId, w: NodeId, b: NodeId) {
        let need_x = self.requires(x);
        let need_w = self.requires(w);
        let need_b = self.requires(b);
        if !(need_x || need_w || need_b) {
            return;
        }
        let xs = self.nodes[x.0].value.shape();
        let ws = self.nodes[w.0].value.shape();
        let (n, d_in, d_out) = (xs.n, ws.c, ws.n);

        let mut dx = if need_x {
            vec![T::ZERO; xs.len()]
        } else {
            Vec::new()
        };
        let mut dw = if need_w {
            vec![T::ZERO; ws.len()]
        } else {
            Vec::new()
        };
        let mut db = if need_b {
            vec![T::ZERO; d_out]
        } else {
            Vec::new()
        };

        {
            let dy = &self.nodes[id].grad;
            let xv = self.nodes[x.0].value.data();
            let wv = self.nodes[w.0].value.data();
            for i in 0..n {
                let dyrow = &dy[i * d_out..(i + 1) * d_out];
                for o in 0..d_out {
                    let g = dyrow[o];
                    if need_x {
                        let wrow = &wv[o * d_in..(o + 1) * d_in];
                        let dxrow = &mut dx[i * d_in..(i + 1) * d_in];
                        for (dv, &wv) in dxrow.iter_mut().zip(wrow) {
                            *dv += g * wv;
                        }
                    }
                    if need_w {
                        let xrow = &xv[i * d_in..(i + 1) * d_in];
                        let dwrow = &mut dw[o * d_in..(o + 1) * d_in];
                        for (dv, &x) in dwrow.iter_mut().zip(xrow) {
                            *dv += g * x;
                        }
                    }
                    if need_b {
                        db[o] += g;
                    }
                }
            }
        }

        if need_x {
            self.add_grad(x, &dx);
        }
        if need_w {
            self.add_grad(w, &dw);
        }
        if need_b {
            self.add_grad(b, &db);
        }
    }
}
