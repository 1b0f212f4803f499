//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in execution order, so node ids are a
//! topological order by construction. [`Tape::backward`] sweeps the nodes in
//! reverse once, accumulating gradients in a fixed order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Average,
    Maximum,
    Minimum,
}

/// Per-channel global reduction of a `[C, H, W]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStat {
    pub kind: StatKind,
    pub values: Vec<f64>,
    /// Flat spatial index (`y * W + x`) of the extremum, first occurrence on ties.
    /// `None` for averages.
    pub arg_index: Option<Vec<usize>>,
}

impl ChannelStat {
    pub fn compute(input: &Tensor, kind: StatKind) -> Result<Self> {
        let (c, h, w) = input.shape3()?;
        if h * w == 0 {
            return Err(Error::shape("global_stat on an empty plane"));
        }
        let mut values = Vec::with_capacity(c);
        let mut args = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = input.channel(ch);
            match kind {
                StatKind::Average => values.push(plane.iter().sum::<f64>() / plane.len() as f64),
                StatKind::Maximum | StatKind::Minimum => {
                    let mut best = 0;
                    for (i, &v) in plane.iter().enumerate() {
                        let better = match kind {
                            StatKind::Maximum => v > plane[best],
                            _ => v < plane[best],
                        };
                        if better {
                            best = i;
                        }
                    }
                    values.push(plane[best]);
                    args.push(best);
                }
            }
        }
        Ok(ChannelStat {
            kind,
            values,
            arg_index: (kind != StatKind::Average).then_some(args),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    PointwiseConv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv3x3 {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    GlobalStat {
        x: NodeId,
        kind: StatKind,
        args: Option<Vec<usize>>,
    },
    // `broadcast`: b is a `[C]` vector spread over the H×W plane of a.
    Binary {
        a: NodeId,
        b: NodeId,
        kind: BinKind,
        broadcast: bool,
    },
    Affine {
        x: NodeId,
        scale: f64,
    },
    Reciprocal {
        x: NodeId,
        eps: f64,
    },
    Tanh {
        x: NodeId,
    },
    Abs {
        x: NodeId,
    },
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Mean {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
    Stretch {
        x: NodeId,
        lo: NodeId,
        hi: NodeId,
    },
    // Per-pixel map of 3 channels to 3 channels; row-major 3x3 jacobian per pixel.
    PixelMap {
        x: NodeId,
        jac: Vec<[f64; 9]>,
    },
    Slice {
        x: NodeId,
        start: usize,
    },
    Concat {
        parts: Vec<NodeId>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::PointwiseConv { x, w, b } | Op::Conv3x3 { x, w, b } => vec![*x, *w, *b],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Stretch { x, lo, hi } => vec![*x, *lo, *hi],
            Op::Concat { parts } => parts.clone(),
            Op::GlobalStat { x, .. }
            | Op::Affine { x, .. }
            | Op::Reciprocal { x, .. }
            | Op::Tanh { x }
            | Op::Abs { x }
            | Op::Clamp { x, .. }
            | Op::Mean { x }
            | Op::Sum { x }
            | Op::PixelMap { x, .. }
            | Op::Slice { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Channel ranges narrower than this are treated as constant by [`Tape::stretch`].
pub const STRETCH_MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// 1x1 convolution: `out[c] = Σ_k w[c,k]·x[k] + b[c]`.
    pub fn pointwise_conv(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (c, h, wd) = xv.shape3()?;
        if !(c == 2 || c == 3) {
            return Err(Error::shape(format!("pointwise_conv: {} channels", c)));
        }
        if self.value(w).dims() != [c, c] || self.value(b).dims() != [c] {
            return Err(Error::shape(format!(
                "pointwise_conv: weight {:?} / bias {:?} for {} channels",
                self.value(w).dims(),
                self.value(b).dims(),
                c
            )));
        }
        let plane = h * wd;
        let (wv, bv) = (self.value(w).data(), self.value(b).data());
        let xd = xv.data();
        let mut out = vec![0.0; c * plane];
        for co in 0..c {
            let dst = &mut out[co * plane..(co + 1) * plane];
            dst.fill(bv[co]);
            for ci in 0..c {
                let k = wv[co * c + ci];
                for (o, &v) in dst.iter_mut().zip(&xd[ci * plane..(ci + 1) * plane]) {
                    *o += k * v;
                }
            }
        }
        let value = Tensor::chw(c, h, wd, out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::PointwiseConv { x, w, b }, rg))
    }

    /// 3x3 cross-correlation, stride 1, zero padding 1, with bias.
    /// `w` is `[Cout, Cin, 3, 3]`; only 3-in/3-out is accepted.
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (c, h, wd) = self.value(x).shape3()?;
        if c != 3 {
            return Err(Error::shape(format!("conv3x3: expected 3 channels, got {}", c)));
        }
        if self.value(w).dims() != [3, 3, 3, 3] || self.value(b).dims() != [3] {
            return Err(Error::shape(format!(
                "conv3x3: weight {:?} / bias {:?}",
                self.value(w).dims(),
                self.value(b).dims()
            )));
        }
        let out = conv3x3_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            c,
            h,
            wd,
        );
        let value = Tensor::chw(3, h, wd, out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Conv3x3 { x, w, b }, rg))
    }

    /// Per-channel global average / maximum / minimum, producing a `[C]` node.
    pub fn global_stat(&mut self, x: NodeId, kind: StatKind) -> Result<NodeId> {
        let stat = ChannelStat::compute(self.value(x), kind)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::vector(stat.values),
            Op::GlobalStat {
                x,
                kind,
                args: stat.arg_index,
            },
            rg,
        ))
    }

    /// Recovers the [`ChannelStat`] recorded by [`Tape::global_stat`].
    pub fn channel_stat(&self, id: NodeId) -> Option<ChannelStat> {
        match &self.nodes[id.0].op {
            Op::GlobalStat { kind, args, .. } => Some(ChannelStat {
                kind: *kind,
                values: self.value(id).data().to_vec(),
                arg_index: args.clone(),
            }),
            _ => None,
        }
    }

    fn binary(&mut self, a: NodeId, b: NodeId, kind: BinKind) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.dims() == bv.dims() {
            false
        } else {
            match (av.dims(), bv.dims()) {
                (&[c, _, _], &[cb]) if c == cb => true,
                _ => {
                    return Err(Error::shape(format!(
                        "elementwise {:?}: {:?} vs {:?}",
                        kind,
                        av.dims(),
                        bv.dims()
                    )))
                }
            }
        };
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let data: Vec<f64> = if broadcast {
            let plane = av.dims()[1] * av.dims()[2];
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv.data()[i / plane]))
                .collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(av.dims().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary { a, b, kind, broadcast }, rg))
    }

    /// `a ⊕ b`; `b` may be a same-shape tensor or a `[C]` per-channel vector.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Sub)
    }

    /// `a ⊗ b`; `b` may be a same-shape tensor or a `[C]` per-channel vector.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinKind::Div)
    }

    /// `scale·x + offset`.
    pub fn affine(&mut self, x: NodeId, scale: f64, offset: f64) -> NodeId {
        let value = self.value(x).map(|v| scale * v + offset);
        let rg = self.rg(&[x]);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    /// `1 / (x + eps)`.
    pub fn reciprocal(&mut self, x: NodeId, eps: f64) -> NodeId {
        let value = self.value(x).map(|v| 1.0 / (v + eps));
        let rg = self.rg(&[x]);
        self.push(value, Op::Reciprocal { x, eps }, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh { x }, rg)
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::abs);
        let rg = self.rg(&[x]);
        self.push(value, Op::Abs { x }, rg)
    }

    /// Clamp to `[lo, hi]`; gradient passes through inside the range, zero outside.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[x]);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Mean of all elements as a `[1, 1, 1]` scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Per-channel min-max normalization `(x - lo) / (hi - lo)` with `lo`, `hi`
    /// given as `[C]` nodes. Channels whose range is below
    /// [`STRETCH_MIN_RANGE`] map to the constant 0.5 with zero gradient.
    pub fn stretch(&mut self, x: NodeId, lo: NodeId, hi: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).shape3()?;
        if self.value(lo).dims() != [c] || self.value(hi).dims() != [c] {
            return Err(Error::shape("stretch: bounds must be [C] vectors"));
        }
        let plane = h * w;
        let (l, u) = (self.value(lo).data(), self.value(hi).data());
        let mut out = Vec::with_capacity(c * plane);
        for ch in 0..c {
            let range = u[ch] - l[ch];
            let src = self.value(x).channel(ch);
            if range < STRETCH_MIN_RANGE {
                out.extend(std::iter::repeat_n(0.5, plane));
            } else {
                out.extend(src.iter().map(|&v| (v - l[ch]) / range));
            }
        }
        let value = Tensor::chw(c, h, w, out)?;
        let rg = self.rg(&[x, lo, hi]);
        Ok(self.push(value, Op::Stretch { x, lo, hi }, rg))
    }

    /// Records a per-pixel 3-channel map whose forward value and jacobians were
    /// computed by the caller.
    pub(crate) fn pixel_map(&mut self, x: NodeId, value: Tensor, jac: Vec<[f64; 9]>) -> NodeId {
        debug_assert_eq!(value.dims(), self.value(x).dims());
        let rg = self.rg(&[x]);
        self.push(value, Op::PixelMap { x, jac }, rg)
    }

    /// Channels `start..start + len` of a rank-3 tensor.
    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(x).shape3()?;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!(
                "slice {}..{} of {} channels",
                start,
                start + len,
                c
            )));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::chw(len, h, w, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// Stacks rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (_, h, w) = self
            .value(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?)
            .shape3()?;
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let (pc, ph, pw) = self.value(p).shape3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape("concat: spatial dims differ"));
            }
            c += pc;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::chw(c, h, w, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Marks every node that `id` depends on (including itself).
    pub fn ancestors(&self, id: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        seen[id.0] = true;
        for i in (0..=id.0).rev() {
            if seen[i] {
                for inp in self.nodes[i].op.inputs() {
                    seen[inp.0] = true;
                }
            }
        }
        seen
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets an entry,
    /// zero-filled if the loss does not depend on it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                lv.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.dims(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.dims()));
            }
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, contrib: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::PointwiseConv { x, w, b } => {
                let xv = self.value(*x);
                let (c, h, wd) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
                let plane = h * wd;
                let wv = self.value(*w).data();
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; c * plane];
                    for co in 0..c {
                        let src = &gd[co * plane..(co + 1) * plane];
                        for ci in 0..c {
                            let k = wv[co * c + ci];
                            for (o, &v) in gx[ci * plane..(ci + 1) * plane].iter_mut().zip(src) {
                                *o += k * v;
                            }
                        }
                    }
                    acc(*x, Tensor::new(xv.dims().to_vec(), gx).unwrap());
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; c * c];
                    for co in 0..c {
                        for ci in 0..c {
                            gw[co * c + ci] = dot(
                                &gd[co * plane..(co + 1) * plane],
                                &xv.data()[ci * plane..(ci + 1) * plane],
                            );
                        }
                    }
                    acc(*w, Tensor::new(vec![c, c], gw).unwrap());
                }
                if self.requires_grad(*b) {
                    acc(*b, channel_sums(gd, c, plane));
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let xv = self.value(*x);
                let (c, h, wd) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
                let (gx, gw) = conv3x3_backward(
                    xv.data(),
                    self.value(*w).data(),
                    gd,
                    c,
                    h,
                    wd,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                );
                if let Some(gx) = gx {
                    acc(*x, Tensor::new(xv.dims().to_vec(), gx).unwrap());
                }
                if let Some(gw) = gw {
                    acc(*w, Tensor::new(vec![3, c, 3, 3], gw).unwrap());
                }
                if self.requires_grad(*b) {
                    acc(*b, channel_sums(gd, 3, h * wd));
                }
            }
            Op::GlobalStat { x, args, .. } => {
                let xv = self.value(*x);
                let (c, h, w) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
                let plane = h * w;
                let mut gx = vec![0.0; c * plane];
                match args {
                    None => {
                        for ch in 0..c {
                            let v = gd[ch] / plane as f64;
                            gx[ch * plane..(ch + 1) * plane].fill(v);
                        }
                    }
                    Some(idx) => {
                        for ch in 0..c {
                            gx[ch * plane + idx[ch]] = gd[ch];
                        }
                    }
                }
                acc(*x, Tensor::new(xv.dims().to_vec(), gx).unwrap());
            }
            Op::Binary { a, b, kind, broadcast } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let plane = if *broadcast {
                    let d = self.value(*a).dims();
                    d[1] * d[2]
                } else {
                    1
                };
                let bidx = |i: usize| if *broadcast { i / plane } else { i };
                if self.requires_grad(*a) {
                    let ga: Vec<f64> = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| match kind {
                            BinKind::Add | BinKind::Sub => gi,
                            BinKind::Mul => gi * bv[bidx(i)],
                            BinKind::Div => gi / bv[bidx(i)],
                        })
                        .collect();
                    acc(*a, Tensor::new(g.dims().to_vec(), ga).unwrap());
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    for (i, &gi) in gd.iter().enumerate() {
                        let j = bidx(i);
                        gb[j] += match kind {
                            BinKind::Add => gi,
                            BinKind::Sub => -gi,
                            BinKind::Mul => gi * av[i],
                            BinKind::Div => -gi * av[i] / (bv[j] * bv[j]),
                        };
                    }
                    acc(*b, Tensor::new(self.value(*b).dims().to_vec(), gb).unwrap());
                }
            }
            Op::Affine { x, scale } => acc(*x, g.map(|v| v * scale)),
            Op::Reciprocal { x, eps } => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| -gi / ((v + eps) * (v + eps)))
                    .collect();
                acc(*x, Tensor::new(g.dims().to_vec(), gx).unwrap());
            }
            Op::Tanh { x: input } => {
                let gx = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gi, &t)| gi * (1.0 - t * t))
                    .collect();
                acc(*input, Tensor::new(g.dims().to_vec(), gx).unwrap());
            }
            Op::Abs { x } => {
                let gx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gi, &v)| {
                        if v > 0.0 {
                            gi
                        } else if v < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*x, Tensor::new(g.dims().to_vec(), gx).unwrap());
            }
            Op::Clamp { x, lo, hi } => {
                let gx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gi, &v)| if v >= *lo && v <= *hi { gi } else { 0.0 })
                    .collect();
                acc(*x, Tensor::new(g.dims().to_vec(), gx).unwrap());
            }
            Op::Mean { x } => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.dims(), gd[0] / xv.len() as f64));
            }
            Op::Sum { x } => acc(*x, Tensor::full(self.value(*x).dims(), gd[0])),
            Op::Stretch { x, lo, hi } => {
                let xv = self.value(*x);
                let (c, h, w) = (xv.dims()[0], xv.dims()[1], xv.dims()[2]);
                let plane = h * w;
                let (l, u) = (self.value(*lo).data(), self.value(*hi).data());
                let mut gx = vec![0.0; c * plane];
                let mut gl = vec![0.0; c];
                let mut gu = vec![0.0; c];
                for ch in 0..c {
                    let range = u[ch] - l[ch];
                    if range < STRETCH_MIN_RANGE {
                        continue;
                    }
                    let inv = 1.0 / range;
                    let inv2 = inv * inv;
                    let src = xv.channel(ch);
                    let gsrc = &gd[ch * plane..(ch + 1) * plane];
                    for i in 0..plane {
                        gx[ch * plane + i] = gsrc[i] * inv;
                        gl[ch] += gsrc[i] * (src[i] - u[ch]) * inv2;
                        gu[ch] -= gsrc[i] * (src[i] - l[ch]) * inv2;
                    }
                }
                acc(*x, Tensor::new(xv.dims().to_vec(), gx).unwrap());
                acc(*lo, Tensor::vector(gl));
                acc(*hi, Tensor::vector(gu));
            }
            Op::PixelMap { x, jac } => {
                let plane = jac.len();
                let mut gx = vec![0.0; 3 * plane];
                for (p, j) in jac.iter().enumerate() {
                    let go = [gd[p], gd[plane + p], gd[2 * plane + p]];
                    for k in 0..3 {
                        gx[k * plane + p] = j[k] * go[0] + j[3 + k] * go[1] + j[6 + k] * go[2];
                    }
                }
                acc(*x, Tensor::new(self.value(*x).dims().to_vec(), gx).unwrap());
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let plane = xv.dims()[1] * xv.dims()[2];
                let mut gx = vec![0.0; xv.len()];
                gx[start * plane..start * plane + gd.len()].copy_from_slice(gd);
                acc(*x, Tensor::new(xv.dims().to_vec(), gx).unwrap());
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.len();
                    acc(
                        p,
                        Tensor::new(pv.dims().to_vec(), gd[offset..offset + n].to_vec()).unwrap(),
                    );
                    offset += n;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn channel_sums(g: &[f64], c: usize, plane: usize) -> Tensor {
    Tensor::vector((0..c).map(|ch| g[ch * plane..(ch + 1) * plane].iter().sum()).collect())
}

/// Valid output range along one axis for kernel offset `d ∈ {-1, 0, 1}`.
fn valid(n: usize, d: isize) -> std::ops::Range<usize> {
    match d {
        -1 => 1..n,
        1 => 0..n.saturating_sub(1),
        _ => 0..n,
    }
}

fn conv3x3_forward(x: &[f64], w: &[f64], b: &[f64], cin: usize, h: usize, wd: usize) -> Vec<f64> {
    let plane = h * wd;
    let mut out = vec![0.0; 3 * plane];
    for co in 0..3 {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(b[co]);
        for ci in 0..cin {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let k = w[((co * cin + ci) * 3 + ky) * 3 + kx];
                    if k == 0.0 {
                        continue;
                    }
                    let xs = valid(wd, dx);
                    for y in valid(h, dy) {
                        let sy = (y as isize + dy) as usize;
                        let drow = &mut dst[y * wd + xs.start..y * wd + xs.end];
                        let s0 = (xs.start as isize + dx) as usize;
                        let srow = &src[sy * wd + s0..sy * wd + s0 + drow.len()];
                        for (o, &v) in drow.iter_mut().zip(srow) {
                            *o += k * v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    cin: usize,
    h: usize,
    wd: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = h * wd;
    let mut gx = need_x.then(|| vec![0.0; cin * plane]);
    let mut gw = need_w.then(|| vec![0.0; 3 * cin * 9]);
    for co in 0..3 {
        let gsrc = &g[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let k = w[widx];
                    let xs = valid(wd, dx);
                    let s0 = (xs.start as isize + dx) as usize;
                    let mut wsum = 0.0;
                    for y in valid(h, dy) {
                        let sy = (y as isize + dy) as usize;
                        let grow = &gsrc[y * wd + xs.start..y * wd + xs.end];
                        let span = sy * wd + s0..sy * wd + s0 + grow.len();
                        if gw.is_some() {
                            wsum += dot(grow, &src[span.clone()]);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[ci * plane..(ci + 1) * plane][span];
                            for (o, &v) in dst.iter_mut().zip(grow) {
                                *o += k * v;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] = wsum;
                    }
                }
            }
        }
    }
    (gx, gw)
}
