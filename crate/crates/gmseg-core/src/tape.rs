//! Wengert tape: reverse-mode differentiation via operation recording.
//!
//! Every forward op appends one node (op kind, input ids, output value) to a
//! [`Tape`]. Records are in topological order by construction, so the
//! backward pass is a single reverse sweep that visits each node once.
//! `backward` never mutates forward values; replaying the forward yields
//! bit-identical results.
//!
//! One training step builds and consumes one tape on one thread of control.
//! Parameters bind into a tape by name (deduplicated, so weight sharing
//! accumulates gradients naturally), and the caller scatters gradients back
//! through [`Tape::param_binds`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
// f64 math via num-traits so the crate builds without std (libm backs it)
#[allow(unused_imports)]
use num_traits::Float as _;
use crate::tensor::{numel_of, shape_str, Parameter, Real, Tensor};

/// Handle to one tape node. Only meaningful for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    Conv2d { stride: usize, pad: usize },
    BiasAdd,
    Matmul,
    Transpose,
    Softmax { axis: usize },
    Sigmoid,
    Relu,
    Add,
    Hadamard,
    Affine { mul: T },
    ConcatChannels,
    AvgPool2,
    UpsampleBilinear2,
    Reshape,
    Cosine,
    MulScalar,
    StackScalars,
    IndexScalar { idx: usize },
    Sum,
    CrossEntropy { floor: T, target: Vec<u8> },
}

#[derive(Debug)]
struct Node<T: Real> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
}

/// Gradients produced by one backward sweep, indexed by [`NodeId`].
pub struct GradStore<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> GradStore<T> {
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    binds: Vec<(String, NodeId)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            binds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Parameter bindings recorded by [`Tape::param`], in bind order.
    pub fn param_binds(&self) -> &[(String, NodeId)] {
        &self.binds
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Usage(format!("node id {} not on this tape", id.0)))
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, Vec::new(), t)
    }

    /// Binds a named parameter as a leaf. Repeated binds of the same name
    /// return the first node, so shared weights accumulate gradients.
    pub fn param(&mut self, p: &Parameter<T>) -> NodeId {
        if let Some((_, id)) = self.binds.iter().find(|(n, _)| n == &p.name) {
            return *id;
        }
        let id = self.leaf(p.value.clone());
        self.binds.push((p.name.clone(), id));
        id
    }

    // ---- forward ops -----------------------------------------------------

    /// Cross-correlation over `[h, w, cin]` with kernel `[k, k, cin, cout]`.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let kv = &self.node(kernel)?.value;
        let (h, w, cin) = xv.dims3()?;
        let ks = kv.shape();
        if ks.len() != 4 || ks[0] != ks[1] {
            return Err(Error::Shape(format!(
                "conv2d kernel must be [k, k, cin, cout], got {}",
                shape_str(ks)
            )));
        }
        let (k, kcin, cout) = (ks[0], ks[2], ks[3]);
        if k != 1 && k != 3 {
            return Err(Error::Usage(format!("conv2d supports k in {{1, 3}}, got {k}")));
        }
        if kcin != cin {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input {} has {cin} channels, kernel {} expects {kcin}",
                shape_str(xv.shape()),
                shape_str(ks)
            )));
        }
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Shape(format!(
                "conv2d: input {} too small for k={k} pad={pad} stride={stride}",
                shape_str(xv.shape())
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![T::zero(); oh * ow * cout];
        let xd = xv.data();
        let kd = kv.data();
        for oy in 0..oh {
            for ox in 0..ow {
                let obase = (oy * ow + ox) * cout;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = (iy as usize * w + ix as usize) * cin;
                        let kbase = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let a = xd[ibase + ci];
                            let krow = kbase + ci * cout;
                            for co in 0..cout {
                                out[obase + co] = out[obase + co] + a * kd[krow + co];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv2d { stride, pad },
            vec![x, kernel],
            Tensor::from_parts(vec![oh, ow, cout], out),
        ))
    }

    /// Per-channel bias over `[h, w, c]` + `[c]`.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let bv = &self.node(bias)?.value;
        let (_, _, c) = xv.dims3()?;
        if bv.shape() != [c] {
            return Err(Error::Shape(format!(
                "bias_add: input {} needs bias [{c}], got {}",
                shape_str(xv.shape()),
                shape_str(bv.shape())
            )));
        }
        let bd = bv.data();
        let data: Vec<T> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % c])
            .collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Op::BiasAdd, vec![x, bias], Tensor::from_parts(shape, data)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = &self.node(a)?.value;
        let bv = &self.node(b)?.value;
        let (p, q) = av.dims2()?;
        let (q2, r) = bv.dims2()?;
        if q != q2 {
            return Err(Error::Shape(format!(
                "matmul inner extents disagree: {} x {}",
                shape_str(av.shape()),
                shape_str(bv.shape())
            )));
        }
        let ad = av.data();
        let bd = bv.data();
        let mut out = vec![T::zero(); p * r];
        for i in 0..p {
            for kk in 0..q {
                let aik = ad[i * q + kk];
                let brow = kk * r;
                let orow = i * r;
                for j in 0..r {
                    out[orow + j] = out[orow + j] + aik * bd[brow + j];
                }
            }
        }
        Ok(self.push(Op::Matmul, vec![a, b], Tensor::from_parts(vec![p, r], out)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.node(a)?.value;
        let (r, c) = av.dims2()?;
        let ad = av.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ad[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose, vec![a], Tensor::from_parts(vec![c, r], out)))
    }

    /// Softmax along `axis`; subtracts the per-slice max before exponentiation.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for {}",
                shape_str(&shape)
            )));
        }
        let size = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xd = xv.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * size * inner + i;
                let mut mx = T::neg_infinity();
                for s in 0..size {
                    let v = xd[base + s * inner];
                    if v > mx {
                        mx = v;
                    }
                }
                let mut denom = T::zero();
                for s in 0..size {
                    let e = (xd[base + s * inner] - mx).exp();
                    out[base + s * inner] = e;
                    denom = denom + e;
                }
                for s in 0..size {
                    out[base + s * inner] = out[base + s * inner] / denom;
                }
            }
        }
        Ok(self.push(Op::Softmax { axis }, vec![x], Tensor::from_parts(shape, out)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let shape = xv.shape().to_vec();
        let data: Vec<T> = xv
            .data()
            .iter()
            .map(|&v| {
                // Branch keeps exp() bounded for both signs.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        Ok(self.push(Op::Sigmoid, vec![x], Tensor::from_parts(shape, data)))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let shape = xv.shape().to_vec();
        let data: Vec<T> = xv
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        Ok(self.push(Op::Relu, vec![x], Tensor::from_parts(shape, data)))
    }

    fn elementwise_pair(&self, a: NodeId, b: NodeId, op_name: &str) -> Result<()> {
        let av = &self.node(a)?.value;
        let bv = &self.node(b)?.value;
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "{op_name}: operand shapes differ: {} vs {}",
                shape_str(av.shape()),
                shape_str(bv.shape())
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "add")?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let shape = av.shape().to_vec();
        let data: Vec<T> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(Op::Add, vec![a, b], Tensor::from_parts(shape, data)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "hadamard")?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let shape = av.shape().to_vec();
        let data: Vec<T> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(Op::Hadamard, vec![a, b], Tensor::from_parts(shape, data)))
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, x: NodeId, mul: T, add: T) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let shape = xv.shape().to_vec();
        let data: Vec<T> = xv.data().iter().map(|&v| mul * v + add).collect();
        Ok(self.push(Op::Affine { mul }, vec![x], Tensor::from_parts(shape, data)))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        self.affine(x, c, T::zero())
    }

    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -T::one(), T::one())
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = &self.node(a)?.value;
        let bv = &self.node(b)?.value;
        let (h, w, ca) = av.dims3()?;
        let (h2, w2, cb) = bv.dims3()?;
        if (h, w) != (h2, w2) {
            return Err(Error::Shape(format!(
                "concat_channels: spatial dims differ: {} vs {}",
                shape_str(av.shape()),
                shape_str(bv.shape())
            )));
        }
        let mut data = Vec::with_capacity(h * w * (ca + cb));
        let ad = av.data();
        let bd = bv.data();
        for p in 0..h * w {
            data.extend_from_slice(&ad[p * ca..(p + 1) * ca]);
            data.extend_from_slice(&bd[p * cb..(p + 1) * cb]);
        }
        Ok(self.push(
            Op::ConcatChannels,
            vec![a, b],
            Tensor::from_parts(vec![h, w, ca + cb], data),
        ))
    }

    /// 2x2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let (h, w, c) = xv.dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "avg_pool2 needs even spatial dims, got {}",
                shape_str(xv.shape())
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = xv.data();
        let quarter = T::from_f64(0.25);
        let mut out = vec![T::zero(); oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let obase = (oy * ow + ox) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let ibase = ((2 * oy + dy) * w + 2 * ox + dx) * c;
                    for ch in 0..c {
                        out[obase + ch] = out[obase + ch] + xd[ibase + ch] * quarter;
                    }
                }
            }
        }
        Ok(self.push(Op::AvgPool2, vec![x], Tensor::from_parts(vec![oh, ow, c], out)))
    }

    /// 2x bilinear upsampling with half-pixel alignment and edge clamping.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let (h, w, c) = xv.dims3()?;
        let (oh, ow) = (2 * h, 2 * w);
        let ytab = bilinear_taps::<T>(h);
        let xtab = bilinear_taps::<T>(w);
        let xd = xv.data();
        let mut out = vec![T::zero(); oh * ow * c];
        for oy in 0..oh {
            let (y0, y1, wy) = ytab[oy];
            let ry = T::one() - wy;
            for ox in 0..ow {
                let (x0, x1, wx) = xtab[ox];
                let rx = T::one() - wx;
                let obase = (oy * ow + ox) * c;
                let b00 = (y0 * w + x0) * c;
                let b01 = (y0 * w + x1) * c;
                let b10 = (y1 * w + x0) * c;
                let b11 = (y1 * w + x1) * c;
                for ch in 0..c {
                    out[obase + ch] = ry * (rx * xd[b00 + ch] + wx * xd[b01 + ch])
                        + wy * (rx * xd[b10 + ch] + wx * xd[b11 + ch]);
                }
            }
        }
        Ok(self.push(
            Op::UpsampleBilinear2,
            vec![x],
            Tensor::from_parts(vec![oh, ow, c], out),
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        if numel_of(shape) != xv.numel() {
            return Err(Error::Shape(format!(
                "reshape {} -> {} changes element count",
                shape_str(xv.shape()),
                shape_str(shape)
            )));
        }
        let data = xv.data().to_vec();
        Ok(self.push(Op::Reshape, vec![x], Tensor::from_parts(shape.to_vec(), data)))
    }

    /// Whole-tensor cosine similarity, clamped to [-1, 1]. A zero-norm
    /// operand yields similarity 0 (and zero gradient), so degenerate
    /// embeddings cannot poison downstream read weights.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "cosine_similarity")?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (dot, na, nb) = dot_and_norms(av.data(), bv.data());
        let value = if na == T::zero() || nb == T::zero() {
            T::zero()
        } else {
            let s = dot / (na * nb);
            s.max(-T::one()).min(T::one())
        };
        Ok(self.push(Op::Cosine, vec![a, b], Tensor::scalar(value)))
    }

    /// Scalar node times tensor node.
    pub fn mul_scalar(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        let sv = &self.node(s)?.value;
        let xv = &self.node(x)?.value;
        let sc = sv.item().map_err(|_| {
            Error::Shape(format!(
                "mul_scalar: first operand must be scalar, got {}",
                shape_str(sv.shape())
            ))
        })?;
        let shape = xv.shape().to_vec();
        let data: Vec<T> = xv.data().iter().map(|&v| sc * v).collect();
        Ok(self.push(Op::MulScalar, vec![s, x], Tensor::from_parts(shape, data)))
    }

    /// Stacks scalar nodes into a vector `[n]`.
    pub fn stack_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Usage("stack_scalars: empty input list".into()));
        }
        let mut data = Vec::with_capacity(xs.len());
        for &id in xs {
            data.push(self.node(id)?.value.item()?);
        }
        let n = data.len();
        Ok(self.push(
            Op::StackScalars,
            xs.to_vec(),
            Tensor::from_parts(vec![n], data),
        ))
    }

    pub fn index_scalar(&mut self, v: NodeId, idx: usize) -> Result<NodeId> {
        let vv = &self.node(v)?.value;
        if vv.shape().len() != 1 || idx >= vv.shape()[0] {
            return Err(Error::Usage(format!(
                "index_scalar: index {idx} invalid for {}",
                shape_str(vv.shape())
            )));
        }
        let value = vv.data()[idx];
        Ok(self.push(Op::IndexScalar { idx }, vec![v], Tensor::scalar(value)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.node(x)?.value;
        let mut acc = T::zero();
        for &v in xv.data() {
            acc = acc + v;
        }
        Ok(self.push(Op::Sum, vec![x], Tensor::scalar(acc)))
    }

    /// Mean over pixels of `-ln(max(probs[y, x, target], floor))` for
    /// per-pixel 2-channel probabilities and a binary target mask.
    pub fn cross_entropy(&mut self, probs: NodeId, target: &[u8]) -> Result<NodeId> {
        let pv = &self.node(probs)?.value;
        let (h, w, c) = pv.dims3()?;
        if c != 2 {
            return Err(Error::Shape(format!(
                "cross_entropy wants [h, w, 2] probabilities, got {}",
                shape_str(pv.shape())
            )));
        }
        if target.len() != h * w {
            return Err(Error::Shape(format!(
                "cross_entropy: target has {} pixels, probabilities {}",
                target.len(),
                h * w
            )));
        }
        if let Some(bad) = target.iter().find(|&&t| t > 1) {
            return Err(Error::Data(format!(
                "cross_entropy: target value {bad} outside {{0, 1}}"
            )));
        }
        let floor = T::from_f64(PROB_FLOOR);
        let pd = pv.data();
        let mut acc = T::zero();
        for (px, &t) in target.iter().enumerate() {
            let p = pd[px * 2 + t as usize].max(floor);
            acc = acc - p.ln();
        }
        let n = T::from_f64((h * w) as f64);
        Ok(self.push(
            Op::CrossEntropy {
                floor,
                target: target.to_vec(),
            },
            vec![probs],
            Tensor::scalar(acc / n),
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns per-node gradients; the
    /// tape itself is untouched.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore<T>> {
        let ln = self.node(loss)?;
        if ln.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {}",
                shape_str(ln.value.shape())
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut store: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            let shape = self.nodes[id].value.shape().to_vec();
            store[id] = Some(Tensor::from_parts(shape, g));
        }
        Ok(GradStore { grads: store })
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let inp = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { stride, pad } => {
                let xv = &self.nodes[inp[0].0].value;
                let kv = &self.nodes[inp[1].0].value;
                let (h, w, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (k, cout) = (kv.shape()[0], kv.shape()[3]);
                let (oh, ow) = (node.value.shape()[0], node.value.shape()[1]);
                let xd = xv.data();
                let kd = kv.data();
                let dx = slot(grads, inp[0].0, xd.len());
                let mut dk_local = vec![T::zero(); kd.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let obase = (oy * ow + ox) * cout;
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - *pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - *pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let ibase = (iy as usize * w + ix as usize) * cin;
                                let kbase = (ky * k + kx) * cin * cout;
                                for ci in 0..cin {
                                    let krow = kbase + ci * cout;
                                    let a = xd[ibase + ci];
                                    let mut acc = T::zero();
                                    for co in 0..cout {
                                        let go = g[obase + co];
                                        acc = acc + go * kd[krow + co];
                                        dk_local[krow + co] = dk_local[krow + co] + a * go;
                                    }
                                    dx[ibase + ci] = dx[ibase + ci] + acc;
                                }
                            }
                        }
                    }
                }
                let dk = slot(grads, inp[1].0, kd.len());
                for (a, b) in dk.iter_mut().zip(&dk_local) {
                    *a = *a + *b;
                }
            }
            Op::BiasAdd => {
                let xn = self.nodes[inp[0].0].value.numel();
                let c = self.nodes[inp[1].0].value.numel();
                let dx = slot(grads, inp[0].0, xn);
                for (a, b) in dx.iter_mut().zip(g) {
                    *a = *a + *b;
                }
                let db = slot(grads, inp[1].0, c);
                for (i, &gv) in g.iter().enumerate() {
                    db[i % c] = db[i % c] + gv;
                }
            }
            Op::Matmul => {
                let av = &self.nodes[inp[0].0].value;
                let bv = &self.nodes[inp[1].0].value;
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let r = bv.shape()[1];
                let ad = av.data();
                let bd = bv.data();
                {
                    // dA = g . B^T
                    let da = slot(grads, inp[0].0, ad.len());
                    for i in 0..p {
                        for kk in 0..q {
                            let mut acc = T::zero();
                            let grow = i * r;
                            let brow = kk * r;
                            for j in 0..r {
                                acc = acc + g[grow + j] * bd[brow + j];
                            }
                            da[i * q + kk] = da[i * q + kk] + acc;
                        }
                    }
                }
                {
                    // dB = A^T . g
                    let db = slot(grads, inp[1].0, bd.len());
                    for kk in 0..q {
                        for i in 0..p {
                            let aik = ad[i * q + kk];
                            let grow = i * r;
                            let brow = kk * r;
                            for j in 0..r {
                                db[brow + j] = db[brow + j] + aik * g[grow + j];
                            }
                        }
                    }
                }
            }
            Op::Transpose => {
                let av = &self.nodes[inp[0].0].value;
                let (r, c) = (av.shape()[0], av.shape()[1]);
                let da = slot(grads, inp[0].0, r * c);
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = da[i * c + j] + g[j * r + i];
                    }
                }
            }
            Op::Softmax { axis } => {
                let yv = &node.value;
                let shape = yv.shape();
                let size = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let yd = yv.data();
                let dx = slot(grads, inp[0].0, yd.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * size * inner + i;
                        let mut dot = T::zero();
                        for s in 0..size {
                            let idx = base + s * inner;
                            dot = dot + g[idx] * yd[idx];
                        }
                        for s in 0..size {
                            let idx = base + s * inner;
                            dx[idx] = dx[idx] + yd[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
            Op::Sigmoid => {
                let yd = node.value.data();
                let dx = slot(grads, inp[0].0, yd.len());
                for i in 0..yd.len() {
                    dx[i] = dx[i] + g[i] * yd[i] * (T::one() - yd[i]);
                }
            }
            Op::Relu => {
                let yd = node.value.data();
                let dx = slot(grads, inp[0].0, yd.len());
                for i in 0..yd.len() {
                    if yd[i] > T::zero() {
                        dx[i] = dx[i] + g[i];
                    }
                }
            }
            Op::Add => {
                for side in 0..2 {
                    let dx = slot(grads, inp[side].0, g.len());
                    for (a, b) in dx.iter_mut().zip(g) {
                        *a = *a + *b;
                    }
                }
            }
            Op::Hadamard => {
                for side in 0..2 {
                    let other = self.nodes[inp[1 - side].0].value.data().to_vec();
                    let dx = slot(grads, inp[side].0, g.len());
                    for i in 0..g.len() {
                        dx[i] = dx[i] + g[i] * other[i];
                    }
                }
            }
            Op::Affine { mul } => {
                let dx = slot(grads, inp[0].0, g.len());
                for i in 0..g.len() {
                    dx[i] = dx[i] + *mul * g[i];
                }
            }
            Op::ConcatChannels => {
                let ca = self.nodes[inp[0].0].value.shape()[2];
                let cb = self.nodes[inp[1].0].value.shape()[2];
                let pixels = self.nodes[inp[0].0].value.numel() / ca;
                {
                    let da = slot(grads, inp[0].0, pixels * ca);
                    for p in 0..pixels {
                        for ch in 0..ca {
                            da[p * ca + ch] = da[p * ca + ch] + g[p * (ca + cb) + ch];
                        }
                    }
                }
                {
                    let db = slot(grads, inp[1].0, pixels * cb);
                    for p in 0..pixels {
                        for ch in 0..cb {
                            db[p * cb + ch] = db[p * cb + ch] + g[p * (ca + cb) + ca + ch];
                        }
                    }
                }
            }
            Op::AvgPool2 => {
                let xv = &self.nodes[inp[0].0].value;
                let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let dx = slot(grads, inp[0].0, h * w * c);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let obase = (oy * ow + ox) * c;
                        for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let ibase = ((2 * oy + dy) * w + 2 * ox + dxo) * c;
                            for ch in 0..c {
                                dx[ibase + ch] = dx[ibase + ch] + g[obase + ch] * quarter;
                            }
                        }
                    }
                }
            }
            Op::UpsampleBilinear2 => {
                let xv = &self.nodes[inp[0].0].value;
                let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (oh, ow) = (2 * h, 2 * w);
                let ytab = bilinear_taps::<T>(h);
                let xtab = bilinear_taps::<T>(w);
                let dx = slot(grads, inp[0].0, h * w * c);
                for oy in 0..oh {
                    let (y0, y1, wy) = ytab[oy];
                    let ry = T::one() - wy;
                    for ox in 0..ow {
                        let (x0, x1, wx) = xtab[ox];
                        let rx = T::one() - wx;
                        let obase = (oy * ow + ox) * c;
                        for ch in 0..c {
                            let gv = g[obase + ch];
                            dx[(y0 * w + x0) * c + ch] = dx[(y0 * w + x0) * c + ch] + ry * rx * gv;
                            dx[(y0 * w + x1) * c + ch] = dx[(y0 * w + x1) * c + ch] + ry * wx * gv;
                            dx[(y1 * w + x0) * c + ch] = dx[(y1 * w + x0) * c + ch] + wy * rx * gv;
                            dx[(y1 * w + x1) * c + ch] = dx[(y1 * w + x1) * c + ch] + wy * wx * gv;
                        }
                    }
                }
            }
            Op::Reshape => {
                let dx = slot(grads, inp[0].0, g.len());
                for (a, b) in dx.iter_mut().zip(g) {
                    *a = *a + *b;
                }
            }
            Op::Cosine => {
                let av = &self.nodes[inp[0].0].value;
                let bv = &self.nodes[inp[1].0].value;
                let (dot, na, nb) = dot_and_norms(av.data(), bv.data());
                if na == T::zero() || nb == T::zero() {
                    return; // defined as constant 0: zero gradient
                }
                let s = dot / (na * nb);
                let gs = g[0];
                let ad = av.data();
                let bd = bv.data();
                {
                    let da = slot(grads, inp[0].0, ad.len());
                    let inv = T::one() / (na * nb);
                    let self_coef = s / (na * na);
                    for i in 0..ad.len() {
                        da[i] = da[i] + gs * (bd[i] * inv - ad[i] * self_coef);
                    }
                }
                {
                    let db = slot(grads, inp[1].0, bd.len());
                    let inv = T::one() / (na * nb);
                    let self_coef = s / (nb * nb);
                    for i in 0..bd.len() {
                        db[i] = db[i] + gs * (ad[i] * inv - bd[i] * self_coef);
                    }
                }
            }
            Op::MulScalar => {
                let sc = self.nodes[inp[0].0].value.data()[0];
                let xd = self.nodes[inp[1].0].value.data().to_vec();
                {
                    let ds = slot(grads, inp[0].0, 1);
                    let mut acc = T::zero();
                    for i in 0..g.len() {
                        acc = acc + g[i] * xd[i];
                    }
                    ds[0] = ds[0] + acc;
                }
                {
                    let dx = slot(grads, inp[1].0, g.len());
                    for i in 0..g.len() {
                        dx[i] = dx[i] + sc * g[i];
                    }
                }
            }
            Op::StackScalars => {
                for (i, &src) in inp.iter().enumerate() {
                    let ds = slot(grads, src.0, 1);
                    ds[0] = ds[0] + g[i];
                }
            }
            Op::IndexScalar { idx } => {
                let n = self.nodes[inp[0].0].value.numel();
                let dv = slot(grads, inp[0].0, n);
                dv[*idx] = dv[*idx] + g[0];
            }
            Op::Sum => {
                let n = self.nodes[inp[0].0].value.numel();
                let dx = slot(grads, inp[0].0, n);
                for v in dx.iter_mut() {
                    *v = *v + g[0];
                }
            }
            Op::CrossEntropy { floor, target } => {
                let pv = &self.nodes[inp[0].0].value;
                let pd = pv.data();
                let n = T::from_f64(target.len() as f64);
                let gl = g[0];
                let dp = slot(grads, inp[0].0, pd.len());
                for (px, &t) in target.iter().enumerate() {
                    let idx = px * 2 + t as usize;
                    let p = pd[idx];
                    if p >= *floor {
                        dp[idx] = dp[idx] - gl / (n * p);
                    }
                }
            }
        }
    }
}

/// Probability floor applied inside the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], id: usize, numel: usize) -> &'a mut [T] {
    grads[id]
        .get_or_insert_with(|| vec![T::zero(); numel])
        .as_mut_slice()
}

fn dot_and_norms<T: Real>(a: &[T], b: &[T]) -> (T, T, T) {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for i in 0..a.len() {
        dot = dot + a[i] * b[i];
        na = na + a[i] * a[i];
        nb = nb + b[i] * b[i];
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// Per-output-index (i0, i1, weight-on-i1) taps for 2x bilinear upsampling
/// with half-pixel source alignment, clamped at the edges.
fn bilinear_taps<T: Real>(n: usize) -> Vec<(usize, usize, T)> {
    let mut tab = Vec::with_capacity(2 * n);
    for o in 0..2 * n {
        let src = (o as f64 + 0.5) / 2.0 - 0.5;
        let floor = src.floor();
        let frac = src - floor;
        let i0 = floor as isize;
        let c0 = i0.clamp(0, n as isize - 1) as usize;
        let c1 = (i0 + 1).clamp(0, n as isize - 1) as usize;
        tab.push((c0, c1, T::from_f64(frac)));
    }
    tab
}
