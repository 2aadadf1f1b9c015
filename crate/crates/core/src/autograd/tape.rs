use crate::error::{Error, Result};
use crate::tensor::{
    self, avg_downsample2, avg_downsample2_backward, bilinear_upsample, bilinear_upsample_backward, conv2d_backward,
    conv2d_transposed_backward, depth_to_space, space_to_depth, ConvGeometry, HaarBand, Real, Shape, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
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
        k: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    Conv2dTransposed {
        x: Var,
        k: Var,
        stride: usize,
    },
    GlobalAvgPool(Var),
    /// The node value is the normalized output; `inv_std` is per (n, c).
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    AddScalar(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Concat(Var, Var),
    Slice {
        x: Var,
        from: usize,
    },
    AvgDown2(Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    DepthToSpace {
        x: Var,
        r: usize,
    },
    HaarAnalysis {
        x: Var,
        band: HaarBand,
    },
    HaarSynthesis {
        x: Var,
        band: HaarBand,
    },
    Sum(Var),
    Mean(Var),
    L1 {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `d(root)/d(var)`, or `None` if `var` does not require gradients or
    /// does not influence the root.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// How a right-hand operand lines up with the left.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `(n, c, 1, 1)` spread over space.
    Channel,
}

fn broadcast_kind(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1 {
        Ok(Broadcast::Channel)
    } else {
        Err(Error::dim(op, format!("cannot broadcast {b} onto {a}")))
    }
}

fn binary_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, kind: Broadcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
    match kind {
        Broadcast::Same => a.zip_map(b, f).expect("shapes checked"),
        Broadcast::Channel => {
            let mut out = a.clone();
            let s = a.shape();
            for n in 0..s.n {
                for c in 0..s.c {
                    let bv = b.data()[n * s.c + c];
                    out.plane_mut(n, c).iter_mut().for_each(|v| *v = f(*v, bv));
                }
            }
            out
        }
    }
}

/// Folds a full-size gradient down to the operand's (possibly broadcast)
/// shape.
fn reduce_to<T: Real>(g: Tensor<T>, kind: Broadcast) -> Tensor<T> {
    match kind {
        Broadcast::Same => g,
        Broadcast::Channel => {
            let s = g.shape();
            Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |n, c, _, _| {
                g.plane(n, c).iter().copied().sum()
            })
        }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that gradients flow to.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let value = tensor::conv2d(self.value(x), self.value(k), b.map(|b| self.value(b)), geom)?;
        let rg = self.any_grad(&[x, k]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::Conv2d { x, k, b, geom }, rg))
    }

    pub fn conv2d_transposed(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let value = tensor::conv2d_transposed(self.value(x), self.value(k), stride)?;
        let rg = self.any_grad(&[x, k]);
        Ok(self.push(value, Op::Conv2dTransposed { x, k, stride }, rg))
    }

    /// Per (sample, channel) spatial mean, shape `(n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.plane() == 0 {
            return Err(Error::geometry("global_avg_pool", format!("empty planes in {s}")));
        }
        let inv = T::ONE / T::from_usize(s.plane());
        let value = Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |n, c, _, _| {
            t.plane(n, c).iter().copied().sum::<T>() * inv
        });
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// `(x - mean) / sqrt(var + eps)` per (sample, channel), biased variance,
    /// no affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.plane() == 0 {
            return Err(Error::geometry("instance_norm", format!("empty planes in {s}")));
        }
        let count = T::from_usize(s.plane());
        let eps = T::from_f64(eps);
        let mut value = t.clone();
        let mut inv_std = Vec::with_capacity(s.n * s.c);
        for n in 0..s.n {
            for c in 0..s.c {
                let p = value.plane_mut(n, c);
                let mean = p.iter().copied().sum::<T>() / count;
                let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
                let inv = T::ONE / (var + eps).sqrt();
                p.iter_mut().for_each(|v| *v = (*v - mean) * inv);
                inv_std.push(inv);
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::InstanceNorm { x, inv_std }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.requires_grad(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.requires_grad(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let value = self.value(x).map(|v| v * k);
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale(x, k), rg)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let value = self.value(x).map(|v| v + k);
        let rg = self.requires_grad(x);
        self.push(value, Op::AddScalar(x), rg)
    }

    /// `a + b`; `b` may be `(n, c, 1, 1)` and is then spread over space.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("add", self.shape(a), self.shape(b))?;
        let value = binary_map(self.value(a), self.value(b), kind, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("sub", self.shape(a), self.shape(b))?;
        let value = binary_map(self.value(a), self.value(b), kind, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise `a * b` with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("mul", self.shape(a), self.shape(b))?;
        let value = binary_map(self.value(a), self.value(b), kind, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.shape(s).is_scalar() {
            return Err(Error::dim(
                "scale_by",
                format!("factor must be 1x1x1x1, got {}", self.shape(s)),
            ));
        }
        let k = self.value(s).data()[0];
        let value = self.value(x).map(|v| v * k);
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(value, Op::ScaleBy(x, s), rg))
    }

    pub fn channel_concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).channel_concat(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Channels `[from, to)`.
    pub fn channel_slice(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let value = self.value(x).channel_slice(from, to)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Slice { x, from }, rg))
    }

    pub fn avg_downsample2(&mut self, x: Var) -> Result<Var> {
        let value = avg_downsample2(self.value(x))?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::AvgDown2(x), rg))
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let value = bilinear_upsample(self.value(x), factor)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    pub fn depth_to_space(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = depth_to_space(self.value(x), r)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::DepthToSpace { x, r }, rg))
    }

    pub fn haar_analysis(&mut self, x: Var, band: HaarBand) -> Result<Var> {
        let value = band.analyze(self.value(x))?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::HaarAnalysis { x, band }, rg))
    }

    pub fn haar_synthesis(&mut self, x: Var, band: HaarBand) -> Var {
        let value = band.synthesize(self.value(x));
        let rg = self.requires_grad(x);
        self.push(value, Op::HaarSynthesis { x, band }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.requires_grad(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.expect_same_shape(t, "l1_loss")?;
        let total = p
            .data()
            .iter()
            .zip(t.data())
            .fold(T::ZERO, |acc, (&a, &b)| acc + (a - b).abs());
        let value = Tensor::scalar(total / T::from_usize(p.numel()));
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(value, Op::L1 { pred, target }, rg))
    }

    /// Floating-point operations of the recorded forward pass, using the
    /// cost model documented in [`crate::metrics::cost`].
    pub fn forward_flops(&self) -> u64 {
        use crate::metrics::cost::op_flops as c;
        self.nodes
            .iter()
            .map(|node| {
                let out = node.value.numel() as u64;
                let sh = |v: &Var| self.shape(*v);
                match &node.op {
                    Op::Leaf | Op::Concat(..) | Op::Slice { .. } | Op::DepthToSpace { .. } => 0,
                    Op::Conv2d { k, b, .. } => c::conv(out, sh(k), b.is_some()),
                    Op::Conv2dTransposed { x, k, .. } => c::conv_transposed(sh(x).numel() as u64, sh(k)),
                    Op::GlobalAvgPool(x) => c::global_avg_pool(sh(x).numel() as u64),
                    Op::InstanceNorm { .. } => c::instance_norm(out),
                    Op::Relu(_) | Op::Scale(..) | Op::AddScalar(_) | Op::Add(..) | Op::Sub(..) => c::elementwise(out),
                    Op::Mul(..) | Op::ScaleBy(..) => c::elementwise(out),
                    Op::Sigmoid(_) => c::sigmoid(out),
                    Op::AvgDown2(x) => c::avg_downsample2(sh(x).numel() as u64),
                    Op::Upsample { factor, .. } => c::bilinear_upsample(out, *factor),
                    Op::HaarAnalysis { .. } => c::haar_analysis(out),
                    Op::HaarSynthesis { x, .. } => c::haar_synthesis(sh(x).numel() as u64),
                    Op::Sum(x) | Op::Mean(x) => sh(x).numel() as u64,
                    Op::L1 { pred, .. } => 3 * sh(pred).numel() as u64,
                }
            })
            .sum()
    }

    /// Differentiates the scalar `root` with respect to every recorded value
    /// that requires gradients, consuming the tape.
    pub fn backward(self, root: Var) -> Result<Gradients<T>> {
        let root_shape = self.shape(root);
        if !root_shape.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a 1x1x1x1 root, got {root_shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.requires_grad(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::scalar(T::ONE));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for (var, contrib) in self.local_grads(node, &g)? {
                if !self.requires_grad(var) {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            // Leaves keep their gradient; interior buffers are dropped.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one node with respect to its inputs.
    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let wants = |v: Var| self.requires_grad(v);
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, k, b, geom } => {
                let (gx, gk, gb) = conv2d_backward(val(*x), val(*k), b.is_some(), g, *geom)?;
                let mut v = vec![(*x, gx), (*k, gk)];
                if let (Some(b), Some(gb)) = (b, gb) {
                    let shape = self.shape(*b);
                    v.push((*b, gb.reshape(shape)?));
                }
                v
            }
            Op::Conv2dTransposed { x, k, stride } => {
                let (gx, gk) = conv2d_transposed_backward(val(*x), val(*k), g, *stride)?;
                vec![(*x, gx), (*k, gk)]
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let inv = T::ONE / T::from_usize(s.plane());
                let gx = Tensor::from_fn(s, |n, c, _, _| g.at(n, c, 0, 0) * inv);
                vec![(*x, gx)]
            }
            Op::InstanceNorm { x, inv_std } => {
                // dx = inv_std * (g - mean(g) - y * mean(g * y))
                let s = out.shape();
                let count = T::from_usize(s.plane());
                let mut gx = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let (y, gp) = (out.plane(n, c), g.plane(n, c));
                        let mean_g = gp.iter().copied().sum::<T>() / count;
                        let mean_gy = gp.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / count;
                        let inv = inv_std[n * s.c + c];
                        for ((d, &gi), &yi) in gx.plane_mut(n, c).iter_mut().zip(gp).zip(y) {
                            *d = inv * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Relu(x) => {
                let gx = g.zip_map(val(*x), |gi, xi| if xi > T::ZERO { gi } else { T::ZERO })?;
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => vec![(*x, g.zip_map(out, |gi, y| gi * y * (T::ONE - y))?)],
            Op::Scale(x, k) => vec![(*x, g.map(|gi| gi * *k))],
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::Add(a, b) | Op::Sub(a, b) => {
                let kind = broadcast_kind("add", self.shape(*a), self.shape(*b))?;
                let gb = if matches!(node.op, Op::Sub(..)) {
                    g.map(|v| -v)
                } else {
                    g.clone()
                };
                vec![(*a, g.clone()), (*b, reduce_to(gb, kind))]
            }
            Op::Mul(a, b) => {
                let kind = broadcast_kind("mul", self.shape(*a), self.shape(*b))?;
                let mut v = Vec::with_capacity(2);
                if wants(*a) {
                    v.push((*a, binary_map(g, val(*b), kind, |gi, bi| gi * bi)));
                }
                if wants(*b) {
                    v.push((*b, reduce_to(g.zip_map(val(*a), |gi, ai| gi * ai)?, kind)));
                }
                v
            }
            Op::ScaleBy(x, s) => {
                let k = val(*s).data()[0];
                let mut v = vec![(*x, g.map(|gi| gi * k))];
                if wants(*s) {
                    let gs = g
                        .data()
                        .iter()
                        .zip(val(*x).data())
                        .fold(T::ZERO, |acc, (&gi, &xi)| acc + gi * xi);
                    v.push((*s, Tensor::scalar(gs)));
                }
                v
            }
            Op::Concat(a, b) => {
                let ca = self.shape(*a).c;
                let cb = self.shape(*b).c;
                vec![(*a, g.channel_slice(0, ca)?), (*b, g.channel_slice(ca, ca + cb)?)]
            }
            Op::Slice { x, from } => {
                let s = self.shape(*x);
                let gs = g.shape();
                let gx = Tensor::from_fn(s, |n, c, y, xx| {
                    if c >= *from && c < from + gs.c {
                        g.at(n, c - from, y, xx)
                    } else {
                        T::ZERO
                    }
                });
                vec![(*x, gx)]
            }
            Op::AvgDown2(x) => vec![(*x, avg_downsample2_backward(g))],
            Op::Upsample { x, factor } => {
                vec![(*x, bilinear_upsample_backward(g, self.shape(*x), *factor))]
            }
            Op::DepthToSpace { x, r } => vec![(*x, space_to_depth(g, *r)?)],
            Op::HaarAnalysis { x, band } => vec![(*x, band.synthesize(g))],
            Op::HaarSynthesis { x, band } => vec![(*x, band.analyze(g)?)],
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x), g.data()[0]))],
            Op::Mean(x) => {
                let s = self.shape(*x);
                vec![(*x, Tensor::full(s, g.data()[0] / T::from_usize(s.numel())))]
            }
            Op::L1 { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let scale = g.data()[0] / T::from_usize(p.numel());
                let gp = p.zip_map(t, |a, b| {
                    if a > b {
                        scale
                    } else if a < b {
                        -scale
                    } else {
                        T::ZERO
                    }
                })?;
                let gt = gp.map(|v| -v);
                vec![(*pred, gp), (*target, gt)]
            }
        })
    }
}
