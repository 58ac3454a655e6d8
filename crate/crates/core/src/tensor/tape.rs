use super::flops;
use super::kernels::{self, sigmoid, ConvGeom, ConvSpec};
use super::{axis_split, gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Matmul { a: Var, b: Var, dims: MatmulDims },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    GatedAdd { f: Var, h: Var, gate: Var },
    ScaleConst { x: Var, c: f64 },
    AddBroadcast { x: Var, y: Var },
    ChannelBias { x: Var, b: Var },
    BatchNorm(Box<BnSaved>),
    Silu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    MaxAxis { x: Var, argmax: Vec<usize> },
    UpNearest { x: Var, fy: usize, fx: usize },
    DownArea { x: Var, fy: usize, fx: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    SwapLast2 { x: Var },
    HeadSimilarity { z: Var, p: Var, heads: usize },
    Sum { x: Var },
    DotConst { x: Var, r: Vec<f64> },
    BceLogits { x: Var, target: Vec<f64>, weight: Vec<f64> },
    WeightedL1 { x: Var, target: Vec<f64>, weight: Vec<f64> },
    DflExpect { x: Var, bins: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct BnSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    batch: usize,
    channels: usize,
    plane: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct MatmulDims {
    batch: usize,
    p: usize,
    q: usize,
    r: usize,
    ta: bool,
    tb: bool,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of executed ops, replayable in reverse.
///
/// A tape is used for exactly one forward/backward pass; create a fresh one
/// per pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient of `v`, or zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn slice(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, "rank", a.len(), b.len()));
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(Error::shape(op, format!("axis {i}"), x, y));
        }
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for rank {}", shape.len())));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Batch mean and (biased) variance computed by a training-mode
    /// batch norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm(s) if s.train => Some((&s.batch_mean, &s.batch_var)),
            _ => None,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("conv2d", "input rank", 4, xs.len()));
        }
        if ws.len() != 4 {
            return Err(Error::shape("conv2d", "weight rank", 4, ws.len()));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if k != k2 {
            return Err(Error::shape("conv2d", "kernel width", k, k2));
        }
        if k == 0 {
            return Err(Error::invalid("conv2d", "kernel size must be at least 1"));
        }
        if spec.groups == 0 || cin_g * spec.groups != cin {
            return Err(Error::shape("conv2d", "input channels (C_in/groups · groups)", cin_g * spec.groups, cin));
        }
        if cout % spec.groups != 0 {
            return Err(Error::invalid("conv2d", format!("output channels {cout} not divisible by groups {}", spec.groups)));
        }
        let ho = spec
            .out_extent(h, k)
            .ok_or_else(|| Error::invalid("conv2d", format!("height {h} too small for kernel {k}")))?;
        let wo = spec
            .out_extent(wd, k)
            .ok_or_else(|| Error::invalid("conv2d", format!("width {wd} too small for kernel {k}")))?;
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            k,
            ho,
            wo,
            spec,
        };
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), &geom);
        flops::add(2 * (batch * cout * cin_g * k * k * ho * wo) as u64);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(Tensor::from_parts(vec![batch, cout, ho, wo], out), Op::Conv2d { x, w, geom }, ng))
    }

    /// Matrix product of rank-2 operands, or a batched product of rank-3
    /// operands with equal leading extent. `ta`/`tb` transpose the last two
    /// axes of the respective operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let batch = match (sa.len(), sb.len()) {
            (2, 2) => 1,
            (3, 3) => {
                if sa[0] != sb[0] {
                    return Err(Error::shape("matmul", "batch", sa[0], sb[0]));
                }
                sa[0]
            }
            _ => return Err(Error::invalid("matmul", format!("unsupported ranks {} and {}", sa.len(), sb.len()))),
        };
        let r = sa.len();
        let (p, q) = if ta { (sa[r - 1], sa[r - 2]) } else { (sa[r - 2], sa[r - 1]) };
        let (q2, rr) = if tb { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if q != q2 {
            return Err(Error::shape("matmul", "inner extent", q, q2));
        }
        let dims = MatmulDims {
            batch,
            p,
            q,
            r: rr,
            ta,
            tb,
        };
        let mut out = vec![0.0; batch * p * rr];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    p,
                    q,
                    rr,
                    &av[i * p * q..(i + 1) * p * q],
                    ta,
                    &bv[i * q * rr..(i + 1) * q * rr],
                    tb,
                    &mut out[i * p * rr..(i + 1) * p * rr],
                    0.0,
                );
            }
        }
        flops::add(2 * (batch * p * q * rr) as u64);
        let shape = if batch == 1 && r == 2 { vec![p, rr] } else { vec![batch, p, rr] };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Matmul { a, b, dims }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect::<Vec<_>>();
        flops::add(data.len() as u64);
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect::<Vec<_>>();
        flops::add(data.len() as u64);
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul { a, b }, ng))
    }

    /// `f + gate · h` with a one-element `gate`.
    pub fn gated_add(&mut self, f: Var, h: Var, gate: Var) -> Result<Var> {
        same_shape("gated_add", self.shape(f), self.shape(h))?;
        if self.value(gate).numel() != 1 {
            return Err(Error::shape("gated_add", "gate elements", 1, self.value(gate).numel()));
        }
        let g = self.value(gate).data()[0];
        let data = self.value(f).data().iter().zip(self.value(h).data()).map(|(a, b)| a + g * b).collect::<Vec<_>>();
        flops::add(2 * data.len() as u64);
        let shape = self.shape(f).to_vec();
        let ng = self.ng(f) || self.ng(h) || self.ng(gate);
        Ok(self.push(Tensor::from_parts(shape, data), Op::GatedAdd { f, h, gate }, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        flops::add(t.numel() as u64);
        let ng = self.ng(x);
        self.push(t, Op::ScaleConst { x, c }, ng)
    }

    /// Adds `y` to every leading slice of `x`; `y`'s shape must equal the
    /// trailing axes of `x`.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sy = self.shape(y).to_vec();
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != sy[..] {
            return Err(Error::invalid("add_broadcast", format!("{sy:?} is not a suffix of {sx:?}")));
        }
        let yv = self.value(y).data();
        let n = yv.len();
        let data: Vec<f64> = self.value(x).data().iter().enumerate().map(|(i, v)| v + yv[i % n]).collect();
        flops::add(data.len() as u64);
        let ng = self.ng(x) || self.ng(y);
        Ok(self.push(Tensor::from_parts(sx, data), Op::AddBroadcast { x, y }, ng))
    }

    /// Adds a per-channel bias `b[C]` to `x[B, C, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::invalid("channel_bias", "input needs a channel axis"));
        }
        let c = sx[1];
        if self.shape(b) != [c] {
            return Err(Error::shape("channel_bias", "bias length", c, self.value(b).numel()));
        }
        let inner: usize = sx[2..].iter().product();
        let bv = self.value(b).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[(i / inner) % c])
            .collect();
        flops::add(data.len() as u64);
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Tensor::from_parts(sx, data), Op::ChannelBias { x, b }, ng))
    }

    /// Inference-form batch norm with stored statistics.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (batch, channels, plane) = self.bn_dims(x, gamma, beta)?;
        if mean.len() != channels || var.len() != channels {
            return Err(Error::shape("batchnorm", "running stats length", channels, mean.len().min(var.len())));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, batch, channels, plane, mean.to_vec(), inv_std, false, Vec::new())
    }

    /// Training-form batch norm using batch statistics over (N, H, W).
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (batch, channels, plane) = self.bn_dims(x, gamma, beta)?;
        let xv = self.value(x).data();
        let count = (batch * plane) as f64;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let mut s = 0.0;
            for b in 0..batch {
                s += xv[(b * channels + c) * plane..][..plane].iter().sum::<f64>();
            }
            let m = s / count;
            let mut v = 0.0;
            for b in 0..batch {
                v += xv[(b * channels + c) * plane..][..plane].iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            }
            mean[c] = m;
            var[c] = v / count;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, batch, channels, plane, mean, inv_std, true, var)
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let sx = self.shape(x);
        if sx.len() < 2 {
            return Err(Error::invalid("batchnorm", "input needs a channel axis"));
        }
        let c = sx[1];
        for p in [gamma, beta] {
            if self.value(p).numel() != c {
                return Err(Error::shape("batchnorm", "affine length", c, self.value(p).numel()));
            }
        }
        Ok((sx[0], c, sx[2..].iter().product()))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        batch: usize,
        channels: usize,
        plane: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
        batch_var: Vec<f64>,
    ) -> Result<Var> {
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let o = (b * channels + c) * plane;
                for i in o..o + plane {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        flops::add(out.len() as u64);
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let saved = BnSaved {
            x,
            gamma,
            beta,
            batch,
            channels,
            plane,
            xhat: if ng { xhat } else { Vec::new() },
            inv_std,
            train,
            batch_mean: if train { mean } else { Vec::new() },
            batch_var,
        };
        Ok(self.push(Tensor::from_parts(shape, out), Op::BatchNorm(Box::new(saved)), ng))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * sigmoid(v));
        flops::add(t.numel() as u64);
        let ng = self.ng(x);
        self.push(t, Op::Silu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        flops::add(t.numel() as u64);
        let ng = self.ng(x);
        self.push(t, Op::Sigmoid { x }, ng)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(xv[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    let e = (xv[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= s;
                }
            }
        }
        flops::add(out.len() as u64);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, ng))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("mean_axis", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xv[(o * n + j) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        flops::add(out.len() as u64);
        let mut os = shape;
        os.remove(axis);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(os, out), Op::MeanAxis { x, axis }, ng))
    }

    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("max_axis", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        if n == 0 {
            return Err(Error::invalid("max_axis", "empty axis"));
        }
        let xv = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    let v = xv[(o * n + j) * inner + i];
                    let k = o * inner + i;
                    if v > out[k] {
                        out[k] = v;
                        argmax[k] = (o * n + j) * inner + i;
                    }
                }
            }
        }
        flops::add(out.len() as u64);
        let mut os = shape;
        os.remove(axis);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(os, out), Op::MaxAxis { x, argmax }, ng))
    }

    /// Mean over the spatial axes of `x[B, C, H, W]`, giving `[B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.nchw("global_avg_pool", x)?;
        let r = self.reshape(x, [s[0], s[1], s[2] * s[3]])?;
        self.mean_axis(r, 2)
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.nchw("global_max_pool", x)?;
        let r = self.reshape(x, [s[0], s[1], s[2] * s[3]])?;
        self.max_axis(r, 2)
    }

    fn nchw(&self, op: &'static str, x: Var) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::shape(op, "rank", 4, s.len()));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Resizes the spatial axes of `x[B, C, H, W]` to `(th, tw)`.
    ///
    /// Integer upscaling uses nearest neighbour, integer downscaling uses
    /// area averaging, and equal sizes return `x` unchanged.
    pub fn resize(&mut self, x: Var, th: usize, tw: usize) -> Result<Var> {
        let [b, c, h, w] = self.nchw("resize", x)?;
        if (h, w) == (th, tw) {
            return Ok(x);
        }
        let ng = self.ng(x);
        if th >= h && tw >= w && th.is_multiple_of(h) && tw.is_multiple_of(w) {
            let (fy, fx) = (th / h, tw / w);
            let out = kernels::upsample_nearest(self.value(x).data(), b * c, h, w, fy, fx);
            flops::add(out.len() as u64);
            return Ok(self.push(Tensor::from_parts(vec![b, c, th, tw], out), Op::UpNearest { x, fy, fx }, ng));
        }
        if th <= h && tw <= w && th > 0 && tw > 0 && h % th == 0 && w % tw == 0 {
            let (fy, fx) = (h / th, w / tw);
            let out = kernels::downsample_area(self.value(x).data(), b * c, h, w, fy, fx);
            flops::add(out.len() as u64);
            return Ok(self.push(Tensor::from_parts(vec![b, c, th, tw], out), Op::DownArea { x, fy, fx }, ng));
        }
        Err(Error::invalid("resize", format!("{h}x{w} -> {th}x{tw} is not an integer rescale")))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() {
                return Err(Error::shape("concat", "rank", base.len(), s.len()));
            }
            for (i, (&a, &b)) in base.iter().zip(s).enumerate() {
                if i != axis && a != b {
                    return Err(Error::shape("concat", format!("axis {i}"), a, b));
                }
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = xs.iter().any(|&v| self.ng(v));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { xs: xs.to_vec(), axis }, ng))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(Error::shape("slice", format!("axis {axis} extent"), start + len, shape[axis]));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut os = shape;
        os[axis] = len;
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(os, out), Op::Slice { x, axis, start }, ng))
    }

    /// Splits `x` along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, sizes: &[usize], axis: usize) -> Result<Vec<Var>> {
        let shape = self.shape(x).to_vec();
        check_axis("split", &shape, axis)?;
        let total: usize = sizes.iter().sum();
        if total != shape[axis] {
            return Err(Error::shape("split", format!("sum of sizes along axis {axis}"), shape[axis], total));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &s in sizes {
            parts.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(parts)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// Swaps the last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::invalid("swap_last2", "rank must be at least 2"));
        }
        let (p, q) = (shape[r - 2], shape[r - 1]);
        let outer: usize = shape[..r - 2].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            let src = &xv[o * p * q..][..p * q];
            let dst = &mut out[o * p * q..][..p * q];
            for i in 0..p {
                for j in 0..q {
                    dst[j * p + i] = src[i * q + j];
                }
            }
        }
        let mut os = shape;
        os.swap(r - 2, r - 1);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(os, out), Op::SwapLast2 { x }, ng))
    }

    /// Head-averaged scaled dot similarity between vertex queries
    /// `z[B, N, C]` and prototypes `p[B, M, C]`.
    ///
    /// Both are split into `heads` contiguous channel groups of width
    /// `d = C / heads`; the per-head dot products are scaled by `1/√d` and
    /// averaged over heads, giving `[B, N, M]`.
    pub fn head_similarity(&mut self, z: Var, p: Var, heads: usize) -> Result<Var> {
        let sz = self.shape(z).to_vec();
        let sp = self.shape(p).to_vec();
        if sz.len() != 3 || sp.len() != 3 {
            return Err(Error::invalid("head_similarity", "operands must be rank 3"));
        }
        if sz[0] != sp[0] {
            return Err(Error::shape("head_similarity", "batch", sz[0], sp[0]));
        }
        if sz[2] != sp[2] {
            return Err(Error::shape("head_similarity", "channels", sz[2], sp[2]));
        }
        let (batch, n, c, m) = (sz[0], sz[1], sz[2], sp[1]);
        if heads == 0 || c % heads != 0 {
            return Err(Error::invalid("head_similarity", format!("channels {c} not divisible by {heads} heads")));
        }
        let d = c / heads;
        let inv_sqrt = 1.0 / (d as f64).sqrt();
        let zv = self.value(z).data();
        let pv = self.value(p).data();
        let mut out = vec![0.0; batch * n * m];
        for b in 0..batch {
            for i in 0..n {
                let zi = &zv[(b * n + i) * c..][..c];
                for mm in 0..m {
                    let pm = &pv[(b * m + mm) * c..][..c];
                    let mut acc = 0.0;
                    for t in 0..heads {
                        let dot: f64 = zi[t * d..(t + 1) * d].iter().zip(&pm[t * d..(t + 1) * d]).map(|(a, b)| a * b).sum();
                        acc += dot * inv_sqrt;
                    }
                    out[(b * n + i) * m + mm] = acc / heads as f64;
                }
            }
        }
        flops::add((2 * batch * n * m * c + batch * n * m) as u64);
        let ng = self.ng(z) || self.ng(p);
        Ok(self.push(Tensor::from_parts(vec![batch, n, m], out), Op::HeadSimilarity { z, p, heads }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng)
    }

    /// `Σ x ⊙ r` for a constant `r` of the same shape.
    pub fn dot_const(&mut self, x: Var, r: &Tensor) -> Result<Var> {
        same_shape("dot_const", self.shape(x), r.shape())?;
        let s = self.value(x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x, r: r.data().to_vec() }, ng))
    }

    /// `Σ w · BCE(sigmoid(x), t)` in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, x: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let n = self.value(x).numel();
        if target.len() != n || weight.len() != n {
            return Err(Error::shape("bce_with_logits", "target/weight length", n, target.len().min(weight.len())));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(target)
            .zip(weight)
            .map(|((&v, &t), &w)| w * (v.max(0.0) - v * t + (-v.abs()).exp().ln_1p()))
            .sum();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::BceLogits {
                x,
                target: target.to_vec(),
                weight: weight.to_vec(),
            },
            ng,
        ))
    }

    /// `Σ w · |x − t|`.
    pub fn weighted_l1(&mut self, x: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let n = self.value(x).numel();
        if target.len() != n || weight.len() != n {
            return Err(Error::shape("weighted_l1", "target/weight length", n, target.len().min(weight.len())));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(target)
            .zip(weight)
            .map(|((&v, &t), &w)| w * (v - t).abs())
            .sum();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedL1 {
                x,
                target: target.to_vec(),
                weight: weight.to_vec(),
            },
            ng,
        ))
    }

    /// Expected bin index of each side distribution.
    ///
    /// `x[B, 4·bins, H, W]` holds logits for four box sides; each side's
    /// `bins` logits are softmaxed and reduced to `Σ k · p_k`, giving
    /// `[B, 4, H, W]`.
    pub fn dfl_expect(&mut self, x: Var, bins: usize) -> Result<Var> {
        let [b, c, h, w] = self.nchw("dfl_expect", x)?;
        if bins == 0 || c % bins != 0 {
            return Err(Error::invalid("dfl_expect", format!("{c} channels not divisible by {bins} bins")));
        }
        let sides = c / bins;
        let plane = h * w;
        let xv = self.value(x).data();
        let mut probs = vec![0.0; xv.len()];
        let mut out = vec![0.0; b * sides * plane];
        for bb in 0..b {
            for s in 0..sides {
                let base = (bb * c + s * bins) * plane;
                for px in 0..plane {
                    let mut mx = f64::NEG_INFINITY;
                    for k in 0..bins {
                        mx = mx.max(xv[base + k * plane + px]);
                    }
                    let mut z = 0.0;
                    for k in 0..bins {
                        let e = (xv[base + k * plane + px] - mx).exp();
                        probs[base + k * plane + px] = e;
                        z += e;
                    }
                    let mut ex = 0.0;
                    for k in 0..bins {
                        let p = probs[base + k * plane + px] / z;
                        probs[base + k * plane + px] = p;
                        ex += k as f64 * p;
                    }
                    out[(bb * sides + s) * plane + px] = ex;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, sides, h, w], out), Op::DflExpect { x, bins, probs }, ng))
    }

    /// Reverse-mode pass from a one-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let root = &self.nodes[out.0];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarBackward(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        let shapes = self.nodes[..=out.0].iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, g: Vec<f64>| accumulate(grads, v, g);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let (nx, nw) = (self.ng(*x), self.ng(*w));
                let (dx, dw) = kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), gy, geom, nx, nw);
                if nx {
                    acc(*x, dx);
                }
                if nw {
                    acc(*w, dw);
                }
            }
            Op::Matmul { a, b, dims } => {
                let MatmulDims { batch, p, q, r, ta, tb } = *dims;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    let mut da = vec![0.0; batch * p * q];
                    for i in 0..batch {
                        let dc = &gy[i * p * r..(i + 1) * p * r];
                        let bi = &bv[i * q * r..(i + 1) * q * r];
                        let dai = &mut da[i * p * q..(i + 1) * p * q];
                        if ta {
                            gemm(q, r, p, bi, tb, dc, true, dai, 0.0);
                        } else {
                            gemm(p, r, q, dc, false, bi, !tb, dai, 0.0);
                        }
                    }
                    acc(*a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; batch * q * r];
                    for i in 0..batch {
                        let dc = &gy[i * p * r..(i + 1) * p * r];
                        let ai = &av[i * p * q..(i + 1) * p * q];
                        let dbi = &mut db[i * q * r..(i + 1) * q * r];
                        if tb {
                            gemm(r, p, q, dc, true, ai, ta, dbi, 0.0);
                        } else {
                            gemm(q, p, r, ai, !ta, dc, false, dbi, 0.0);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add { a, b } => {
                if self.ng(*a) {
                    acc(*a, gy.to_vec());
                }
                if self.ng(*b) {
                    acc(*b, gy.to_vec());
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    acc(*a, gy.iter().zip(bv).map(|(g, y)| g * y).collect());
                }
                if self.ng(*b) {
                    acc(*b, gy.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::GatedAdd { f, h, gate } => {
                let g = self.value(*gate).data()[0];
                if self.ng(*f) {
                    acc(*f, gy.to_vec());
                }
                if self.ng(*h) {
                    acc(*h, gy.iter().map(|v| v * g).collect());
                }
                if self.ng(*gate) {
                    let s: f64 = gy.iter().zip(self.value(*h).data()).map(|(a, b)| a * b).sum();
                    acc(*gate, vec![s]);
                }
            }
            Op::ScaleConst { x, c } => acc(*x, gy.iter().map(|v| v * c).collect()),
            Op::AddBroadcast { x, y } => {
                if self.ng(*x) {
                    acc(*x, gy.to_vec());
                }
                if self.ng(*y) {
                    let n = self.value(*y).numel();
                    let mut dy = vec![0.0; n];
                    for (i, g) in gy.iter().enumerate() {
                        dy[i % n] += g;
                    }
                    acc(*y, dy);
                }
            }
            Op::ChannelBias { x, b } => {
                if self.ng(*x) {
                    acc(*x, gy.to_vec());
                }
                if self.ng(*b) {
                    let s = self.shape(*x);
                    let c = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut db = vec![0.0; c];
                    for (i, g) in gy.iter().enumerate() {
                        db[(i / inner) % c] += g;
                    }
                    acc(*b, db);
                }
            }
            Op::BatchNorm(s) => self.bn_backward(s, gy, &mut acc),
            Op::Silu { x } => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    gy.iter()
                        .zip(xv)
                        .map(|(g, &v)| {
                            let sg = sigmoid(v);
                            g * (sg + v * sg * (1.0 - sg))
                        })
                        .collect(),
                );
            }
            Op::Sigmoid { x } => {
                let yv = node.value.data();
                acc(*x, gy.iter().zip(yv).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let yv = node.value.data();
                let mut dx = vec![0.0; yv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n).map(|j| gy[base + j * inner] * yv[base + j * inner]).sum();
                        for j in 0..n {
                            let k = base + j * inner;
                            dx[k] = yv[k] * (gy[k] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[(o * n + j) * inner + i] = gy[o * inner + i] / n as f64;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::MaxAxis { x, argmax, .. } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &k) in gy.iter().zip(argmax) {
                    dx[k] += g;
                }
                acc(*x, dx);
            }
            Op::UpNearest { x, fy, fx } => {
                let s = self.shape(*x);
                acc(*x, kernels::upsample_nearest_backward(gy, s[0] * s[1], s[2], s[3], *fy, *fx));
            }
            Op::DownArea { x, fy, fx } => {
                let s = self.shape(*x);
                acc(*x, kernels::downsample_area_backward(gy, s[0] * s[1], s[2], s[3], *fy, *fx));
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut off = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    if self.ng(v) {
                        let mut dx = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            dx.extend_from_slice(&gy[(o * total + off) * inner..(o * total + off + n) * inner]);
                        }
                        acc(v, dx);
                    }
                    off += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    dx[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&gy[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Reshape { x } => acc(*x, gy.to_vec()),
            Op::SwapLast2 { x } => {
                let s = self.shape(*x);
                let r = s.len();
                let (p, q) = (s[r - 2], s[r - 1]);
                let outer: usize = s[..r - 2].iter().product();
                let mut dx = vec![0.0; gy.len()];
                for o in 0..outer {
                    for i in 0..p {
                        for j in 0..q {
                            dx[o * p * q + i * q + j] = gy[o * p * q + j * p + i];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::HeadSimilarity { z, p, heads } => {
                let sz = self.shape(*z);
                let (batch, n, c) = (sz[0], sz[1], sz[2]);
                let m = self.shape(*p)[1];
                let d = c / heads;
                let scale = 1.0 / ((d as f64).sqrt() * *heads as f64);
                let (zv, pv) = (self.value(*z).data(), self.value(*p).data());
                let mut dz = vec![0.0; zv.len()];
                let mut dp = vec![0.0; pv.len()];
                for b in 0..batch {
                    for i in 0..n {
                        for mm in 0..m {
                            let g = gy[(b * n + i) * m + mm] * scale;
                            if g == 0.0 {
                                continue;
                            }
                            let zo = (b * n + i) * c;
                            let po = (b * m + mm) * c;
                            for j in 0..c {
                                dz[zo + j] += g * pv[po + j];
                                dp[po + j] += g * zv[zo + j];
                            }
                        }
                    }
                }
                if self.ng(*z) {
                    acc(*z, dz);
                }
                if self.ng(*p) {
                    acc(*p, dp);
                }
            }
            Op::Sum { x } => acc(*x, vec![gy[0]; self.value(*x).numel()]),
            Op::DotConst { x, r } => acc(*x, r.iter().map(|v| v * gy[0]).collect()),
            Op::BceLogits { x, target, weight } => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    xv.iter()
                        .zip(target)
                        .zip(weight)
                        .map(|((&v, &t), &w)| gy[0] * w * (sigmoid(v) - t))
                        .collect(),
                );
            }
            Op::WeightedL1 { x, target, weight } => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    xv.iter()
                        .zip(target)
                        .zip(weight)
                        .map(|((&v, &t), &w)| {
                            let d = v - t;
                            let sgn = if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            gy[0] * w * sgn
                        })
                        .collect(),
                );
            }
            Op::DflExpect { x, bins, probs } => {
                let s = self.shape(*x);
                let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
                let sides = c / bins;
                let ev = node.value.data();
                let mut dx = vec![0.0; probs.len()];
                for bb in 0..b {
                    for sd in 0..sides {
                        let base = (bb * c + sd * bins) * plane;
                        for px in 0..plane {
                            let o = (bb * sides + sd) * plane + px;
                            let (g, e) = (gy[o], ev[o]);
                            for k in 0..*bins {
                                let i = base + k * plane + px;
                                dx[i] = g * probs[i] * (k as f64 - e);
                            }
                        }
                    }
                }
                acc(*x, dx);
            }
        }
    }

    fn bn_backward(&self, s: &BnSaved, gy: &[f64], acc: &mut impl FnMut(Var, Vec<f64>)) {
        let g = self.value(s.gamma).data();
        let (batch, channels, plane) = (s.batch, s.channels, s.plane);
        let mut dgamma = vec![0.0; channels];
        let mut dbeta = vec![0.0; channels];
        for b in 0..batch {
            for c in 0..channels {
                let o = (b * channels + c) * plane;
                for i in o..o + plane {
                    dgamma[c] += gy[i] * s.xhat[i];
                    dbeta[c] += gy[i];
                }
            }
        }
        if self.ng(s.x) {
            let mut dx = vec![0.0; gy.len()];
            let count = (batch * plane) as f64;
            for b in 0..batch {
                for c in 0..channels {
                    let o = (b * channels + c) * plane;
                    let k = g[c] * s.inv_std[c];
                    for i in o..o + plane {
                        dx[i] = if s.train {
                            k * (gy[i] - dbeta[c] / count - s.xhat[i] * dgamma[c] / count)
                        } else {
                            k * gy[i]
                        };
                    }
                }
            }
            acc(s.x, dx);
        }
        if self.ng(s.gamma) {
            acc(s.gamma, dgamma);
        }
        if self.ng(s.beta) {
            acc(s.beta, dbeta);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_fn([2, 3], |i| i as f64));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), Tensor::ones([2, 3]));
    }

    #[test]
    fn silu_gradient_at_zero_is_half() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros([4]));
        let y = t.silu(x);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros([3]));
        let y = t.silu(x);
        assert!(matches!(t.backward(y), Err(Error::NonScalarBackward(s)) if s == vec![3]));
    }

    #[test]
    fn reused_leaf_accumulates_once_per_use() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new([2], vec![1.5, -2.0]).unwrap());
        let y = t.add(x, x).unwrap();
        let z = t.mul(y, x).unwrap();
        let s = t.sum(z);
        // s = 2 x², ds/dx = 4x
        let g = t.backward(s).unwrap().get(x).unwrap();
        assert_eq!(g.data(), &[6.0, -8.0]);
    }

    #[test]
    fn softmax_closed_form() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([2], vec![0.0, 3f64.ln()]).unwrap());
        let y = t.softmax(x, 0).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_constant_and_shift() {
        let mut t = Tape::new();
        let base = Tensor::from_fn([3, 5], |i| (i as f64 * 0.7).sin());
        let x = t.constant(base.clone());
        let shifted = t.constant(base.map(|v| v + 1000.0));
        let a = t.softmax(x, 1).unwrap();
        let b = t.softmax(shifted, 1).unwrap();
        assert!(t.value(a).max_abs_diff(t.value(b)) < 1e-12);
        let c = t.constant(Tensor::full([7], 2.5));
        let sc = t.softmax(c, 0).unwrap();
        assert!(t.value(sc).data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn split_rejects_bad_sizes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([1, 6, 2, 2]));
        let err = t.split(x, &[2, 3], 1).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn concat_split_round_trip() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_fn([2, 3, 2], |i| i as f64));
        let b = t.constant(Tensor::from_fn([2, 1, 2], |i| -(i as f64)));
        let c = t.concat(&[a, b], 1).unwrap();
        let parts = t.split(c, &[3, 1], 1).unwrap();
        assert!(t.value(parts[0]).bit_eq(t.value(a)));
        assert!(t.value(parts[1]).bit_eq(t.value(b)));
    }

    #[test]
    fn global_avg_pool_of_constant() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full([2, 3, 4, 5], 1.25));
        let p = t.global_avg_pool(x).unwrap();
        assert_eq!(t.shape(p), &[2, 3]);
        assert!(t.value(p).data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
        let m = t.global_max_pool(x).unwrap();
        assert!(t.value(m).data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn resize_nearest_then_area_is_identity() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_fn([1, 2, 3, 4], |i| (i as f64).sqrt()));
        let up = t.resize(x, 6, 12).unwrap();
        let back = t.resize(up, 3, 4).unwrap();
        assert!(t.value(back).max_abs_diff(t.value(x)) < 1e-15);
        assert!(t.resize(x, 5, 4).is_err());
        assert_eq!(t.resize(x, 3, 4).unwrap(), x);
    }

    #[test]
    fn gated_add_zero_gate_is_exact() {
        let mut t = Tape::new();
        let f = t.constant(Tensor::from_fn([1, 2, 2, 2], |i| i as f64 - 3.3));
        let h = t.constant(Tensor::from_fn([1, 2, 2, 2], |i| (i as f64).cos()));
        let g = t.param(Tensor::scalar(0.0));
        let y = t.gated_add(f, h, g).unwrap();
        assert!(t.value(y).bit_eq(t.value(f)));
        let bad = t.constant(Tensor::zeros([1, 2, 2, 1]));
        assert!(t.gated_add(f, bad, g).is_err());
    }

    #[test]
    fn conv_shape_errors_name_dimension() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([1, 3, 5, 5]));
        let w = t.constant(Tensor::zeros([4, 2, 3, 3]));
        let err = t.conv2d(x, w, ConvSpec::same(3)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn matmul_inner_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([4, 2]));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { expected: 3, actual: 4, .. })));
    }

    #[test]
    fn dfl_expect_of_peaked_logits() {
        let mut t = Tape::new();
        let mut x = Tensor::full([1, 8, 1, 1], -1e4);
        x.set(&[0, 2, 0, 0], 0.0); // side 0 -> bin 2
        x.set(&[0, 4 + 3, 0, 0], 0.0); // side 1 -> bin 3
        let v = t.constant(x);
        let e = t.dfl_expect(v, 4).unwrap();
        let d = t.value(e).data();
        assert!((d[0] - 2.0).abs() < 1e-12 && (d[1] - 3.0).abs() < 1e-12);
    }
}
