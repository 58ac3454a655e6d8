use rand::Rng;

use super::params::{BnMode, ParamId, ParamStore, Session};
use super::{Block, Shape};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor, Var};

pub const BN_EPS: f64 = 1e-3;

/// Batch norm over the channel axis with learnable scale/shift and running
/// statistics stored as buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub eps: f64,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones([channels]), true),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros([channels]), true),
            mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros([channels]), false),
            var: store.add(format!("{prefix}.running_var"), Tensor::ones([channels]), false),
            eps: BN_EPS,
            channels,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        match s.mode() {
            BnMode::Eval => {
                let (m, v) = (s.buffer(self.mean), s.buffer(self.var));
                s.tape.batchnorm(x, g, b, m.data(), v.data(), self.eps)
            }
            BnMode::Train => {
                let y = s.tape.batchnorm_train(x, g, b, self.eps)?;
                s.record_bn(self.mean, self.var, y);
                Ok(y)
            }
        }
    }

    pub fn params(&self) -> usize {
        2 * self.channels
    }
}

fn kaiming_uniform<R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let bound = 1.0 / fan_in.sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Convolution → batch norm → optional SiLU.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bn: BatchNorm,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub act: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        act: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("{prefix}: kernel {k} must be odd")));
        }
        if groups == 0 || !cin.is_multiple_of(groups) || !cout.is_multiple_of(groups) {
            return Err(Error::Config(format!("{prefix}: channels {cin}->{cout} not divisible by groups {groups}")));
        }
        let weight = store.add(format!("{prefix}.weight"), kaiming_uniform([cout, cin / groups, k, k], rng), true);
        Ok(Conv {
            weight,
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), cout),
            cin,
            cout,
            k,
            stride,
            groups,
            act,
        })
    }

    /// 1×1, stride 1, SiLU.
    pub fn pointwise<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Self::new(store, prefix, cin, cout, 1, 1, 1, true, rng)
    }

    fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.stride, self.k / 2, self.groups)
    }

    pub fn params(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.k * self.k + self.bn.params()
    }
}

impl Block for Conv {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.tape.conv2d(x, w, self.spec())?;
        let y = self.bn.forward(s, y)?;
        Ok(if self.act { s.tape.silu(y) } else { y })
    }

    fn cost(&self, [b, c, h, w]: Shape) -> Result<(Shape, u64)> {
        if c != self.cin {
            return Err(Error::shape("conv", "input channels", self.cin, c));
        }
        let spec = self.spec();
        let ho = spec.out_extent(h, self.k).ok_or_else(|| Error::invalid("conv", "input too small"))?;
        let wo = spec.out_extent(w, self.k).ok_or_else(|| Error::invalid("conv", "input too small"))?;
        let out = (b * self.cout * ho * wo) as u64;
        let macs = out * ((self.cin / self.groups) * self.k * self.k) as u64;
        let pointwise_ops = if self.act { 2 } else { 1 };
        Ok(([b, self.cout, ho, wo], 2 * macs + pointwise_ops * out))
    }
}

/// Depthwise-separable convolution: depthwise k×k, pointwise 1×1, then a
/// single batch norm and SiLU over the pair.
#[derive(Clone, Debug)]
pub struct DsConv {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bn: BatchNorm,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl DsConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("{prefix}: kernel {k} must be odd")));
        }
        Ok(DsConv {
            depthwise: store.add(format!("{prefix}.dw.weight"), kaiming_uniform([cin, 1, k, k], rng), true),
            pointwise: store.add(format!("{prefix}.pw.weight"), kaiming_uniform([cout, cin, 1, 1], rng), true),
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), cout),
            cin,
            cout,
            k,
            stride,
        })
    }

    pub fn params(&self) -> usize {
        self.cin * self.k * self.k + self.cout * self.cin + self.bn.params()
    }
}

impl Block for DsConv {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = s.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.cin {
            return Err(Error::shape("dsconv", "input channels", self.cin, c));
        }
        let dw = s.param(self.depthwise);
        let pw = s.param(self.pointwise);
        let y = s.tape.conv2d(x, dw, ConvSpec::new(self.stride, self.k / 2, self.cin))?;
        let y = s.tape.conv2d(y, pw, ConvSpec::new(1, 0, 1))?;
        let y = self.bn.forward(s, y)?;
        Ok(s.tape.silu(y))
    }

    fn cost(&self, [b, c, h, w]: Shape) -> Result<(Shape, u64)> {
        if c != self.cin {
            return Err(Error::shape("dsconv", "input channels", self.cin, c));
        }
        let spec = ConvSpec::new(self.stride, self.k / 2, self.cin);
        let ho = spec.out_extent(h, self.k).ok_or_else(|| Error::invalid("dsconv", "input too small"))?;
        let wo = spec.out_extent(w, self.k).ok_or_else(|| Error::invalid("dsconv", "input too small"))?;
        let plane = (b * ho * wo) as u64;
        let dw = 2 * plane * (self.cin * self.k * self.k) as u64;
        let pw = 2 * plane * (self.cin * self.cout) as u64;
        Ok(([b, self.cout, ho, wo], dw + pw + 2 * plane * self.cout as u64))
    }
}

/// Either a standard or a depthwise-separable conv unit.
#[derive(Clone, Debug)]
pub enum ConvUnit {
    Standard(Conv),
    Separable(DsConv),
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        separable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(if separable {
            ConvUnit::Separable(DsConv::new(store, prefix, cin, cout, k, stride, rng)?)
        } else {
            ConvUnit::Standard(Conv::new(store, prefix, cin, cout, k, stride, 1, true, rng)?)
        })
    }

    pub fn params(&self) -> usize {
        match self {
            ConvUnit::Standard(c) => c.params(),
            ConvUnit::Separable(c) => c.params(),
        }
    }
}

impl Block for ConvUnit {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            ConvUnit::Standard(c) => c.forward(s, x),
            ConvUnit::Separable(c) => c.forward(s, x),
        }
    }

    fn cost(&self, input: Shape) -> Result<(Shape, u64)> {
        match self {
            ConvUnit::Standard(c) => c.cost(input),
            ConvUnit::Separable(c) => c.cost(input),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::flops;

    #[test]
    fn dsconv_param_count_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ds = DsConv::new(&mut store, "ds", 64, 64, 3, 1, &mut rng).unwrap();
        assert_eq!(ds.params(), 64 * 9 + 64 * 64 + 2 * 64);
        assert_eq!(ds.params(), 4800);
        assert_eq!(store.trainable_count(), 4800);

        let mut store = ParamStore::new();
        let conv = Conv::new(&mut store, "c", 64, 64, 3, 1, 1, true, &mut rng).unwrap();
        assert_eq!(conv.params(), 36992);
        assert_eq!(store.trainable_count(), 36992);
        let ratio: f64 = 4800.0 / 36992.0;
        assert!((ratio - 0.13).abs() < 0.005);
    }

    #[test]
    fn pointwise_conv_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = Conv::new(&mut store, "c", 16, 32, 1, 1, 1, false, &mut rng).unwrap();
        assert_eq!(conv.params() - conv.bn.params(), 512);
        assert_eq!(conv.bn.params(), 64);
        let (shape, fl) = conv.cost([1, 16, 8, 8]).unwrap();
        assert_eq!(shape, [1, 32, 8, 8]);
        // conv part only; BN adds one per output element
        assert_eq!(fl - 32 * 64, 2 * 16 * 32 * 64);
        assert_eq!(2 * 16 * 32 * 64, 65536);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(Conv::new(&mut store, "c", 4, 4, 2, 1, 1, true, &mut rng).is_err());
    }

    #[test]
    fn dsconv_zero_input_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let ds = DsConv::new(&mut store, "ds", 4, 6, 5, 1, &mut rng).unwrap();
        let mut s = Session::eval(&store);
        let x = s.tape.constant(Tensor::zeros([1, 4, 6, 6]));
        let y = ds.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.shape(y), &[1, 6, 6, 6]);
        assert!(s.tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cost_matches_execution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let units = [
            ConvUnit::new(&mut store, "a", 6, 8, 3, 2, false, &mut rng).unwrap(),
            ConvUnit::new(&mut store, "b", 6, 8, 5, 1, true, &mut rng).unwrap(),
            ConvUnit::Standard(Conv::new(&mut store, "c", 6, 6, 3, 1, 6, true, &mut rng).unwrap()),
        ];
        for u in &units {
            let mut s = Session::eval(&store);
            let x = s.tape.constant(Tensor::ones([2, 6, 7, 9]));
            let (y, got) = flops::measure(|| u.forward(&mut s, x).unwrap());
            let (shape, want) = u.cost([2, 6, 7, 9]).unwrap();
            assert_eq!(got, want);
            assert_eq!(s.tape.shape(y), &shape[..]);
        }
    }
}
