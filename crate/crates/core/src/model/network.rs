use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Destination, ModelConfig};
use super::fullpad::GatedTunnel;
use super::head::DetectHead;
use super::hyperace::HyperAce;
use crate::error::{Error, Result};
use crate::hypergraph::C3ah;
use crate::nn::{Block, BnMode, C3k2, Conv, CspBlockConfig, ParamStore, Session, Shape};
use crate::tensor::{Tensor, Var};

pub const STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Clone, Debug)]
struct Backbone {
    stem: Conv,
    down2: Conv,
    stage2: C3k2,
    down3: Conv,
    stage3: C3k2,
    down4: Conv,
    stage4: C3k2,
    down5: Conv,
    stage5: C3k2,
}

#[derive(Clone, Debug)]
struct Neck {
    top_down4: C3k2,
    top_down3: C3k2,
    down3: Conv,
    bottom_up4: C3k2,
    down4: Conv,
    bottom_up5: C3k2,
}

/// A constructed detector: architecture plus its parameter store.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub store: ParamStore,
    backbone: Backbone,
    neck: Neck,
    heads: Vec<DetectHead>,
    hyperace: Option<HyperAce>,
    tunnels: Vec<GatedTunnel>,
}

/// Backbone stage outputs and the enhanced feature, as plain tensors.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// B1…B5.
    pub stages: Vec<Tensor>,
    pub strides: [usize; 5],
    /// `Y`, at B4's resolution; absent when no tunnel is enabled.
    pub enhanced: Option<Tensor>,
}

/// One named entry of a cost walk.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleCost {
    pub name: String,
    pub flops: u64,
    pub output: Shape,
}

fn csp(cfg: &ModelConfig, n: usize, e: f64) -> CspBlockConfig {
    CspBlockConfig {
        n: cfg.depth(n),
        e,
        use_ds: cfg.use_ds,
        k: cfg.large_kernel,
        inner_n: cfg.depth(2),
    }
}

/// Builds the network for `cfg` with weights drawn from `seed`.
///
/// Modules shared by every tunnel setting (backbone, neck, heads) are
/// created first, so two configs differing only in tunnels get identical
/// weights for them under the same seed.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut store = ParamStore::new();
    let st = &mut store;
    let w = |b: usize| cfg.width(b);
    let rep = |stage: usize| cfg.backbone_repeats[stage - 1];

    let c = cfg.backbone_channels.map(w);
    let e = cfg.backbone_e;
    let backbone = Backbone {
        stem: Conv::new(st, "backbone.stem", 3, c[0], 3, 2, 1, true, rng)?,
        down2: Conv::new(st, "backbone.down2", c[0], c[1], 3, 2, 1, true, rng)?,
        stage2: C3k2::new(st, "backbone.stage2", c[1], c[2], &csp(cfg, rep(1), e[0]), rng)?,
        down3: Conv::new(st, "backbone.down3", c[2], c[2], 3, 2, 1, true, rng)?,
        stage3: C3k2::new(st, "backbone.stage3", c[2], c[3], &csp(cfg, rep(2), e[1]), rng)?,
        down4: Conv::new(st, "backbone.down4", c[3], c[4], 3, 2, 1, true, rng)?,
        stage4: C3k2::new(st, "backbone.stage4", c[4], c[4], &csp(cfg, rep(3), e[2]), rng)?,
        down5: Conv::new(st, "backbone.down5", c[4], c[5], 3, 2, 1, true, rng)?,
        stage5: C3k2::new(st, "backbone.stage5", c[5], c[5], &csp(cfg, rep(4), e[3]), rng)?,
    };
    let (b3, b4, b5) = (c[3], c[4], c[5]);
    let [n3, n4, n5] = cfg.neck_channels.map(w);
    let neck = Neck {
        top_down4: C3k2::new(st, "neck.top_down4", b5 + b4, n4, &csp(cfg, 2, 0.5), rng)?,
        top_down3: C3k2::new(st, "neck.top_down3", n4 + b3, n3, &csp(cfg, 2, 0.5), rng)?,
        down3: Conv::new(st, "neck.down3", n3, n3, 3, 2, 1, true, rng)?,
        bottom_up4: C3k2::new(st, "neck.bottom_up4", n3 + n4, n4, &csp(cfg, 2, 0.5), rng)?,
        down4: Conv::new(st, "neck.down4", n4, n4, 3, 2, 1, true, rng)?,
        bottom_up5: C3k2::new(st, "neck.bottom_up5", n4 + b5, n5, &csp(cfg, 2, 0.5), rng)?,
    };
    let reg = cfg.head.reg_bins;
    let nc = cfg.num_classes;
    let c_box = (n3 / 4).max(16).max(4 * reg);
    let c_cls = n3.max(nc.min(100));
    let heads = [n3, n4, n5]
        .iter()
        .zip(STRIDES)
        .map(|(&ch, s)| DetectHead::new(st, &format!("head.p{}", s.trailing_zeros()), ch, c_box, c_cls, reg, nc, rng))
        .collect::<Result<Vec<_>>>()?;

    let (hyperace, tunnels) = if cfg.tunnels.any() {
        let ace = HyperAce::new(st, "hyperace", [b3, b4, b5], cfg, rng)?;
        let y = ace.out_channels();
        let dest_ch = |d: Destination| match d {
            Destination::NeckP3 => b3,
            Destination::NeckP4 => b4,
            Destination::NeckP5 => b5,
            Destination::TopDownP4 => n4,
            Destination::BottomUpP4 => n3,
            Destination::HeadP3 => n3,
            Destination::HeadP5 => n5,
        };
        let tunnels = cfg
            .tunnels
            .active()
            .map(|d| GatedTunnel::new(st, d, y, dest_ch(d), cfg.tunnels.gates[d.index()], rng))
            .collect::<Result<Vec<_>>>()?;
        (Some(ace), tunnels)
    } else {
        (None, Vec::new())
    };

    Ok(Network {
        config: cfg.clone(),
        store,
        backbone,
        neck,
        heads,
        hyperace,
        tunnels,
    })
}

impl Network {
    fn tunnel(&self, d: Destination) -> Option<&GatedTunnel> {
        self.tunnels.iter().find(|t| t.dest == d)
    }

    pub fn tunnels(&self) -> &[GatedTunnel] {
        &self.tunnels
    }

    pub fn hyperace(&self) -> Option<&HyperAce> {
        self.hyperace.as_ref()
    }

    /// Names of the C3AH layers, usable as probe keys.
    pub fn c3ah_layers(&self) -> Vec<&C3ah> {
        self.hyperace.iter().flat_map(|h| h.high_order_layers()).collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 {
            return Err(Error::shape("forward_detect", "input rank", 4, shape.len()));
        }
        if shape[1] != 3 {
            return Err(Error::shape("forward_detect", "input channels", 3, shape[1]));
        }
        if shape[2] == 0 || shape[3] == 0 || !shape[2].is_multiple_of(32) || !shape[3].is_multiple_of(32) {
            return Err(Error::invalid(
                "forward_detect",
                format!("input {}x{} is not divisible by 32", shape[2], shape[3]),
            ));
        }
        Ok(())
    }

    fn inject(&self, s: &mut Session, d: Destination, y: Option<Var>, f: Var) -> Result<Var> {
        let f = match (self.tunnel(d), y) {
            (Some(t), Some(y)) => t.forward(s, y, f)?,
            _ => f,
        };
        s.record_probe(d.name(), f);
        Ok(f)
    }

    /// Raw head outputs at strides 8, 16, 32, each
    /// `[B, 4·reg_bins + classes, H/s, W/s]`. Intermediate features are
    /// recorded as session probes.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Vec<Var>> {
        self.check_input(s.tape.shape(x))?;
        let bb = &self.backbone;
        let b1 = bb.stem.forward(s, x)?;
        let b2 = bb.down2.forward(s, b1)?;
        let b2 = bb.stage2.forward(s, b2)?;
        let b3 = bb.down3.forward(s, b2)?;
        let b3 = bb.stage3.forward(s, b3)?;
        let b4 = bb.down4.forward(s, b3)?;
        let b4 = bb.stage4.forward(s, b4)?;
        let b5 = bb.down5.forward(s, b4)?;
        let b5 = bb.stage5.forward(s, b5)?;
        for (name, v) in [("b1", b1), ("b2", b2), ("b3", b3), ("b4", b4), ("b5", b5)] {
            s.record_probe(name, v);
        }
        let y = match &self.hyperace {
            Some(h) => {
                let y = h.forward(s, b3, b4, b5)?;
                s.record_probe("y", y);
                Some(y)
            }
            None => None,
        };

        let nk = &self.neck;
        let p3 = self.inject(s, Destination::NeckP3, y, b3)?;
        let p4 = self.inject(s, Destination::NeckP4, y, b4)?;
        let p5 = self.inject(s, Destination::NeckP5, y, b5)?;

        let [_, _, h4, w4] = shape4(s, p4);
        let up = s.tape.resize(p5, h4, w4)?;
        let cat = s.tape.concat(&[up, p4], 1)?;
        let t4 = nk.top_down4.forward(s, cat)?;
        let t4 = self.inject(s, Destination::TopDownP4, y, t4)?;

        let [_, _, h3, w3] = shape4(s, p3);
        let up = s.tape.resize(t4, h3, w3)?;
        let cat = s.tape.concat(&[up, p3], 1)?;
        let o3 = nk.top_down3.forward(s, cat)?;
        let o3 = self.inject(s, Destination::HeadP3, y, o3)?;

        let d3 = nk.down3.forward(s, o3)?;
        let d3 = self.inject(s, Destination::BottomUpP4, y, d3)?;
        let cat = s.tape.concat(&[d3, t4], 1)?;
        let o4 = nk.bottom_up4.forward(s, cat)?;
        s.record_probe("o4", o4);

        let d4 = nk.down4.forward(s, o4)?;
        let cat = s.tape.concat(&[d4, p5], 1)?;
        let o5 = nk.bottom_up5.forward(s, cat)?;
        let o5 = self.inject(s, Destination::HeadP5, y, o5)?;

        let mut outs = Vec::with_capacity(3);
        for (head, f) in self.heads.iter().zip([o3, o4, o5]) {
            outs.push(head.forward(s, f)?);
        }
        Ok(outs)
    }

    /// Per-module forward FLOPs for an input of the given shape, in
    /// execution order. Sums exactly to the instrumented tally of
    /// [`Network::forward`].
    pub fn cost_breakdown(&self, input: Shape) -> Result<Vec<ModuleCost>> {
        self.check_input(&input)?;
        let mut out = Vec::new();
        let mut step = |name: &str, blk: &dyn Block, x: Shape| -> Result<Shape> {
            let (o, f) = blk.cost(x)?;
            out.push(ModuleCost {
                name: name.to_string(),
                flops: f,
                output: o,
            });
            Ok(o)
        };
        let bb = &self.backbone;
        let b1 = step("backbone.stem", &bb.stem, input)?;
        let x = step("backbone.down2", &bb.down2, b1)?;
        let b2 = step("backbone.stage2", &bb.stage2, x)?;
        let x = step("backbone.down3", &bb.down3, b2)?;
        let b3 = step("backbone.stage3", &bb.stage3, x)?;
        let x = step("backbone.down4", &bb.down4, b3)?;
        let b4 = step("backbone.stage4", &bb.stage4, x)?;
        let x = step("backbone.down5", &bb.down5, b4)?;
        let b5 = step("backbone.stage5", &bb.stage5, x)?;

        let y = match &self.hyperace {
            Some(h) => {
                let (y, f) = h.cost(b3, b4, b5)?;
                out.push(ModuleCost {
                    name: "hyperace".into(),
                    flops: f,
                    output: y,
                });
                Some(y)
            }
            None => None,
        };
        let inject = |d: Destination, f: Shape, out: &mut Vec<ModuleCost>| -> Result<Shape> {
            if let (Some(t), Some(y)) = (self.tunnel(d), y) {
                let (o, fl) = t.cost(y, f)?;
                out.push(ModuleCost {
                    name: format!("fullpad.{}", d.name()),
                    flops: fl,
                    output: o,
                });
            }
            Ok(f)
        };
        let p3 = inject(Destination::NeckP3, b3, &mut out)?;
        let p4 = inject(Destination::NeckP4, b4, &mut out)?;
        let p5 = inject(Destination::NeckP5, b5, &mut out)?;

        let nk = &self.neck;
        let block = |name: &str, blk: &dyn Block, x: Shape, extra: u64, out: &mut Vec<ModuleCost>| -> Result<Shape> {
            let (o, f) = blk.cost(x)?;
            out.push(ModuleCost {
                name: name.to_string(),
                flops: f + extra,
                output: o,
            });
            Ok(o)
        };
        let cat = |a: Shape, b: Shape| [a[0], a[1] + b[1], b[2], b[3]];
        let upsampled = |src: Shape, dst: Shape| (src[0] * src[1] * dst[2] * dst[3]) as u64;

        let t4 = block("neck.top_down4", &nk.top_down4, cat(p5, p4), upsampled(p5, p4), &mut out)?;
        let t4 = inject(Destination::TopDownP4, t4, &mut out)?;
        let o3 = block("neck.top_down3", &nk.top_down3, cat(t4, p3), upsampled(t4, p3), &mut out)?;
        let o3 = inject(Destination::HeadP3, o3, &mut out)?;
        let d3 = block("neck.down3", &nk.down3, o3, 0, &mut out)?;
        let d3 = inject(Destination::BottomUpP4, d3, &mut out)?;
        let o4 = block("neck.bottom_up4", &nk.bottom_up4, cat(d3, t4), 0, &mut out)?;
        let d4 = block("neck.down4", &nk.down4, o4, 0, &mut out)?;
        let o5 = block("neck.bottom_up5", &nk.bottom_up5, cat(d4, p5), 0, &mut out)?;
        let o5 = inject(Destination::HeadP5, o5, &mut out)?;
        for ((head, f), s) in self.heads.iter().zip([o3, o4, o5]).zip(STRIDES) {
            block(&format!("head.p{}", s.trailing_zeros()), head, f, 0, &mut out)?;
        }
        Ok(out)
    }

    /// Learnable parameter count of every module named in
    /// [`Network::cost_breakdown`].
    pub fn module_params(&self, module: &str) -> usize {
        let prefix = format!("{module}.");
        self.store
            .entries()
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(&prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Blends the batch statistics of a training-mode pass over `images`
    /// into every batch-norm running statistic (`momentum = 1` replaces
    /// them outright).
    pub fn calibrate_batchnorm(&mut self, images: &Tensor, momentum: f64) -> Result<()> {
        let stats = {
            let mut s = Session::new(&self.store, BnMode::Train, false);
            let x = s.tape.constant(images.clone());
            self.forward(&mut s, x)?;
            s.bn_statistics()
        };
        self.store.update_running_stats(&stats, momentum);
        Ok(())
    }

    /// Runs the backbone (and HyperACE, when present) on `image` in
    /// inference mode.
    pub fn pyramid(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let mut s = Session::eval(&self.store);
        let x = s.tape.constant(image.clone());
        self.forward(&mut s, x)?;
        let probe = |name: &str| s.probes().iter().find(|(n, _)| n == name).map(|(_, v)| s.tape.value(*v).clone());
        Ok(FeaturePyramid {
            stages: ["b1", "b2", "b3", "b4", "b5"].iter().map(|n| probe(n).expect("recorded")).collect(),
            strides: [2, 4, 8, 16, 32],
            enhanced: probe("y"),
        })
    }
}

fn shape4(s: &Session, v: Var) -> [usize; 4] {
    <[usize; 4]>::try_from(s.tape.shape(v)).expect("feature maps are NCHW")
}

/// Inference forward pass: raw head outputs at strides 8/16/32.
pub fn forward_detect(net: &Network, image: &Tensor) -> Result<Vec<Tensor>> {
    net.check_input(image.shape())?;
    let mut s = Session::eval(&net.store);
    let x = s.tape.constant(image.clone());
    let outs = net.forward(&mut s, x)?;
    Ok(outs.into_iter().map(|v| s.tape.value(v).clone()).collect())
}
