use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Block, Conv, ParamId, ParamStore, Session, Shape};
use crate::tensor::{ConvSpec, Tensor, Var};

/// Plain 1×1 convolution with bias (no norm, no activation).
#[derive(Clone, Debug)]
pub struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Projection {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, bias: f64, rng: &mut R) -> Self {
        let b = 1.0 / (cin as f64).sqrt();
        Projection {
            weight: store.add(format!("{prefix}.weight"), Tensor::uniform([cout, cin, 1, 1], -b, b, rng), true),
            bias: store.add(format!("{prefix}.bias"), Tensor::full([cout], bias), true),
            cin,
            cout,
        }
    }

    pub fn params(&self) -> usize {
        self.cout * self.cin + self.cout
    }
}

impl Block for Projection {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let y = s.tape.conv2d(x, w, ConvSpec::new(1, 0, 1))?;
        s.tape.channel_bias(y, b)
    }

    fn cost(&self, [b, c, h, w]: Shape) -> Result<(Shape, u64)> {
        if c != self.cin {
            return Err(Error::shape("projection", "input channels", self.cin, c));
        }
        let out = (b * self.cout * h * w) as u64;
        Ok(([b, self.cout, h, w], 2 * out * self.cin as u64 + out))
    }
}

/// Decoupled anchor-free head for one stride: a box branch predicting
/// `4 × reg_bins` distance-distribution logits and a class branch
/// predicting one logit per class.
#[derive(Clone, Debug)]
pub struct DetectHead {
    pub box_convs: [Conv; 2],
    pub box_out: Projection,
    pub cls_convs: [Conv; 4],
    pub cls_out: Projection,
    pub reg_bins: usize,
    pub num_classes: usize,
}

/// Class prior probability the class bias is initialized to.
pub const CLASS_PRIOR: f64 = 0.01;

impl DetectHead {
    /// `c_box`/`c_cls` are the hidden widths of the two branches.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        c_box: usize,
        c_cls: usize,
        reg_bins: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.{s}");
        let box_convs = [
            Conv::new(store, &p("box.0"), cin, c_box, 3, 1, 1, true, rng)?,
            Conv::new(store, &p("box.1"), c_box, c_box, 3, 1, 1, true, rng)?,
        ];
        let box_out = Projection::new(store, &p("box.out"), c_box, 4 * reg_bins, 1.0, rng);
        let cls_convs = [
            Conv::new(store, &p("cls.0.dw"), cin, cin, 3, 1, cin, true, rng)?,
            Conv::new(store, &p("cls.0.pw"), cin, c_cls, 1, 1, 1, true, rng)?,
            Conv::new(store, &p("cls.1.dw"), c_cls, c_cls, 3, 1, c_cls, true, rng)?,
            Conv::new(store, &p("cls.1.pw"), c_cls, c_cls, 1, 1, 1, true, rng)?,
        ];
        let prior = -((1.0 - CLASS_PRIOR) / CLASS_PRIOR).ln();
        let cls_out = Projection::new(store, &p("cls.out"), c_cls, num_classes, prior, rng);
        Ok(DetectHead {
            box_convs,
            box_out,
            cls_convs,
            cls_out,
            reg_bins,
            num_classes,
        })
    }

    pub fn out_channels(&self) -> usize {
        4 * self.reg_bins + self.num_classes
    }
}

impl Block for DetectHead {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut b = x;
        for c in &self.box_convs {
            b = c.forward(s, b)?;
        }
        let b = self.box_out.forward(s, b)?;
        let mut c = x;
        for conv in &self.cls_convs {
            c = conv.forward(s, c)?;
        }
        let c = self.cls_out.forward(s, c)?;
        s.tape.concat(&[b, c], 1)
    }

    fn cost(&self, input: Shape) -> Result<(Shape, u64)> {
        let mut total = 0;
        let mut b = input;
        for c in &self.box_convs {
            let (o, f) = c.cost(b)?;
            b = o;
            total += f;
        }
        let (b, f) = self.box_out.cost(b)?;
        total += f;
        let mut c = input;
        for conv in &self.cls_convs {
            let (o, f) = conv.cost(c)?;
            c = o;
            total += f;
        }
        let (c, f) = self.cls_out.cost(c)?;
        Ok(([input[0], b[1] + c[1], input[2], input[3]], total + f))
    }
}
