use rand::Rng;

use super::config::Destination;
use crate::error::{Error, Result};
use crate::nn::{Block, Conv, ParamId, ParamStore, Session, Shape};
use crate::tensor::{Tensor, Var};

/// `f + γ·h`.
pub fn gated_fuse(s: &mut Session, f: Var, h: Var, gate: Var) -> Result<Var> {
    s.tape.gated_add(f, h, gate)
}

/// One distribution point: `Y` resized to the destination's resolution,
/// projected by a 1×1 conv and added under a learnable scalar gate.
#[derive(Clone, Debug)]
pub struct GatedTunnel {
    pub dest: Destination,
    pub proj: Conv,
    pub gate: ParamId,
}

impl GatedTunnel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dest: Destination,
        y_channels: usize,
        dest_channels: usize,
        gate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let prefix = format!("fullpad.{}", dest.name());
        let proj = Conv::pointwise(store, &format!("{prefix}.proj"), y_channels, dest_channels, rng)?;
        let gate = store.add(format!("{prefix}.gamma"), Tensor::full([1], gate), true);
        Ok(GatedTunnel { dest, proj, gate })
    }

    /// The enhanced feature `H` for a destination of spatial size `(h, w)`.
    pub fn distribute(&self, s: &mut Session, y: Var, h: usize, w: usize) -> Result<Var> {
        let r = s.tape.resize(y, h, w)?;
        self.proj.forward(s, r)
    }

    pub fn forward(&self, s: &mut Session, y: Var, f: Var) -> Result<Var> {
        let shape = s.tape.shape(f).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape("fullpad", "destination rank", 4, shape.len()));
        }
        let h = self.distribute(s, y, shape[2], shape[3])?;
        let g = s.param(self.gate);
        gated_fuse(s, f, h, g)
    }

    pub fn cost(&self, y: Shape, dest: Shape) -> Result<(Shape, u64)> {
        let resize = if (y[2], y[3]) == (dest[2], dest[3]) {
            0
        } else {
            (y[0] * y[1] * dest[2] * dest[3]) as u64
        };
        let (out, f) = self.proj.cost([y[0], y[1], dest[2], dest[3]])?;
        if out != dest {
            return Err(Error::invalid("fullpad", format!("projection gives {out:?}, destination is {dest:?}")));
        }
        Ok((dest, resize + f + 2 * dest.iter().product::<usize>() as u64))
    }

    pub fn params(&self) -> usize {
        self.proj.params() + 1
    }
}
