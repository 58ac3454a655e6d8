use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ahc::{ahc_flops, Activation, AhcLayer};
use crate::error::{Error, Result};
use crate::nn::{Block, Conv, ParamStore, Session, Shape};
use crate::tensor::Var;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C3ahConfig {
    /// Hidden width as a fraction of the input width.
    pub e: f64,
    pub hyperedges: usize,
    pub heads: usize,
    #[serde(default)]
    pub act: Activation,
}

impl Default for C3ahConfig {
    fn default() -> Self {
        C3ahConfig {
            e: 0.5,
            hyperedges: 8,
            heads: 4,
            act: Activation::Silu,
        }
    }
}

/// CSP-style block with adaptive hypergraph computation on the main path:
/// two 1×1 projections, AHC over the flattened pixels of one of them,
/// concat with the other, 1×1 fuse.
#[derive(Clone, Debug)]
pub struct C3ah {
    pub name: String,
    pub proj: Conv,
    pub lateral: Conv,
    pub ahc: AhcLayer,
    pub fuse: Conv,
    pub hidden: usize,
}

impl C3ah {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        cfg: &C3ahConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(cfg.e > 0.0 && cfg.e <= 1.0) {
            return Err(Error::Config(format!("hidden ratio {} outside (0, 1]", cfg.e)));
        }
        let c = (cfg.e * cin as f64 + 1e-9).floor() as usize;
        if c == 0 || !c.is_multiple_of(cfg.heads) {
            return Err(Error::invalid("c3ah", format!("hidden width {c} not divisible by {} heads", cfg.heads)));
        }
        let proj = Conv::pointwise(store, &format!("{prefix}.cv1"), cin, c, rng)?;
        let lateral = Conv::pointwise(store, &format!("{prefix}.cv2"), cin, c, rng)?;
        let ahc = AhcLayer::new(store, &format!("{prefix}.ahc"), c, cfg.hyperedges, cfg.heads, cfg.act, rng)?;
        let fuse = Conv::pointwise(store, &format!("{prefix}.cv3"), 2 * c, cout, rng)?;
        Ok(C3ah {
            name: prefix.to_string(),
            proj,
            lateral,
            ahc,
            fuse,
            hidden: c,
        })
    }

    pub fn params(&self) -> usize {
        self.proj.params() + self.lateral.params() + self.ahc.params() + self.fuse.params()
    }
}

impl Block for C3ah {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.proj.forward(s, x)?;
        let [b, c, h, w] = <[usize; 4]>::try_from(s.tape.shape(y)).expect("conv output is NCHW");
        let flat = s.tape.reshape(y, [b, c, h * w])?;
        let verts = s.tape.swap_last2(flat)?;
        let (out, a) = self.ahc.forward(s, verts)?;
        s.record_probe(self.name.clone(), a);
        let back = s.tape.swap_last2(out)?;
        let xh = s.tape.reshape(back, [b, c, h, w])?;
        let lat = self.lateral.forward(s, x)?;
        let cat = s.tape.concat(&[xh, lat], 1)?;
        self.fuse.forward(s, cat)
    }

    fn cost(&self, input: Shape) -> Result<(Shape, u64)> {
        let (mid, a) = self.proj.cost(input)?;
        let hg = ahc_flops(mid[0], mid[2] * mid[3], self.hidden, self.ahc.hyperedges, self.ahc.act);
        let (lat, b) = self.lateral.cost(input)?;
        let (out, c) = self.fuse.cost([mid[0], mid[1] + lat[1], mid[2], mid[3]])?;
        Ok((out, a + hg + b + c))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{flops, Tensor};

    #[test]
    fn hidden_width_from_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let blk = C3ah::new(&mut store, "c3ah", 64, 64, &C3ahConfig::default(), &mut rng).unwrap();
        assert_eq!(blk.hidden, 32);
        assert_eq!(store.trainable_count(), blk.params());
    }

    #[test]
    fn shape_preserved_and_cost_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = C3ahConfig {
            hyperedges: 3,
            heads: 2,
            ..Default::default()
        };
        let blk = C3ah::new(&mut store, "c3ah", 8, 12, &cfg, &mut rng).unwrap();
        let mut s = Session::eval(&store);
        let x = s.tape.constant(Tensor::uniform([2, 8, 5, 3], -1.0, 1.0, &mut rng));
        let (y, got) = flops::measure(|| blk.forward(&mut s, x).unwrap());
        let (shape, want) = blk.cost([2, 8, 5, 3]).unwrap();
        assert_eq!(s.tape.shape(y), &[2, 12, 5, 3]);
        assert_eq!(&shape, &[2, 12, 5, 3]);
        assert_eq!(got, want);
        assert_eq!(s.probes().len(), 1);
        assert_eq!(s.tape.shape(s.probes()[0].1), &[2, 15, 3]);
    }

    #[test]
    fn heads_must_divide_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = C3ahConfig { heads: 3, ..Default::default() };
        assert!(C3ah::new(&mut store, "x", 16, 16, &cfg, &mut rng).is_err());
    }
}
