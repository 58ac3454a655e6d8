use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::hypergraph::{C3ah, C3ahConfig};
use crate::nn::{Block, C3k, Conv, CspBlockConfig, ParamStore, Session, Shape};
use crate::tensor::Var;

/// Correlation enhancement over the three deepest backbone stages.
///
/// B3 and B5 are brought to B4's resolution, everything is fused by a 1×1
/// conv and split three ways: a high-order path of parallel C3AH blocks, a
/// low-order path of stacked C3k blocks and an untouched shortcut. The
/// three are concatenated and fused into `Y`.
#[derive(Clone, Debug)]
pub struct HyperAce {
    pub fuse_in: Conv,
    pub split: [usize; 3],
    pub high: Vec<C3ah>,
    pub low: Vec<C3k>,
    pub fuse_out: Conv,
}

pub fn split_sizes(total: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let h = (total as f64 * ratios[0]).round() as usize;
    let l = (total as f64 * ratios[1]).round() as usize;
    if h == 0 || l == 0 || h + l >= total {
        return Err(Error::Config(format!("{total} channels cannot be split by {ratios:?}")));
    }
    Ok([h, l, total - h - l])
}

impl HyperAce {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: [usize; 3],
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let hc = &cfg.hyperace;
        let fused = cfg.width(hc.fused_channels);
        let out = cfg.width(hc.out_channels);
        let split = split_sizes(fused, hc.split)?;
        let fuse_in = Conv::pointwise(store, &format!("{prefix}.fuse_in"), in_channels.iter().sum(), fused, rng)?;
        let c3ah = C3ahConfig {
            e: hc.e,
            hyperedges: hc.hyperedges,
            heads: hc.heads,
            act: hc.act,
        };
        let high = (0..hc.branches)
            .map(|i| C3ah::new(store, &format!("{prefix}.high.{i}"), split[0], split[0], &c3ah, rng))
            .collect::<Result<Vec<_>>>()?;
        let csp = CspBlockConfig {
            n: cfg.depth(2),
            e: 0.5,
            use_ds: cfg.use_ds,
            k: cfg.large_kernel,
            inner_n: 1,
        };
        let low = (0..hc.stacked)
            .map(|i| C3k::new(store, &format!("{prefix}.low.{i}"), split[1], split[1], &csp, rng))
            .collect::<Result<Vec<_>>>()?;
        let cat = hc.branches * split[0] + split[1] + split[2];
        let fuse_out = Conv::pointwise(store, &format!("{prefix}.fuse_out"), cat, out, rng)?;
        Ok(HyperAce {
            fuse_in,
            split,
            high,
            low,
            fuse_out,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.fuse_out.cout
    }

    pub fn high_order_layers(&self) -> impl Iterator<Item = &C3ah> {
        self.high.iter()
    }

    pub fn forward(&self, s: &mut Session, b3: Var, b4: Var, b5: Var) -> Result<Var> {
        let [_, _, h, w] = nchw(s, b4)?;
        let [_, _, h3, w3] = nchw(s, b3)?;
        let [_, _, h5, w5] = nchw(s, b5)?;
        if (h3, w3) != (2 * h, 2 * w) || (h, w) != (2 * h5, 2 * w5) {
            return Err(Error::invalid(
                "hyperace",
                format!("pyramid sizes {h3}x{w3}, {h}x{w}, {h5}x{w5} are not strides 8/16/32"),
            ));
        }
        let d3 = s.tape.resize(b3, h, w)?;
        let u5 = s.tape.resize(b5, h, w)?;
        let cat = s.tape.concat(&[d3, b4, u5], 1)?;
        let xb = self.fuse_in.forward(s, cat)?;
        let parts = s.tape.split(xb, &self.split, 1)?;
        let mut pieces = Vec::with_capacity(self.high.len() + 2);
        for blk in &self.high {
            pieces.push(blk.forward(s, parts[0])?);
        }
        let mut low = parts[1];
        for blk in &self.low {
            low = blk.forward(s, low)?;
        }
        pieces.push(low);
        pieces.push(parts[2]);
        let cat = s.tape.concat(&pieces, 1)?;
        self.fuse_out.forward(s, cat)
    }

    pub fn cost(&self, b3: Shape, b4: Shape, b5: Shape) -> Result<(Shape, u64)> {
        let [b, _, h, w] = b4;
        let plane = (b * h * w) as u64;
        let mut total = plane * (b3[1] + b5[1]) as u64;
        let (xb, f) = self.fuse_in.cost([b, b3[1] + b4[1] + b5[1], h, w])?;
        total += f;
        let mut cat = 0;
        for blk in &self.high {
            let (o, f) = blk.cost([b, self.split[0], xb[2], xb[3]])?;
            total += f;
            cat += o[1];
        }
        let mut low = [b, self.split[1], h, w];
        for blk in &self.low {
            let (o, f) = blk.cost(low)?;
            low = o;
            total += f;
        }
        cat += low[1] + self.split[2];
        let (out, f) = self.fuse_out.cost([b, cat, h, w])?;
        Ok((out, total + f))
    }
}

fn nchw(s: &Session, v: Var) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(s.tape.shape(v)).map_err(|_| Error::shape("hyperace", "rank", 4, s.tape.shape(v).len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_respects_ratios() {
        assert_eq!(split_sizes(256, [0.5, 0.25, 0.25]).unwrap(), [128, 64, 64]);
        assert!(split_sizes(2, [0.5, 0.25, 0.25]).is_err());
    }
}
