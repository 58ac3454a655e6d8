//! Cross-stage-partial blocks built from separable (or standard)
//! bottlenecks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{Conv, ConvUnit};
use super::params::{ParamStore, Session};
use super::{Block, Shape};
use crate::error::{Error, Result};
use crate::tensor::Var;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspBlockConfig {
    /// Bottlenecks in a C3k, or C3k modules in a C3k2.
    pub n: usize,
    /// Hidden width as a fraction of the output width.
    pub e: f64,
    /// Separable bottlenecks when set, standard convolutions otherwise.
    pub use_ds: bool,
    /// Kernel of the second (large) bottleneck stage.
    pub k: usize,
    /// Bottlenecks inside each C3k of a C3k2.
    pub inner_n: usize,
}

impl Default for CspBlockConfig {
    fn default() -> Self {
        CspBlockConfig {
            n: 1,
            e: 0.5,
            use_ds: true,
            k: 5,
            inner_n: 2,
        }
    }
}

impl CspBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.inner_n == 0 {
            return Err(Error::Config("CSP block depth must be at least 1".into()));
        }
        if !(self.e > 0.0 && self.e <= 1.0) {
            return Err(Error::Config(format!("hidden ratio {} outside (0, 1]", self.e)));
        }
        if self.k.is_multiple_of(2) {
            return Err(Error::Config(format!("bottleneck kernel {} must be odd", self.k)));
        }
        Ok(())
    }

    fn hidden(&self, op: &'static str, cout: usize) -> Result<usize> {
        let h = self.e * cout as f64;
        if (h - h.round()).abs() > 1e-9 || h < 1.0 {
            return Err(Error::invalid(op, format!("{cout} channels cannot be split with ratio {}", self.e)));
        }
        Ok(h.round() as usize)
    }
}

/// Two cascaded conv units, 3×3 then k×k, with a residual when the
/// channel count is preserved.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub first: ConvUnit,
    pub second: ConvUnit,
    pub residual: bool,
}

impl Bottleneck {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        use_ds: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let stride = 1;
        Ok(Bottleneck {
            first: ConvUnit::new(store, &format!("{prefix}.cv1"), cin, cout, 3, stride, use_ds, rng)?,
            second: ConvUnit::new(store, &format!("{prefix}.cv2"), cout, cout, k, 1, use_ds, rng)?,
            residual: cin == cout && stride == 1,
        })
    }
}

impl Block for Bottleneck {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.first.forward(s, x)?;
        let y = self.second.forward(s, y)?;
        if self.residual {
            s.tape.add(x, y)
        } else {
            Ok(y)
        }
    }

    fn cost(&self, input: Shape) -> Result<(Shape, u64)> {
        let (mid, a) = self.first.cost(input)?;
        let (out, b) = self.second.cost(mid)?;
        let add = if self.residual { out.iter().product::<usize>() as u64 } else { 0 };
        Ok((out, a + b + add))
    }
}

/// CSP-C3 block: reduce → n bottlenecks, lateral 1×1, concat, restore.
#[derive(Clone, Debug)]
pub struct C3k {
    pub reduce: Conv,
    pub lateral: Conv,
    pub restore: Conv,
    pub blocks: Vec<Bottleneck>,
}

impl C3k {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        cfg: &CspBlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.hidden("c3k", cout)?;
        let reduce = Conv::pointwise(store, &format!("{prefix}.cv1"), cin, c, rng)?;
        let lateral = Conv::pointwise(store, &format!("{prefix}.cv2"), cin, c, rng)?;
        let blocks = (0..cfg.n)
            .map(|i| Bottleneck::new(store, &format!("{prefix}.m.{i}"), c, c, cfg.k, cfg.use_ds, rng))
            .collect::<Result<Vec<_>>>()?;
        let restore = Conv::pointwise(store, &format!("{prefix}.cv3"), 2 * c, cout, rng)?;
        Ok(C3k {
            reduce,
            lateral,
            restore,
            blocks,
        })
    }
}

impl Block for C3k {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut y = self.reduce.forward(s, x)?;
        for b in &self.blocks {
            y = b.forward(s, y)?;
        }
        let lat = self.lateral.forward(s, x)?;
        let cat = s.tape.concat(&[y, lat], 1)?;
        self.restore.forward(s, cat)
    }

    fn cost(&self, input: Shape) -> Result<(Shape, u64)> {
        let (mut shape, mut total) = self.reduce.cost(input)?;
        for b in &self.blocks {
            let (s, f) = b.cost(shape)?;
            shape = s;
            total += f;
        }
        let (lat, f) = self.lateral.cost(input)?;
        total += f;
        let (out, f) = self.restore.cost([shape[0], shape[1] + lat[1], shape[2], shape[3]])?;
        Ok((out, total + f))
    }
}

/// C3k2 block: 1×1 unify, split in half, one half through a chain of C3k
/// modules and the other kept as a shortcut, concat, 1×1 fuse.
#[derive(Clone, Debug)]
pub struct C3k2 {
    pub unify: Conv,
    pub fuse: Conv,
    pub inner: Vec<C3k>,
    pub hidden: usize,
}

impl C3k2 {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        cfg: &CspBlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.hidden("c3k2", cout)?;
        let unify = Conv::pointwise(store, &format!("{prefix}.cv1"), cin, 2 * c, rng)?;
        let inner_cfg = CspBlockConfig {
            n: cfg.inner_n,
            e: 0.5,
            ..cfg.clone()
        };
        if c % 2 != 0 {
            return Err(Error::invalid("c3k2", format!("hidden width {c} must be even for the inner C3k")));
        }
        let inner = (0..cfg.n)
            .map(|i| C3k::new(store, &format!("{prefix}.m.{i}"), c, c, &inner_cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv::pointwise(store, &format!("{prefix}.cv2"), 2 * c, cout, rng)?;
        Ok(C3k2 {
            unify,
            fuse,
            inner,
            hidden: c,
        })
    }
}

impl Block for C3k2 {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.unify.forward(s, x)?;
        let parts = s.tape.split(y, &[self.hidden, self.hidden], 1)?;
        let mut path = parts[0];
        for m in &self.inner {
            path = m.forward(s, path)?;
        }
        let cat = s.tape.concat(&[path, parts[1]], 1)?;
        self.fuse.forward(s, cat)
    }

    fn cost(&self, input: Shape) -> Result<(Shape, u64)> {
        let (u, mut total) = self.unify.cost(input)?;
        let mut path = [u[0], self.hidden, u[2], u[3]];
        for m in &self.inner {
            let (s, f) = m.cost(path)?;
            path = s;
            total += f;
        }
        let (out, f) = self.fuse.cost([u[0], path[1] + self.hidden, u[2], u[3]])?;
        Ok((out, total + f))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{flops, Tensor};

    fn zero_weights(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.entry(id).name.clone();
            if name.ends_with("weight") {
                let t = store.get_mut(id);
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn residual_only_when_channels_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let same = Bottleneck::new(&mut store, "a", 8, 8, 5, true, &mut rng).unwrap();
        let diff = Bottleneck::new(&mut store, "b", 8, 12, 5, true, &mut rng).unwrap();
        assert!(same.residual);
        assert!(!diff.residual);
    }

    #[test]
    fn zeroed_bottleneck_is_pure_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let b = Bottleneck::new(&mut store, "b", 6, 6, 5, true, &mut rng).unwrap();
        zero_weights(&mut store);
        let mut s = Session::eval(&store);
        let xt = Tensor::uniform([1, 6, 5, 5], -1.0, 1.0, &mut rng);
        let x = s.tape.constant(xt.clone());
        let y = b.forward(&mut s, x).unwrap();
        assert!(s.tape.value(y).bit_eq(&xt));
    }

    #[test]
    fn zeroed_projecting_bottleneck_is_shift_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let b = Bottleneck::new(&mut store, "b", 4, 6, 3, true, &mut rng).unwrap();
        zero_weights(&mut store);
        let beta = store.find("b.cv2.bn.beta").unwrap();
        *store.get_mut(beta) = Tensor::full([6], 0.7);
        let mut s = Session::eval(&store);
        let x = s.tape.constant(Tensor::uniform([1, 4, 5, 5], -1.0, 1.0, &mut rng));
        let y = b.forward(&mut s, x).unwrap();
        let want = 0.7 / (1.0 + (-0.7f64).exp());
        assert!(s.tape.value(y).data().iter().all(|&v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn spatial_size_preserved_and_cost_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let cfg = CspBlockConfig { n: 2, ..Default::default() };
        let c3k = C3k::new(&mut store, "c3k", 8, 12, &cfg, &mut rng).unwrap();
        let c3k2 = C3k2::new(&mut store, "c3k2", 8, 16, &cfg, &mut rng).unwrap();
        let blocks: [&dyn Block; 2] = [&c3k, &c3k2];
        for blk in blocks {
            let mut s = Session::eval(&store);
            let x = s.tape.constant(Tensor::uniform([2, 8, 6, 5], -1.0, 1.0, &mut rng));
            let (y, got) = flops::measure(|| blk.forward(&mut s, x).unwrap());
            let (shape, want) = blk.cost([2, 8, 6, 5]).unwrap();
            assert_eq!(&s.tape.shape(y)[2..], &[6, 5]);
            assert_eq!(s.tape.shape(y), &shape[..]);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn indivisible_split_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = CspBlockConfig { e: 0.25, ..Default::default() };
        assert!(C3k2::new(&mut store, "x", 8, 6, &cfg, &mut rng).is_err());
    }
}
