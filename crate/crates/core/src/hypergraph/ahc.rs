use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Session};
use crate::tensor::{gemm, Tape, Tensor, Var};

/// Nonlinearity applied after the hyperedge and vertex projections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Silu => tape.silu(x),
            Activation::Identity => x,
        }
    }

    fn flops(self, elems: usize) -> u64 {
        match self {
            Activation::Silu => elems as u64,
            Activation::Identity => 0,
        }
    }
}

/// Learnable state of one adaptive hypergraph layer.
#[derive(Clone, Debug)]
pub struct AhcParams {
    pub channels: usize,
    pub hyperedges: usize,
    pub heads: usize,
    /// Base prototypes `[M, C]`.
    pub prototypes: Tensor,
    /// Context mapping `[M·C, 2C]` and its bias `[M·C]`.
    pub phi_weight: Tensor,
    pub phi_bias: Tensor,
    /// Query, hyperedge and vertex projections, each `[C, C]`, no bias.
    pub w_pre: Tensor,
    pub w_e: Tensor,
    pub w_v: Tensor,
    pub act: Activation,
}

fn check_dims(channels: usize, hyperedges: usize, heads: usize) -> Result<()> {
    if hyperedges == 0 {
        return Err(Error::Config("hyperedge count must be at least 1".into()));
    }
    if channels == 0 || heads == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::Config(format!("{channels} channels are not divisible into {heads} heads")));
    }
    Ok(())
}

fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let b = 1.0 / (cols as f64).sqrt();
    Tensor::uniform([rows, cols], -b, b, rng)
}

fn prototype_init<R: Rng + ?Sized>(m: usize, c: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    Tensor::from_fn([m, c], |_| normal.sample(rng))
}

impl AhcParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, hyperedges: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_dims(channels, hyperedges, heads)?;
        let (c, m) = (channels, hyperedges);
        Ok(AhcParams {
            channels,
            hyperedges,
            heads,
            prototypes: prototype_init(m, c, rng),
            phi_weight: uniform_fan_in(m * c, 2 * c, rng),
            phi_bias: Tensor::zeros([m * c]),
            w_pre: uniform_fan_in(c, c, rng),
            w_e: uniform_fan_in(c, c, rng),
            w_v: uniform_fan_in(c, c, rng),
            act: Activation::Silu,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.channels, self.hyperedges, self.heads)?;
        let (c, m) = (self.channels, self.hyperedges);
        let expect: [(&str, &Tensor, Vec<usize>); 6] = [
            ("prototypes", &self.prototypes, vec![m, c]),
            ("phi_weight", &self.phi_weight, vec![m * c, 2 * c]),
            ("phi_bias", &self.phi_bias, vec![m * c]),
            ("w_pre", &self.w_pre, vec![c, c]),
            ("w_e", &self.w_e, vec![c, c]),
            ("w_v", &self.w_v, vec![c, c]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::WeightShape {
                    name: name.into(),
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        ahc_param_count(self.channels, self.hyperedges)
    }

    /// The six learnable tensors in [`AhcVars`] order.
    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.prototypes, &self.phi_weight, &self.phi_bias, &self.w_pre, &self.w_e, &self.w_v]
    }

    /// Puts the six tensors on `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> AhcVars {
        let [p0, pw, pb, wp, we, wv] = self.tensors().map(|t| tape.leaf(t.clone(), requires_grad));
        AhcVars::from_array([p0, pw, pb, wp, we, wv])
    }
}

pub fn ahc_param_count(c: usize, m: usize) -> usize {
    m * c + 2 * c * m * c + m * c + 3 * c * c
}

/// Tape handles for an AHC layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct AhcVars {
    pub prototypes: Var,
    pub phi_weight: Var,
    pub phi_bias: Var,
    pub w_pre: Var,
    pub w_e: Var,
    pub w_v: Var,
}

impl AhcVars {
    pub fn from_array(v: [Var; 6]) -> Self {
        AhcVars {
            prototypes: v[0],
            phi_weight: v[1],
            phi_bias: v[2],
            w_pre: v[3],
            w_e: v[4],
            w_v: v[5],
        }
    }
}

/// `x[B, R, Cin] · wᵀ` for `w[Cout, Cin]`.
fn linear3(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let flat = tape.reshape(x, [s[0] * s[1], s[2]])?;
    let y = tape.matmul_t(flat, w, false, true)?;
    let cout = tape.shape(y)[1];
    tape.reshape(y, [s[0], s[1], cout])
}

fn vertex_dims(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    let s = tape.shape(x);
    if s.len() != 3 {
        return Err(Error::shape("ahc", "vertex tensor rank", 3, s.len()));
    }
    if s[1] == 0 {
        return Err(Error::invalid("ahc", "vertex set is empty"));
    }
    Ok((s[0], s[1], s[2]))
}

/// Participation matrix `A[B, N, M]` for vertices `x[B, N, C]`: context
/// pooling, prototype offset, per-head similarity, softmax over vertices.
pub fn participation(tape: &mut Tape, x: Var, p: &AhcVars, heads: usize) -> Result<Var> {
    let (b, _n, c) = vertex_dims(tape, x)?;
    let m = tape.shape(p.prototypes)[0];
    if tape.shape(p.prototypes)[1] != c {
        return Err(Error::shape("ahc", "prototype channels", c, tape.shape(p.prototypes)[1]));
    }
    let avg = tape.mean_axis(x, 1)?;
    let max = tape.max_axis(x, 1)?;
    let ctx = tape.concat(&[avg, max], 1)?;
    let delta = tape.matmul_t(ctx, p.phi_weight, false, true)?;
    let delta = tape.add_broadcast(delta, p.phi_bias)?;
    let delta = tape.reshape(delta, [b, m, c])?;
    let protos = tape.add_broadcast(delta, p.prototypes)?;
    let z = linear3(tape, x, p.w_pre)?;
    let sim = tape.head_similarity(z, protos, heads)?;
    tape.softmax(sim, 1)
}

/// Two-stage message passing: hyperedges gather from vertices, then
/// vertices gather from hyperedges. Linear in N.
pub fn convolve(tape: &mut Tape, x: Var, a: Var, p: &AhcVars, act: Activation) -> Result<Var> {
    let (b, n, _c) = vertex_dims(tape, x)?;
    let sa = tape.shape(a).to_vec();
    if sa.len() != 3 || sa[0] != b || sa[1] != n {
        return Err(Error::invalid("hypergraph_convolve", format!("participation shape {sa:?} does not match {n} vertices")));
    }
    let gathered = tape.matmul_t(a, x, true, false)?;
    let edges = linear3(tape, gathered, p.w_e)?;
    let edges = act.apply(tape, edges);
    let back = tape.matmul(a, edges)?;
    let out = linear3(tape, back, p.w_v)?;
    Ok(act.apply(tape, out))
}

/// Full adaptive hypergraph computation; returns (output, participation).
pub fn ahc(tape: &mut Tape, x: Var, p: &AhcVars, heads: usize, act: Activation) -> Result<(Var, Var)> {
    let a = participation(tape, x, p, heads)?;
    let y = convolve(tape, x, a, p, act)?;
    Ok((y, a))
}

/// Closed-form FLOPs of [`ahc`] under the crate's counting conventions.
pub fn ahc_flops(batch: usize, n: usize, c: usize, m: usize, act: Activation) -> u64 {
    let (b, n, c, m) = (batch as u64, n as u64, c as u64, m as u64);
    let context = 2 * b * c + 2 * b * (2 * c) * (m * c) + 2 * b * m * c;
    let query = 2 * b * n * c * c;
    let sim = 2 * b * n * m * c + b * n * m + b * n * m;
    let gather = 2 * b * m * n * c + 2 * b * m * c * c;
    let scatter = 2 * b * n * m * c + 2 * b * n * c * c;
    context + query + sim + gather + scatter + act.flops((b * m * c) as usize) + act.flops((b * n * c) as usize)
}

/// Vertices of a single feature map: `N = H·W` rows of `C` features.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexSet {
    features: Tensor,
    height: usize,
    width: usize,
}

impl VertexSet {
    pub fn new(features: Tensor, height: usize, width: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape("vertex_set", "rank", 2, features.rank()));
        }
        if features.shape()[0] != height * width {
            return Err(Error::shape("vertex_set", "vertex count (H·W)", height * width, features.shape()[0]));
        }
        Ok(VertexSet { features, height, width })
    }

    /// Flattens `[C, H, W]` (or `[1, C, H, W]`) pixels into vertices.
    pub fn from_feature_map(map: &Tensor) -> Result<Self> {
        let s = map.shape();
        let (c, h, w) = match s.len() {
            3 => (s[0], s[1], s[2]),
            4 if s[0] == 1 => (s[1], s[2], s[3]),
            _ => return Err(Error::invalid("vertex_set", format!("expected [C,H,W] or [1,C,H,W], got {s:?}"))),
        };
        let d = map.data();
        let feats = Tensor::from_fn([h * w, c], |k| {
            let (i, ch) = (k / c, k % c);
            d[ch * h * w + i]
        });
        Ok(VertexSet {
            features: feats,
            height: h,
            width: w,
        })
    }

    /// Inverse of [`VertexSet::from_feature_map`], giving `[1, C, H, W]`.
    pub fn to_feature_map(&self) -> Tensor {
        let (n, c) = (self.len(), self.channels());
        let d = self.features.data();
        Tensor::from_fn([1, c, self.height, self.width], |k| {
            let (ch, i) = (k / n, k % n);
            d[i * c + ch]
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Continuous vertex-to-hyperedge participation degrees, `N × M`, each
/// column a distribution over vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticipationMatrix {
    a: Tensor,
}

impl ParticipationMatrix {
    pub fn new(a: Tensor) -> Result<Self> {
        if a.rank() != 2 {
            return Err(Error::shape("participation", "rank", 2, a.rank()));
        }
        Ok(ParticipationMatrix { a })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    pub fn vertices(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn hyperedges(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn get(&self, vertex: usize, edge: usize) -> f64 {
        self.a.data()[vertex * self.hyperedges() + edge]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let m = self.hyperedges();
        let mut s = vec![0.0; m];
        for row in self.a.data().chunks(m) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }
}

fn vertices_on(tape: &mut Tape, x: &VertexSet, p: &AhcParams) -> Result<Var> {
    p.validate()?;
    if x.channels() != p.channels {
        return Err(Error::shape("ahc", "vertex channels", p.channels, x.channels()));
    }
    let t = x.features.clone().reshape([1, x.len(), x.channels()])?;
    Ok(tape.constant(t))
}

fn strip_batch(tape: &Tape, v: Var) -> Result<Tensor> {
    let s = tape.shape(v);
    let shape = [s[1], s[2]];
    tape.value(v).clone().reshape(shape)
}

pub fn generate_hyperedges(x: &VertexSet, p: &AhcParams) -> Result<ParticipationMatrix> {
    let mut tape = Tape::new();
    let xv = vertices_on(&mut tape, x, p)?;
    let vars = p.bind(&mut tape, false);
    let a = participation(&mut tape, xv, &vars, p.heads)?;
    ParticipationMatrix::new(strip_batch(&tape, a)?)
}

/// Vertices per tile of the tape-free message passing.
const TILE: usize = 256;

fn activate(act: Activation, v: &mut [f64]) {
    if act == Activation::Silu {
        v.iter_mut().for_each(|x| *x /= 1.0 + (-*x).exp());
    }
}

/// Message passing for a fixed participation matrix, outside any tape.
///
/// Streams vertices in tiles so no `N × C` intermediate is materialized:
/// one pass gathers the hyperedge features, a second scatters them back
/// and projects each tile straight into the output. Agrees with
/// [`convolve`] up to summation order.
pub fn hypergraph_convolve(x: &VertexSet, a: &ParticipationMatrix, p: &AhcParams) -> Result<VertexSet> {
    p.validate()?;
    if x.channels() != p.channels {
        return Err(Error::shape("hypergraph_convolve", "vertex channels", p.channels, x.channels()));
    }
    if a.vertices() != x.len() {
        return Err(Error::shape("hypergraph_convolve", "participation rows", x.len(), a.vertices()));
    }
    if a.hyperedges() != p.hyperedges {
        return Err(Error::shape("hypergraph_convolve", "participation columns", p.hyperedges, a.hyperedges()));
    }
    let (n, c, m) = (x.len(), x.channels(), a.hyperedges());
    let (xd, ad) = (x.features.data(), a.a.data());
    let tiles = || (0..n).step_by(TILE).map(move |s| (s, TILE.min(n - s)));

    let mut gathered = vec![0.0; m * c];
    for (s, rows) in tiles() {
        gemm(m, rows, c, &ad[s * m..], true, &xd[s * c..], false, &mut gathered, 1.0);
    }
    let mut edges = vec![0.0; m * c];
    gemm(m, c, c, &gathered, false, p.w_e.data(), true, &mut edges, 0.0);
    activate(p.act, &mut edges);

    let mut out = vec![0.0; n * c];
    let mut back = vec![0.0; TILE * c];
    for (s, rows) in tiles() {
        gemm(rows, m, c, &ad[s * m..], false, &edges, false, &mut back, 0.0);
        let dst = &mut out[s * c..(s + rows) * c];
        gemm(rows, c, c, &back, false, p.w_v.data(), true, dst, 0.0);
        activate(p.act, dst);
    }
    VertexSet::new(Tensor::new(vec![n, c], out)?, x.height, x.width)
}

pub fn ahc_forward(x: &VertexSet, p: &AhcParams) -> Result<VertexSet> {
    let mut tape = Tape::new();
    let xv = vertices_on(&mut tape, x, p)?;
    let vars = p.bind(&mut tape, false);
    let (y, _) = ahc(&mut tape, xv, &vars, p.heads, p.act)?;
    VertexSet::new(strip_batch(&tape, y)?, x.height, x.width)
}

/// An AHC layer whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AhcLayer {
    pub ids: [ParamId; 6],
    pub channels: usize,
    pub hyperedges: usize,
    pub heads: usize,
    pub act: Activation,
}

impl AhcLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        hyperedges: usize,
        heads: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let p = AhcParams::init(channels, hyperedges, heads, rng)?;
        let names = ["prototypes", "phi.weight", "phi.bias", "w_pre", "w_e", "w_v"];
        let ts = p.tensors();
        let ids = std::array::from_fn(|i| store.add(format!("{prefix}.{}", names[i]), ts[i].clone(), true));
        Ok(AhcLayer {
            ids,
            channels,
            hyperedges,
            heads,
            act,
        })
    }

    /// Runs on vertices `x[B, N, C]`; returns (output, participation).
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let vars = AhcVars::from_array(self.ids.map(|id| s.param(id)));
        ahc(&mut s.tape, x, &vars, self.heads, self.act)
    }

    /// Copies the layer's current values out of the store.
    pub fn snapshot(&self, store: &ParamStore) -> AhcParams {
        let t = self.ids.map(|id| store.get(id).clone());
        let [prototypes, phi_weight, phi_bias, w_pre, w_e, w_v] = t;
        AhcParams {
            channels: self.channels,
            hyperedges: self.hyperedges,
            heads: self.heads,
            prototypes,
            phi_weight,
            phi_bias,
            w_pre,
            w_e,
            w_v,
            act: self.act,
        }
    }

    pub fn params(&self) -> usize {
        ahc_param_count(self.channels, self.hyperedges)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::flops;

    fn random_vertices(n: usize, c: usize, rng: &mut ChaCha8Rng) -> VertexSet {
        VertexSet::new(Tensor::uniform([n, c], -1.0, 1.0, rng), n, 1).unwrap()
    }

    #[test]
    fn identical_vertices_give_uniform_participation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AhcParams::init(8, 3, 2, &mut rng).unwrap();
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = VertexSet::new(Tensor::from_fn([5, 8], |k| row[k % 8]), 5, 1).unwrap();
        let a = generate_hyperedges(&x, &p).unwrap();
        assert!(a.matrix().data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn single_vertex_participates_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AhcParams::init(4, 5, 2, &mut rng).unwrap();
        let a = generate_hyperedges(&random_vertices(1, 4, &mut rng), &p).unwrap();
        assert!(a.matrix().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_participation_gives_silu_of_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AhcParams::init(4, 2, 2, &mut rng).unwrap();
        let x = random_vertices(6, 4, &mut rng);
        let a = ParticipationMatrix::new(Tensor::zeros([6, 2])).unwrap();
        let y = hypergraph_convolve(&x, &a, &p).unwrap();
        assert!(y.features().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_uniform_hyperedge_with_identity_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let mut p = AhcParams::init(3, 1, 1, &mut rng).unwrap();
        p.w_e = Tensor::eye(3);
        p.w_v = Tensor::eye(3);
        p.act = Activation::Identity;
        let x = random_vertices(n, 3, &mut rng);
        let a = ParticipationMatrix::new(Tensor::full([n, 1], 1.0 / n as f64)).unwrap();
        let y = hypergraph_convolve(&x, &a, &p).unwrap();
        // every vertex receives (1/N) times the vertex mean
        for ch in 0..3 {
            let mean: f64 = (0..n).map(|i| x.features().at(&[i, ch])).sum::<f64>() / n as f64;
            for i in 0..n {
                assert!((y.features().at(&[i, ch]) - mean / n as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AhcParams::init(6, 2, 4, &mut rng).is_err());
    }

    #[test]
    fn mismatched_participation_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AhcParams::init(4, 2, 2, &mut rng).unwrap();
        let x = random_vertices(6, 4, &mut rng);
        let a = ParticipationMatrix::new(Tensor::zeros([5, 2])).unwrap();
        assert!(hypergraph_convolve(&x, &a, &p).is_err());
    }

    #[test]
    fn feature_map_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = Tensor::uniform([1, 3, 4, 5], -1.0, 1.0, &mut rng);
        let v = VertexSet::from_feature_map(&map).unwrap();
        assert_eq!(v.len(), 20);
        assert_eq!(v.features().at(&[7, 2]), map.at(&[0, 2, 1, 2]));
        assert!(v.to_feature_map().bit_eq(&map));
    }

    #[test]
    fn flops_formula_matches_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for act in [Activation::Silu, Activation::Identity] {
            let mut p = AhcParams::init(8, 3, 4, &mut rng).unwrap();
            p.act = act;
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::uniform([2, 10, 8], -1.0, 1.0, &mut rng));
            let vars = p.bind(&mut tape, false);
            let (_, got) = flops::measure(|| ahc(&mut tape, x, &vars, 4, act).unwrap());
            assert_eq!(got, ahc_flops(2, 10, 8, 3, act));
        }
    }
}
