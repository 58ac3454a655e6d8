//! Oracle-equivalence and property checks, shared by the `selftest`
//! command and the acceptance run. Each check returns a measured value and
//! its threshold; none of them asserts.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hypergraph::{ahc_forward, generate_hyperedges, hypergraph_convolve, AhcParams, VertexSet};
use crate::oracle::{self, AhcRef};
use crate::runtime::{decode, encode, nms, Detection, GtBox, HeadLayout};
use crate::tensor::{ConvSpec, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl SelfCheck {
    fn at_most(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        SelfCheck {
            name,
            value,
            threshold,
            pass: value <= threshold,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (limit {:.1e}) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

/// Scalar-loop view of trained-or-initialized AHC parameters.
pub fn ahc_reference(p: &AhcParams, n: usize) -> AhcRef {
    AhcRef {
        n,
        c: p.channels,
        m: p.hyperedges,
        heads: p.heads,
        p0: p.prototypes.data().to_vec(),
        phi_w: p.phi_weight.data().to_vec(),
        phi_b: p.phi_bias.data().to_vec(),
        w_pre: p.w_pre.data().to_vec(),
        w_e: p.w_e.data().to_vec(),
        w_v: p.w_v.data().to_vec(),
    }
}

/// Initial parameters with prototypes and context bias spread out, so the
/// participation softmax is far from uniform.
pub fn sharp_ahc_params<R: Rng + ?Sized>(c: usize, m: usize, heads: usize, rng: &mut R) -> Result<AhcParams> {
    let mut p = AhcParams::init(c, m, heads, rng)?;
    p.prototypes = Tensor::uniform([m, c], -2.0, 2.0, rng);
    p.phi_bias = Tensor::uniform([m * c], -0.5, 0.5, rng);
    Ok(p)
}

/// Max |library − six-loop oracle| over `cases` random conv shapes,
/// including strided, padded, grouped and depthwise ones.
pub fn conv_oracle(cases: usize, seed: u64) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let groups = [1, 1, 2, 0][case % 4];
        let cin_g = rng.random_range(1..=4);
        let (c, cout, groups) = match groups {
            // Depthwise.
            0 => {
                let c = rng.random_range(1..=6);
                (c, c, c)
            }
            g => (cin_g * g, rng.random_range(1..=3) * g, g),
        };
        let k = rng.random_range(1..=5);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=k / 2 + 1);
        let h = rng.random_range(k.max(1)..=9);
        let w = rng.random_range(k.max(1)..=9);
        let n = rng.random_range(1..=2);
        let x = Tensor::uniform([n, c, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::uniform([cout, c / groups, k, k], -1.0, 1.0, &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.constant(wt.clone());
        let y = t.conv2d(xv, wv, ConvSpec::new(stride, pad, groups))?;
        let (want, shape) = oracle::conv2d(x.data(), [n, c, h, w], wt.data(), cout, k, stride, pad, groups);
        let got = t.value(y);
        if got.shape() != shape {
            return Ok(SelfCheck::at_most("conv2d vs oracle", f64::INFINITY, 1e-10, format!("shape {:?} vs {shape:?}", got.shape())));
        }
        worst = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(SelfCheck::at_most("conv2d vs oracle", worst, 1e-10, format!("{cases} shapes")))
}

/// AHC forward and participation vs the scalar oracle at N=4, C=4, M=2,
/// two heads.
pub fn ahc_oracle(trials: usize, seed: u64) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = sharp_ahc_params(4, 2, 2, &mut rng)?;
        let x = VertexSet::new(Tensor::uniform([4, 4], -2.0, 2.0, &mut rng), 2, 2)?;
        let r = ahc_reference(&p, 4);
        let a = generate_hyperedges(&x, &p)?;
        let y = ahc_forward(&x, &p)?;
        let diffs = a
            .matrix()
            .data()
            .iter()
            .zip(r.participation(x.features().data()))
            .chain(y.features().data().iter().zip(r.forward(x.features().data())))
            .map(|(u, v)| (u - v).abs());
        worst = diffs.fold(worst, f64::max);
    }
    Ok(SelfCheck::at_most("AHC vs oracle (N=4 C=4 M=2 h=2)", worst, 1e-10, format!("{trials} trials")))
}

/// Column-sum error, entry range and the uniform-input case over `trials`
/// random vertex sets.
pub fn participation_normalization(trials: usize, seed: u64) -> Result<Vec<SelfCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut col_err, mut outside, mut uniform_err) = (0.0f64, 0usize, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..trials {
        let n = rng.random_range(2..=40);
        let heads = [1, 2, 4][t % 3];
        let c = heads * rng.random_range(1..=4);
        let m = rng.random_range(1..=6);
        let p = sharp_ahc_params(c, m, heads, &mut rng)?;
        let x = VertexSet::new(Tensor::uniform([n, c], -3.0, 3.0, &mut rng), n, 1)?;
        let a = generate_hyperedges(&x, &p)?;
        col_err = a.column_sums().iter().map(|s| (s - 1.0).abs()).fold(col_err, f64::max);
        for &v in a.matrix().data() {
            lo = lo.min(v);
            hi = hi.max(v);
            if !(v > 0.0 && v < 1.0) {
                outside += 1;
            }
        }
        // Identical vertices: every hyperedge must spread evenly.
        let row = Tensor::uniform([c], -3.0, 3.0, &mut rng);
        let same = Tensor::from_fn([n, c], |k| row.data()[k % c]);
        let a = generate_hyperedges(&VertexSet::new(same, n, 1)?, &p)?;
        uniform_err = a.matrix().data().iter().map(|v| (v - 1.0 / n as f64).abs()).fold(uniform_err, f64::max);
    }
    Ok(vec![
        SelfCheck::at_most("participation column sums", col_err, 1e-9, format!("{trials} inputs")),
        SelfCheck::at_most(
            "participation entries in (0,1)",
            outside as f64,
            0.0,
            format!("range [{lo:.3e}, {hi:.6}]"),
        ),
        SelfCheck::at_most("uniform input gives 1/N", uniform_err, 1e-9, format!("{trials} inputs")),
    ])
}

/// Max deviation of `ahc_forward(Px)` from `P·ahc_forward(x)`.
pub fn permutation_equivariance(trials: usize, seed: u64) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(2..=64);
        let c = 2 * rng.random_range(1..=6);
        let p = sharp_ahc_params(c, rng.random_range(1..=8), 2, &mut rng)?;
        let x = Tensor::uniform([n, c], -1.0, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let xp = Tensor::from_fn([n, c], |k| x.data()[perm[k / c] * c + k % c]);
        let y = ahc_forward(&VertexSet::new(x, n, 1)?, &p)?;
        let yp = ahc_forward(&VertexSet::new(xp, n, 1)?, &p)?;
        for i in 0..n {
            for ch in 0..c {
                worst = worst.max((yp.features().data()[i * c + ch] - y.features().data()[perm[i] * c + ch]).abs());
            }
        }
    }
    Ok(SelfCheck::at_most("permutation equivariance", worst, 1e-9, format!("{trials} trials")))
}

fn random_detections(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..60.0);
            let y = rng.random_range(0.0..60.0);
            // Coarse grids make exact IoU ties and duplicates common.
            let w = rng.random_range(1..=6) as f64 * 4.0;
            let h = rng.random_range(1..=6) as f64 * 4.0;
            let (x, y) = ((x / 4.0f64).floor() * 4.0, (y / 4.0f64).floor() * 4.0);
            Detection {
                bbox: [x, y, x + w, y + h],
                class: rng.random_range(0..3),
                score: rng.random_range(1..=20) as f64 / 20.0,
            }
        })
        .collect()
}

/// Sets where `nms` differs from the brute-force reference, plus sets
/// where a second pass changes the result.
pub fn nms_reference(sets: usize, seed: u64) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..sets {
        let dets = random_detections(&mut rng);
        let thr = [0.3, 0.45, 0.5, 0.7][rng.random_range(0..4)];
        let got = nms(&dets, thr);
        let boxes: Vec<[f64; 4]> = dets.iter().map(|d| d.bbox).collect();
        let classes: Vec<usize> = dets.iter().map(|d| d.class).collect();
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let want: Vec<Detection> = oracle::nms_reference(&boxes, &classes, &scores, thr)
            .into_iter()
            .map(|i| dets[i].clone())
            .collect();
        if got != want || nms(&got, thr) != got {
            mismatches += 1;
        }
    }
    Ok(SelfCheck::at_most("nms vs reference", mismatches as f64, 0.0, format!("{sets} sets")))
}

/// Max corner error (pixels) of `decode(encode(boxes))` over random
/// non-colliding boxes on a 128×128 canvas.
pub fn decode_round_trip(trials: usize, seed: u64) -> Result<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strides = [8, 16, 32];
    let layout = HeadLayout {
        reg_bins: 16,
        num_classes: 3,
    };
    let mut worst: f64 = 0.0;
    let mut lost = 0;
    for _ in 0..trials {
        // Aspect ratio at most 2 and sides ≥ 8 px keep every box's center
        // cell inside it on its assigned level, so the box is encodable.
        let long: f64 = rng.random_range(8.0..100.0);
        let short = rng.random_range((long / 2.0).max(8.0)..=long);
        let (w, h) = if rng.random::<bool>() { (long, short) } else { (short, long) };
        let x = rng.random_range(0.0..128.0 - w);
        let y = rng.random_range(0.0..128.0 - h);
        let gt = GtBox {
            bbox: [x, y, x + w, y + h],
            class: rng.random_range(0..3),
        };
        let outs = encode(std::slice::from_ref(&gt), (128, 128), &strides, layout)?;
        let dets = decode(&outs, &strides, layout, 0.5)?;
        match dets.as_slice() {
            [d] if d.class == gt.class => {
                worst = d.bbox.iter().zip(&gt.bbox).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            }
            _ => lost += 1,
        }
    }
    let value = if lost > 0 { f64::INFINITY } else { worst };
    Ok(SelfCheck::at_most("decode(encode) round trip (px)", value, 1.0, format!("{trials} boxes, {lost} lost")))
}

/// Minimum wall time of one timing sample.
const SAMPLE_SECS: f64 = 0.05;

/// Input bytes cycled through per timed size.
const ROTATION_BYTES: usize = 32 << 20;

/// Per-call wall time of `hypergraph_convolve` at each vertex count, one
/// row per round. Every sample is the mean over a batch of calls, and all
/// sizes are measured back to back inside a round so that machine-wide
/// drift hits them alike.
pub fn convolve_samples(ns: &[usize], channels: usize, hyperedges: usize, rounds: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AhcParams::init(channels, hyperedges, 1, &mut rng)?;
    let inputs = ns
        .iter()
        .map(|&n| {
            // Rotate through enough copies that no size is served from a
            // private cache between calls: the working set at N ≈ 8k already
            // matches a typical L2, and smaller sizes would otherwise be
            // timed hot while larger ones are timed cold.
            let copies = ROTATION_BYTES.div_ceil(n * (channels + hyperedges) * 8).max(1);
            let sets = (0..copies)
                .map(|_| {
                    let x = VertexSet::new(Tensor::uniform([n, channels], -1.0, 1.0, &mut rng), n, 1)?;
                    let a = generate_hyperedges(&x, &p)?;
                    Ok((x, a))
                })
                .collect::<Result<Vec<_>>>()?;
            // One untimed pass over every copy settles first-touch costs;
            // its mean sets how many calls make one SAMPLE_SECS sample.
            let t0 = Instant::now();
            for (x, a) in &sets {
                std::hint::black_box(hypergraph_convolve(x, a, &p)?);
            }
            let once = (t0.elapsed().as_secs_f64() / sets.len() as f64).max(1e-6);
            Ok((sets, ((SAMPLE_SECS / once).ceil() as usize).max(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    (0..rounds)
        .map(|_| {
            inputs
                .iter()
                .map(|(sets, calls)| {
                    let t0 = Instant::now();
                    for c in 0..*calls {
                        let (x, a) = &sets[c % sets.len()];
                        std::hint::black_box(hypergraph_convolve(x, a, &p)?);
                    }
                    Ok(t0.elapsed().as_secs_f64() / *calls as f64)
                })
                .collect()
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median per-call time at each vertex count.
pub fn convolve_timings(ns: &[usize], channels: usize, hyperedges: usize, rounds: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let samples = convolve_samples(ns, channels, hyperedges, rounds, seed)?;
    Ok((0..ns.len()).map(|k| (ns[k], median(samples.iter().map(|r| r[k]).collect()))).collect())
}

/// Largest time ratio between consecutive doublings of N. Each ratio is
/// formed within one round (paired samples) and the median over rounds is
/// taken.
pub fn convolve_scaling(ns: &[usize], channels: usize, hyperedges: usize, rounds: usize, seed: u64) -> Result<SelfCheck> {
    let samples = convolve_samples(ns, channels, hyperedges, rounds, seed)?;
    let ratios: Vec<f64> = (1..ns.len())
        .map(|k| median(samples.iter().map(|r| r[k] / r[k - 1]).collect()))
        .collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let detail = (0..ns.len())
        .map(|k| format!("N={}: {:.2} ms", ns[k], median(samples.iter().map(|r| r[k]).collect()) * 1e3))
        .chain(ratios.iter().map(|r| format!("{r:.2}x")))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(SelfCheck::at_most("convolve time per doubling of N", worst, 2.2, detail))
}

/// The fast oracle checks run by the `selftest` command.
pub fn run_all(seed: u64) -> Result<Vec<SelfCheck>> {
    let mut checks = vec![conv_oracle(100, seed)?, ahc_oracle(50, seed)?];
    checks.extend(participation_normalization(200, seed)?);
    checks.push(permutation_equivariance(50, seed)?);
    checks.push(nms_reference(200, seed)?);
    checks.push(decode_round_trip(200, seed)?);
    Ok(checks)
}
