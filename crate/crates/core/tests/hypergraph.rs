use hyperace::oracle::AhcRef;
use hyperace::hypergraph::{ahc, ahc_forward, generate_hyperedges, hypergraph_convolve, AhcParams, AhcVars, C3ah, C3ahConfig, VertexSet};
use hyperace::nn::{check_block, Block, ParamStore};
use hyperace::tensor::gradcheck::{check_gradients, GradCheckConfig};
use hyperace::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn reference(p: &AhcParams, n: usize) -> AhcRef {
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

/// Parameters with larger-than-init prototypes so the softmax is far from
/// uniform and the comparison is not trivially satisfied.
fn sharp_params(c: usize, m: usize, h: usize, rng: &mut ChaCha8Rng) -> AhcParams {
    let mut p = AhcParams::init(c, m, h, rng).unwrap();
    p.prototypes = Tensor::uniform([m, c], -2.0, 2.0, rng);
    p.phi_bias = Tensor::uniform([m * c], -0.5, 0.5, rng);
    p
}

#[test]
fn matches_scalar_oracle_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = sharp_params(4, 2, 2, &mut rng);
        let x = VertexSet::new(Tensor::uniform([4, 4], -2.0, 2.0, &mut rng), 2, 2).unwrap();
        let oracle = reference(&p, 4);
        let a = generate_hyperedges(&x, &p).unwrap();
        let a_ref = oracle.participation(x.features().data());
        for (u, v) in a.matrix().data().iter().zip(&a_ref) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
        let y = ahc_forward(&x, &p).unwrap();
        let y_ref = oracle.forward(x.features().data());
        for (u, v) in y.features().data().iter().zip(&y_ref) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
        let yc = hypergraph_convolve(&x, &a, &p).unwrap();
        assert!(yc.features().max_abs_diff(y.features()) < 1e-12);
    }
}

#[test]
fn matches_scalar_oracle_wider() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = sharp_params(8, 5, 4, &mut rng);
    let x = VertexSet::new(Tensor::uniform([30, 8], -1.0, 1.0, &mut rng), 5, 6).unwrap();
    let y = ahc_forward(&x, &p).unwrap();
    let y_ref = reference(&p, 30).forward(x.features().data());
    for (u, v) in y.features().data().iter().zip(&y_ref) {
        assert!((u - v).abs() < 1e-10);
    }
}

#[test]
fn permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let (n, c) = (12, 8);
        let p = sharp_params(c, 3, 2, &mut rng);
        let x = Tensor::uniform([n, c], -1.0, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let xp = Tensor::from_fn([n, c], |k| x.data()[perm[k / c] * c + k % c]);
        let y = ahc_forward(&VertexSet::new(x, n, 1).unwrap(), &p).unwrap();
        let yp = ahc_forward(&VertexSet::new(xp, n, 1).unwrap(), &p).unwrap();
        for i in 0..n {
            for ch in 0..c {
                let d = yp.features().at(&[i, ch]) - y.features().at(&[perm[i], ch]);
                assert!(d.abs() < 1e-9);
            }
        }
    }
}

#[test]
fn ahc_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = sharp_params(4, 3, 2, &mut rng);
    let x = Tensor::uniform([2, 5, 4], -1.0, 1.0, &mut rng);
    let r = Tensor::uniform([2, 5, 4], -1.0, 1.0, &mut rng);
    let mut inputs = vec![x];
    inputs.extend(p.tensors().map(|t| t.clone()));
    let report = check_gradients(&inputs, &GradCheckConfig::default(), |t, v| {
        let vars = AhcVars::from_array([v[1], v[2], v[3], v[4], v[5], v[6]]);
        let (y, _) = ahc(t, v[0], &vars, 2, p.act)?;
        t.dot_const(y, &r)
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn c3ah_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let cfg = C3ahConfig {
        hyperedges: 2,
        heads: 2,
        ..Default::default()
    };
    let blk = C3ah::new(&mut store, "c3ah", 8, 6, &cfg, &mut rng).unwrap();
    let x = Tensor::uniform([1, 8, 3, 3], -1.0, 1.0, &mut rng);
    let report = check_block(&store, &x, &GradCheckConfig::default(), |s, v| blk.forward(s, v)).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.checked > 200);
}
