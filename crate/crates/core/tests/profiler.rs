use hyperace::model::{build_model, ModelConfig, TunnelConfig, Variant};
use hyperace::profiler::{budget, export_participation, FlopConvention};
use hyperace::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn totals_are_sums_and_independent_of_weights() {
    let cfg = ModelConfig::variant(Variant::N);
    let a = budget(&build_model(&cfg, 0).unwrap(), 640, FlopConvention::StrideScaled).unwrap();
    let b = budget(&build_model(&cfg, 99).unwrap(), 640, FlopConvention::StrideScaled).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.total_params, a.modules.iter().map(|m| m.params).sum::<usize>());
    assert_eq!(a.total_flops, a.modules.iter().map(|m| m.flops).sum::<u64>());
    assert!(a.to_text().lines().count() > a.modules.len());
    let back: hyperace::profiler::BudgetReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn direct_and_scaled_agree_on_params() {
    let net = build_model(&ModelConfig::micro(), 0).unwrap();
    let s = budget(&net, 64, FlopConvention::StrideScaled).unwrap();
    let d = budget(&net, 64, FlopConvention::Direct).unwrap();
    assert_eq!(s.total_params, d.total_params);
    assert_eq!(s.total_params, net.param_count());
    assert!(budget(&net, 48, FlopConvention::StrideScaled).is_err());
}

#[test]
fn hyperace_and_tunnels_cost_something() {
    let on = budget(&build_model(&ModelConfig::variant(Variant::N), 0).unwrap(), 640, FlopConvention::StrideScaled).unwrap();
    let mut off_cfg = ModelConfig::variant(Variant::N);
    off_cfg.tunnels = TunnelConfig::disabled();
    let off = budget(&build_model(&off_cfg, 0).unwrap(), 640, FlopConvention::StrideScaled).unwrap();
    assert!(on.total_params > off.total_params && on.total_flops > off.total_flops);
    assert_eq!(on.modules.iter().filter(|m| m.name.starts_with("fullpad.")).count(), 7);
}

#[test]
fn participation_export() {
    let net = build_model(&ModelConfig::variant(Variant::N), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let image = Tensor::uniform([1, 3, 64, 64], 0.0, 1.0, &mut rng);
    let e = export_participation(&net, &image, "hyperace.high.1").unwrap();
    let m = e.matrix.shape()[1];
    assert_eq!(m, 4);
    for k in 0..m {
        let s: f64 = (0..e.matrix.shape()[0]).map(|i| e.matrix.at(&[i, k])).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    for list in e.top_k(5) {
        assert_eq!(list.len(), 5);
        assert!(list.iter().all(|&(x, y, _)| (0.0..64.0).contains(&x) && (0.0..64.0).contains(&y)));
        assert!(list.windows(2).all(|w| w[0].2 >= w[1].2));
    }
    let csv = e.to_csv();
    assert_eq!(csv.lines().count(), 1 + 16);
    assert!(csv.starts_with("vertex,row,col,e0,e1,e2,e3"));

    let gray = Tensor::full([1, 3, 64, 64], 0.5);
    let g = export_participation(&net, &gray, "0").unwrap();
    let (lo, hi) = g.matrix.data().iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi / lo < 1.5, "ratio {}", hi / lo);
}

#[test]
fn unknown_layer_lists_the_choices() {
    let net = build_model(&ModelConfig::micro(), 0).unwrap();
    match export_participation(&net, &Tensor::zeros([1, 3, 32, 32]), "backbone") {
        Err(Error::UnknownLayer { available, .. }) => assert_eq!(available, ["hyperace.high.0", "hyperace.high.1"]),
        other => panic!("{other:?}"),
    }
}
