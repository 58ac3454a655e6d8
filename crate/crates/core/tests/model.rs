use hyperace::model::{build_model, forward_detect, Destination, ModelConfig, TunnelConfig, Variant};
use hyperace::nn::{BnMode, Session};
use hyperace::tensor::flops;
use hyperace::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform([1, 3, size, size], 0.0, 1.0, &mut rng)
}

#[test]
fn head_shapes_follow_strides() {
    let cfg = ModelConfig::micro();
    let net = build_model(&cfg, 0).unwrap();
    let outs = forward_detect(&net, &image(64, 1)).unwrap();
    let ch = 4 * cfg.head.reg_bins + cfg.num_classes;
    let shapes: Vec<Vec<usize>> = outs.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(shapes, [vec![1, ch, 8, 8], vec![1, ch, 4, 4], vec![1, ch, 2, 2]]);
    let again = forward_detect(&net, &image(64, 1)).unwrap();
    assert!(outs.iter().zip(&again).all(|(a, b)| a.bit_eq(b)));
}

#[test]
fn indivisible_input_rejected() {
    let net = build_model(&ModelConfig::micro(), 0).unwrap();
    assert!(forward_detect(&net, &image(48, 1)).is_err());
}

#[test]
fn zero_gates_match_disabled_network() {
    let on = ModelConfig::micro();
    let mut off = on.clone();
    off.tunnels = TunnelConfig::disabled();
    let a = build_model(&on, 3).unwrap();
    let b = build_model(&off, 3).unwrap();
    assert!(a.hyperace().is_some() && b.hyperace().is_none());
    let img = image(64, 2);
    let ya = forward_detect(&a, &img).unwrap();
    let yb = forward_detect(&b, &img).unwrap();
    assert!(ya.iter().zip(&yb).all(|(u, v)| u.bit_eq(v)));
}

fn probes(net: &hyperace::Network, img: &Tensor) -> Vec<(String, Tensor)> {
    let mut s = Session::eval(&net.store);
    let x = s.tape.constant(img.clone());
    net.forward(&mut s, x).unwrap();
    s.probes().iter().map(|(n, v)| (n.clone(), s.tape.value(*v).clone())).collect()
}

#[test]
fn single_tunnel_only_touches_its_destinations() {
    let img = image(64, 4);
    let base = {
        let mut cfg = ModelConfig::micro();
        cfg.tunnels = TunnelConfig::disabled();
        probes(&build_model(&cfg, 5).unwrap(), &img)
    };
    for which in 0..3 {
        let mut cfg = ModelConfig::micro();
        cfg.tunnels = TunnelConfig::disabled();
        match which {
            0 => cfg.tunnels.backbone_neck = true,
            1 => cfg.tunnels.in_neck = true,
            _ => cfg.tunnels.neck_head = true,
        }
        cfg.tunnels.gates = [0.5; 7];
        let net = build_model(&cfg, 5).unwrap();
        let got = probes(&net, &img);
        let first = Destination::ALL
            .iter()
            .filter(|d| cfg.tunnels.is_enabled(d.tunnel()))
            .map(|d| d.name())
            .collect::<Vec<_>>();
        let mut reached = false;
        for (name, t) in &got {
            let Some((_, b)) = base.iter().find(|(n, _)| n == name) else {
                continue;
            };
            reached |= first.contains(&name.as_str());
            if reached {
                continue;
            }
            assert!(t.bit_eq(b), "tunnel {which}: `{name}` changed upstream of its destinations");
        }
        for d in &first {
            let t = &got.iter().find(|(n, _)| n == d).unwrap().1;
            let b = &base.iter().find(|(n, _)| n == d).unwrap().1;
            assert!(!t.bit_eq(b), "destination {d} unchanged");
        }
    }
}

#[test]
fn breakdown_matches_tally() {
    for (cfg, size) in [(ModelConfig::micro(), 64), (ModelConfig::micro(), 32)] {
        let net = build_model(&cfg, 0).unwrap();
        let img = image(size, 0);
        let (_, tally) = flops::measure(|| forward_detect(&net, &img).unwrap());
        let closed: u64 = net.cost_breakdown([1, 3, size, size]).unwrap().iter().map(|m| m.flops).sum();
        assert_eq!(closed, tally);
    }
    let mut no_tunnels = ModelConfig::micro();
    no_tunnels.tunnels = TunnelConfig::disabled();
    no_tunnels.use_ds = false;
    let net = build_model(&no_tunnels, 0).unwrap();
    let img = image(32, 0);
    let (_, tally) = flops::measure(|| forward_detect(&net, &img).unwrap());
    let closed: u64 = net.cost_breakdown([1, 3, 32, 32]).unwrap().iter().map(|m| m.flops).sum();
    assert_eq!(closed, tally);
}

#[test]
fn module_params_cover_the_store() {
    let net = build_model(&ModelConfig::micro(), 0).unwrap();
    let names: Vec<String> = net.cost_breakdown([1, 3, 32, 32]).unwrap().into_iter().map(|m| m.name).collect();
    let total: usize = names.iter().map(|n| net.module_params(n)).sum();
    assert_eq!(total, net.param_count());
}

#[test]
fn budget_grows_with_hyperedges_and_width() {
    let count = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = ModelConfig::variant(Variant::N);
        f(&mut c);
        let net = build_model(&c, 0).unwrap();
        let fl: u64 = net.cost_breakdown([1, 3, 64, 64]).unwrap().iter().map(|m| m.flops).sum();
        (net.param_count(), fl)
    };
    let mut last = (0, 0);
    for m in [2, 4, 8, 16] {
        let now = count(&|c| c.hyperace.hyperedges = m);
        assert!(now.0 > last.0 && now.1 > last.1);
        last = now;
    }
    let narrow = count(&|c| c.width_multiple = 0.25);
    let wide = count(&|c| c.width_multiple = 0.5);
    assert!(wide.0 > narrow.0 && wide.1 > narrow.1);
}

#[test]
fn micro_network_gradients() {
    let report = hyperace::model::check_suite_block("micro_network", 0).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn training_mode_forward_runs() {
    let net = build_model(&ModelConfig::micro(), 0).unwrap();
    let mut s = Session::new(&net.store, BnMode::Train, true);
    let x = s.tape.constant(Tensor::uniform([2, 3, 32, 32], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
    let outs = net.forward(&mut s, x).unwrap();
    assert_eq!(outs.len(), 3);
    assert!(!s.bn_statistics().is_empty());
}
