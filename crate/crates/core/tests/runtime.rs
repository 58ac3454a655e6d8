use std::path::Path;

use hyperace::model::{build_model, ModelConfig, STRIDES};
use hyperace::nn::ParamStore;
use hyperace::runtime::{
    apply_weights, decode, encode, iou, load_weights, nms, read_weights, save_weights, train_toy, write_weights, Detection,
    GtBox, HeadLayout, SceneConfig, TrainConfig,
};
use hyperace::{Error, Tensor};
use sha2::{Digest, Sha256};

const LAYOUT: HeadLayout = HeadLayout {
    reg_bins: 16,
    num_classes: 3,
};

fn det(b: [f64; 4], class: usize, score: f64) -> Detection {
    Detection { bbox: b, class, score }
}

#[test]
fn iou_properties() {
    let a = [0.0, 0.0, 10.0, 10.0];
    let b = [5.0, 5.0, 15.0, 20.0];
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &b), iou(&b, &a));
    assert!((0.0..=1.0).contains(&iou(&a, &b)));
    assert_eq!(iou(&a, &[20.0, 20.0, 30.0, 30.0]), 0.0);
}

#[test]
fn nms_examples() {
    let one = vec![det([0.0, 0.0, 4.0, 4.0], 0, 0.7)];
    assert_eq!(nms(&one, 0.5), one);
    let pair = vec![det([1.0, 1.0, 9.0, 9.0], 1, 0.8), det([1.0, 1.0, 9.0, 9.0], 1, 0.9)];
    let kept = nms(&pair, 0.5);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].score, 0.9);
    // Other classes are never suppressed.
    let mixed = vec![det([1.0, 1.0, 9.0, 9.0], 1, 0.8), det([1.0, 1.0, 9.0, 9.0], 2, 0.9)];
    assert_eq!(nms(&mixed, 0.5).len(), 2);
    assert_eq!(nms(&nms(&mixed, 0.5), 0.5), nms(&mixed, 0.5));
}

#[test]
fn decode_cold_and_hot() {
    let cold: Vec<Tensor> = STRIDES.iter().map(|&s| Tensor::full([1, LAYOUT.channels(), 64 / s, 64 / s], -1e4)).collect();
    assert!(decode(&cold, &STRIDES, LAYOUT, 0.25).unwrap().is_empty());
    let gt = GtBox {
        bbox: [20.0, 20.0, 30.0, 30.0],
        class: 2,
    };
    let hot = encode(std::slice::from_ref(&gt), (64, 64), &STRIDES, LAYOUT).unwrap();
    let dets = decode(&hot, &STRIDES, LAYOUT, 0.25).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].class, 2);
    assert!(iou(&dets[0].bbox, &gt.bbox) > 0.999);
    let (cx, cy) = ((dets[0].bbox[0] + dets[0].bbox[2]) / 2.0, (dets[0].bbox[1] + dets[0].bbox[3]) / 2.0);
    assert!((cx - 25.0).abs() < 1e-9 && (cy - 25.0).abs() < 1e-9);
}

#[test]
fn detection_json_shape() {
    let line = det([1.0, 2.0, 3.0, 4.5], 1, 0.5).to_json_line();
    assert_eq!(line, r#"{"box":[1.0,2.0,3.0,4.5],"class":1,"score":0.5}"#);
}

fn fixture() -> Vec<(String, Tensor)> {
    vec![
        ("a.weight".into(), Tensor::from_fn([2, 3], |i| i as f64 * 0.25 - 0.5)),
        ("b.bias".into(), Tensor::from_fn([4], |i| (i as f64).powi(2) / 3.0)),
        ("scalar".into(), Tensor::full([1], -1.5e-300)),
    ]
}

const FIXTURE_SHA256: &str = "024a41339be19a86288cfe09b62ff2d7283ee722a1e367316053ee60462c9fdb";

#[test]
fn fixture_digest_is_pinned() {
    let bytes = write_weights(&fixture());
    let on_disk = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.yv13")).unwrap();
    assert_eq!(bytes, on_disk);
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, FIXTURE_SHA256);
}

#[test]
fn weights_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let net = build_model(&ModelConfig::micro(), 3).unwrap();
    let (p1, p2) = (dir.path().join("a.yv13"), dir.path().join("b.yv13"));
    save_weights(&net.store, &p1).unwrap();
    let mut other = build_model(&ModelConfig::micro(), 4).unwrap();
    apply_weights(&mut other.store, load_weights(&p1).unwrap()).unwrap();
    save_weights(&other.store, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    for (a, b) in net.store.entries().iter().zip(other.store.entries()) {
        assert!(a.value.bit_eq(&b.value));
    }
}

#[test]
fn weight_errors_are_named() {
    let p = Path::new("w.yv13");
    let good = write_weights(&fixture());
    assert!(matches!(read_weights(b"NOPE\x01\0\0\0\0\0\0\0", p), Err(Error::WeightFile { .. })));
    assert!(matches!(read_weights(&good[..good.len() - 3], p), Err(Error::WeightFile { .. })));
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(matches!(read_weights(&bad_version, p), Err(Error::WeightFile { .. })));

    let mut store = ParamStore::new();
    store.add("a.weight", Tensor::zeros([3, 2]), true);
    store.add("b.bias", Tensor::zeros([4]), true);
    store.add("scalar", Tensor::zeros([1]), false);
    match apply_weights(&mut store, fixture()) {
        Err(Error::WeightShape { name, .. }) => assert_eq!(name, "a.weight"),
        other => panic!("expected a shape error, got {other:?}"),
    }
    store.add("extra", Tensor::zeros([1]), true);
    assert!(matches!(apply_weights(&mut store, fixture()), Err(Error::MissingWeight(n)) if n == "extra"));
}

fn micro_detector() -> hyperace::Network {
    let mut cfg = ModelConfig::micro();
    cfg.num_classes = 3;
    cfg.head.reg_bins = 16;
    build_model(&cfg, 1).unwrap()
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut net = micro_detector();
    let before = net.store.clone();
    let cfg = TrainConfig {
        steps: 5,
        lr: 0.0,
        batch: 2,
        warmup: 1,
        ..Default::default()
    };
    let log = train_toy(&mut net, &cfg, |_, _| {}, |_, _| {}).unwrap();
    for (a, b) in before.entries().iter().zip(net.store.entries()).filter(|(a, _)| a.trainable) {
        assert!(a.value.bit_eq(&b.value), "{} moved", a.name);
    }
    let l: Vec<f64> = log.losses.iter().map(|(_, l)| *l).collect();
    assert!(l.iter().all(|v| v.is_finite()));
}

#[test]
fn single_rectangle_scenes_halve_the_loss() {
    let mut net = micro_detector();
    let cfg = TrainConfig {
        steps: 500,
        batch: 4,
        scene: SceneConfig {
            max_objects: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    let log = train_toy(&mut net, &cfg, |_, _| {}, |_, _| {}).unwrap();
    let mean = |r: &[(usize, f64)]| r.iter().map(|(_, l)| l).sum::<f64>() / r.len() as f64;
    let first = mean(&log.losses[..20]);
    let last = mean(&log.losses[log.losses.len() - 20..]);
    assert!(last < 0.5 * first, "loss {first:.3} -> {last:.3}");
}

#[test]
fn divergence_is_reported_with_its_step() {
    let mut net = micro_detector();
    let cfg = TrainConfig {
        steps: 50,
        lr: 1e12,
        warmup: 1,
        clip: f64::INFINITY,
        batch: 2,
        ..Default::default()
    };
    match train_toy(&mut net, &cfg, |_, _| {}, |_, _| {}) {
        Err(Error::Diverged { step, .. }) => assert!(step > 0 && step < 50),
        other => panic!("expected divergence, got {:?}", other.map(|l| l.losses.len())),
    }
}
