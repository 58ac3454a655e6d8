//! Detection on a synthetic scene: decode, NMS, JSON lines. Pass a YV13
//! file trained by `hyperace toytrain` (config alongside) to see real
//! detections; without one the weights are random.
//!
//! cargo run --release --example detect_scene -- [run-dir]

use std::path::PathBuf;

use hyperace::model::{build_model, ModelConfig, Variant};
use hyperace::runtime::{apply_weights, load_weights, train::detect, write_ppm, SceneConfig, SyntheticScene, CLASS_NAMES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hyperace::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from);
    let mut net = match &dir {
        Some(d) => {
            let mut net = build_model(&ModelConfig::load(&d.join("config.json"))?, 0)?;
            apply_weights(&mut net.store, load_weights(&d.join("weights.yv13"))?)?;
            net
        }
        None => {
            let mut cfg = ModelConfig::variant(Variant::N);
            cfg.num_classes = CLASS_NAMES.len();
            build_model(&cfg, 0)?
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let scene = SyntheticScene::generate(&SceneConfig::default(), &mut rng);
    std::fs::write(std::env::temp_dir().join("scene.ppm"), write_ppm(&scene.image)?)?;
    for o in &scene.objects {
        eprintln!("truth: {} {:?}", CLASS_NAMES[o.class], o.bbox);
    }
    if dir.is_none() {
        net.calibrate_batchnorm(&scene.image, 1.0)?;
    }
    for d in detect(&net, &scene.image, 0.25, 0.45)? {
        println!("{}", d.to_json_line());
    }
    Ok(())
}
