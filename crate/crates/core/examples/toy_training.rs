//! Trains an N-scale detector on synthetic shapes and reports held-out
//! recall/precision.
//!
//! cargo run --release --example toy_training -- [steps] [lr] [batch]

use std::time::Instant;

use hyperace::model::{build_model, ModelConfig, Variant};
use hyperace::runtime::{train_toy, TrainConfig};

fn main() -> hyperace::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let mut model = ModelConfig::variant(Variant::N);
    model.num_classes = 3;
    let mut net = build_model(&model, 0)?;
    let cfg = TrainConfig {
        steps: arg(1, 300.0) as usize,
        lr: arg(2, 0.02),
        batch: arg(3, 8.0) as usize,
        eval_every: arg(4, 100.0) as usize,
        eval_scenes: 200,
        ..Default::default()
    };
    let t0 = Instant::now();
    let log = train_toy(
        &mut net,
        &cfg,
        |step, loss| {
            if step % 10 == 0 {
                eprintln!("step {step:5} loss {loss:.4} ({:.1}s)", t0.elapsed().as_secs_f64());
            }
        },
        |step, r| eprintln!("eval @{step}: recall {:.3} precision {:.3} ({} dets)", r.recall, r.precision, r.detections),
    )?;
    println!("reached target at {:?} in {:.1}s", log.reached_at, t0.elapsed().as_secs_f64());
    Ok(())
}
