//! Reverse-mode gradients of a small conv → SiLU → softmax graph, checked
//! against central differences.

use hyperace::tensor::gradcheck::{check_gradients, GradCheckConfig};
use hyperace::{ConvSpec, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hyperace::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::uniform([1, 3, 6, 6], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform([4, 3, 3, 3], -0.5, 0.5, &mut rng);
    let r = Tensor::uniform([1, 4, 3, 3], -1.0, 1.0, &mut rng);
    let report = check_gradients(&[x, w], &GradCheckConfig::default(), |t, v| {
        let y = t.conv2d(v[0], v[1], ConvSpec::new(2, 1, 1))?;
        let y = t.silu(y);
        let y = t.softmax(y, 1)?;
        t.dot_const(y, &r)
    })?;
    println!(
        "checked {} coordinates, max relative error {:.2e}: {}",
        report.checked,
        report.max_rel_error,
        if report.passed { "ok" } else { "MISMATCH" }
    );
    Ok(())
}
