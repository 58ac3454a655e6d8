//! The distribution tunnels: with every gate at zero the detector matches
//! the tunnel-free network bit for bit; opening one tunnel changes only
//! what lies downstream of its destinations.

use hyperace::model::{build_model, forward_detect, ModelConfig, TunnelConfig};
use hyperace::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hyperace::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = Tensor::uniform([1, 3, 64, 64], 0.0, 1.0, &mut rng);
    let on = ModelConfig::micro();
    let mut off = on.clone();
    off.tunnels = TunnelConfig::disabled();
    let base = forward_detect(&build_model(&off, 7)?, &image)?;
    let closed = forward_detect(&build_model(&on, 7)?, &image)?;
    let same = base.iter().zip(&closed).all(|(a, b)| a.bit_eq(b));
    println!("all gates 0 vs tunnels disabled: bit-identical = {same}");

    let mut open = on.clone();
    open.tunnels.gates = [0.5; 7];
    let net = build_model(&open, 7)?;
    for t in net.tunnels() {
        println!("tunnel destination {:<13} gate {}", t.dest.name(), net.store.get(t.gate).item());
    }
    let opened = forward_detect(&net, &image)?;
    for ((a, b), s) in base.iter().zip(&opened).zip([8, 16, 32]) {
        println!("stride {s:>2}: max |Δ| = {:.3e}", a.max_abs_diff(b));
    }
    Ok(())
}
