//! The depthwise-separable block family next to its standard-convolution
//! counterparts: output shapes, parameters and FLOPs.

use hyperace::nn::{Block, Bottleneck, C3k2, Conv, CspBlockConfig, DsConv, ParamStore, Session};
use hyperace::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INPUT: [usize; 4] = [1, 64, 40, 40];

fn show(name: &str, store: &ParamStore, blk: &dyn Block) -> hyperace::Result<()> {
    let (shape, flops) = blk.cost(INPUT)?;
    let mut s = Session::eval(store);
    let x = s.tape.constant(Tensor::zeros(INPUT));
    let y = blk.forward(&mut s, x)?;
    assert_eq!(s.tape.shape(y), shape);
    println!(
        "{name:<18} out {shape:?}  params {:>7}  MFLOPs {:>8.2}",
        store.trainable_count(),
        flops as f64 / 1e6
    );
    Ok(())
}

fn main() -> hyperace::Result<()> {
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    let mut st = ParamStore::new();
    let b = Conv::new(&mut st, "c", 64, 64, 3, 1, 1, true, rng)?;
    show("conv 3x3", &st, &b)?;
    let mut st = ParamStore::new();
    let b = DsConv::new(&mut st, "d", 64, 64, 3, 1, rng)?;
    show("DSConv 3x3", &st, &b)?;
    for ds in [false, true] {
        let mut st = ParamStore::new();
        let b = Bottleneck::new(&mut st, "b", 64, 64, 5, ds, rng)?;
        show(if ds { "DS-bottleneck k5" } else { "bottleneck k5" }, &st, &b)?;
    }
    for ds in [false, true] {
        let cfg = CspBlockConfig {
            n: 2,
            e: 0.5,
            use_ds: ds,
            k: 5,
            inner_n: 1,
        };
        let mut st = ParamStore::new();
        let b = C3k2::new(&mut st, "c3k2", 64, 64, &cfg, rng)?;
        show(if ds { "DS-C3k2 (n=2)" } else { "C3k2 (n=2)" }, &st, &b)?;
    }
    Ok(())
}
