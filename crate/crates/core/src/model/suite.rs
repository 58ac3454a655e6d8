//! The finite-difference gradient suite: one check per building block plus
//! the whole micro network, all at 64-bit with central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::fullpad::gated_fuse;
use super::hyperace::HyperAce;
use super::network::{build_model, Network};
use crate::error::Result;
use crate::hypergraph::{C3ah, C3ahConfig};
use crate::nn::{check_block, Block, BnMode, Bottleneck, C3k, C3k2, CspBlockConfig, DsConv, ParamStore, Session};
use crate::tensor::gradcheck::{GradCheckConfig, GradCheckReport};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub block: &'static str,
    pub report: GradCheckReport,
}

/// Blocks covered by [`gradient_suite`], in run order.
pub const SUITE_BLOCKS: [&str; 8] = [
    "dsconv",
    "ds_bottleneck",
    "ds_c3k",
    "ds_c3k2",
    "c3ah",
    "hyperace",
    "gated_fusion",
    "micro_network",
];

fn csp(n: usize) -> CspBlockConfig {
    CspBlockConfig {
        n,
        e: 0.5,
        use_ds: true,
        k: 5,
        inner_n: 1,
    }
}

/// Flattens several outputs into one vector so a single random weighting
/// covers all of them.
fn flatten(s: &mut Session, outs: &[Var]) -> Result<Var> {
    let flat = outs
        .iter()
        .map(|&o| {
            let n = s.tape.value(o).numel();
            s.tape.reshape(o, [n])
        })
        .collect::<Result<Vec<_>>>()?;
    s.tape.concat(&flat, 0)
}

/// Adopts the batch statistics of a training-mode pass of `f` over `x` as
/// the running statistics of every batch norm it touches.
fn calibrate<F>(store: &mut ParamStore, x: &Tensor, f: F) -> Result<()>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    let stats = {
        let mut s = Session::new(store, BnMode::Train, false);
        let v = s.tape.constant(x.clone());
        f(&mut s, v)?;
        s.bn_statistics()
    };
    store.update_running_stats(&stats, 1.0);
    Ok(())
}

/// Redraws every AHC weight (not biases) from N(0, 0.5²).
pub fn condition_ahc(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    let ahc: Vec<(String, Vec<usize>)> = store
        .entries()
        .iter()
        .filter(|e| e.trainable && e.name.contains("ahc.") && !e.name.ends_with("bias"))
        .map(|e| (e.name.clone(), e.value.shape().to_vec()))
        .collect();
    for (name, shape) in ahc {
        store.set(&name, Tensor::randn(shape, 0.5, rng))?;
    }
    Ok(())
}

/// The micro network at a well-conditioned parameter point for finite
/// differencing: gates at 0.5, batch-norm statistics taken from a 16-image
/// batch (at init every running variance is 1, and activations shrink
/// geometrically with depth until gradients fall under the difference
/// noise), and AHC weights drawn at unit-ish scale (the per-vertex sum
/// `Σ_m A_im f_m ≈ M/N` otherwise leaves the hypergraph branch orders of
/// magnitude quieter than its lateral sibling).
pub fn conditioned_micro_network(seed: u64) -> Result<(Network, Tensor)> {
    let mut cfg = ModelConfig::micro();
    cfg.tunnels.gates = [0.5; 7];
    let mut net = build_model(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
    condition_ahc(&mut net.store, &mut rng)?;
    let size = 32;
    let batch = Tensor::uniform([16, 3, size, size], 0.0, 1.0, &mut rng);
    net.calibrate_batchnorm(&batch, 1.0)?;
    let image = Tensor::new(vec![1, 3, size, size], batch.data()[..3 * size * size].to_vec())?;
    Ok((net, image))
}

/// Runs one named block of the suite.
pub fn check_suite_block(block: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let gc = GradCheckConfig {
        seed,
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let st = &mut store;
    let input = |shape: [usize; 4], rng: &mut ChaCha8Rng| Tensor::uniform(shape, -1.0, 1.0, rng);
    match block {
        "dsconv" => {
            let b = DsConv::new(st, "dsconv", 4, 6, 3, 2, rng)?;
            let x = input([2, 4, 6, 6], rng);
            check_block(&store, &x, &gc, |s, v| b.forward(s, v))
        }
        "ds_bottleneck" => {
            let b = Bottleneck::new(st, "bottleneck", 6, 6, 5, true, rng)?;
            let x = input([1, 6, 6, 6], rng);
            check_block(&store, &x, &gc, |s, v| b.forward(s, v))
        }
        "ds_c3k" => {
            let b = C3k::new(st, "c3k", 6, 8, &csp(2), rng)?;
            let x = input([1, 6, 5, 5], rng);
            check_block(&store, &x, &gc, |s, v| b.forward(s, v))
        }
        "ds_c3k2" => {
            let b = C3k2::new(st, "c3k2", 6, 8, &csp(1), rng)?;
            let x = input([1, 6, 5, 5], rng);
            check_block(&store, &x, &gc, |s, v| b.forward(s, v))
        }
        "c3ah" => {
            let cfg = C3ahConfig {
                e: 0.5,
                hyperedges: 2,
                heads: 2,
                ..Default::default()
            };
            let b = C3ah::new(st, "c3ah", 8, 6, &cfg, rng)?;
            condition_ahc(st, rng)?;
            let x = input([1, 8, 3, 3], rng);
            check_block(&store, &x, &gc, |s, v| b.forward(s, v))
        }
        "hyperace" => {
            // Channels 16 throughout, an 8×8 B3 map; the three pyramid
            // levels travel as one flat input so all of them are checked.
            let mut cfg = ModelConfig::micro();
            cfg.hyperace.fused_channels = 256;
            cfg.hyperace.out_channels = 256;
            let ace = HyperAce::new(st, "hyperace", [16, 16, 16], &cfg, rng)?;
            condition_ahc(st, rng)?;
            let sizes = [16 * 64, 16 * 16, 16 * 4];
            let total: usize = sizes.iter().sum();
            let run = |s: &mut Session, v: Var| -> Result<Var> {
                let b = s.tape.shape(v)[0];
                let flat = s.tape.reshape(v, [b, total])?;
                let parts = s.tape.split(flat, &sizes, 1)?;
                let b3 = s.tape.reshape(parts[0], [b, 16, 8, 8])?;
                let b4 = s.tape.reshape(parts[1], [b, 16, 4, 4])?;
                let b5 = s.tape.reshape(parts[2], [b, 16, 2, 2])?;
                ace.forward(s, b3, b4, b5)
            };
            let batch = Tensor::uniform([8, 1, 1, total], -1.0, 1.0, rng);
            calibrate(st, &batch, run)?;
            let x = Tensor::new(vec![1, 1, 1, total], batch.data()[..total].to_vec())?;
            let gc = GradCheckConfig {
                max_coords: Some(64),
                ..gc
            };
            check_block(&store, &x, &gc, run)
        }
        "gated_fusion" => {
            let gate = st.add("gamma", Tensor::uniform([1], -1.0, 1.0, rng), true);
            let x = input([1, 2, 4, 4], rng);
            check_block(&store, &x, &gc, |s, v| {
                let parts = s.tape.split(v, &[1, 1], 1)?;
                let g = s.param(gate);
                gated_fuse(s, parts[0], parts[1], g)
            })
        }
        "micro_network" => {
            let (net, image) = conditioned_micro_network(seed)?;
            let gc = GradCheckConfig {
                max_coords: Some(2),
                ..gc
            };
            check_block(&net.store, &image, &gc, |s, v| {
                let outs = net.forward(s, v)?;
                flatten(s, &outs)
            })
        }
        other => Err(crate::error::Error::invalid("gradient suite", format!("unknown block `{other}`"))),
    }
}

/// Every block of [`SUITE_BLOCKS`] at one seed.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    SUITE_BLOCKS
        .iter()
        .map(|&block| {
            Ok(SuiteEntry {
                block,
                report: check_suite_block(block, seed)?,
            })
        })
        .collect()
}
