//! Parameter/FLOP budget of every variant, with and without the
//! depthwise-separable blocks, then the reference comparisons.
//!
//! cargo run --release --example budget_report [-- -v]

use hyperace::model::{build_model, ModelConfig, Variant};
use hyperace::profiler::{budget, compare, FlopConvention};

fn main() -> hyperace::Result<()> {
    let verbose = std::env::args().any(|a| a == "-v");
    for v in Variant::ALL {
        for ds in [true, false] {
            let mut cfg = ModelConfig::variant(v);
            cfg.use_ds = ds;
            let net = build_model(&cfg, 0)?;
            let r = budget(&net, 640, FlopConvention::StrideScaled)?;
            println!("{v} ds={ds:<5} {:7.3} M params {:7.2} GFLOPs", r.params_m(), r.gflops());
            if verbose {
                print!("{}", r.to_text());
            }
        }
    }
    for c in compare(ModelConfig::variant)? {
        println!("{}", c.line());
    }
    Ok(())
}
