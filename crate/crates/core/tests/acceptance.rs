//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hyperace::model::{build_model, check_suite_block, forward_detect, ModelConfig, TunnelConfig, Variant, SUITE_BLOCKS};
use hyperace::profiler;
use hyperace::runtime::{train_toy, TrainConfig};
use hyperace::selftest::{self, SelfCheck};
use hyperace::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, title: &str, elapsed: Duration, o: &Outcome) {
    println!(
        "{} [{n}] {title} ({:.1}s): {}",
        if o.pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        o.detail
    );
}

fn from_checks(checks: &[SelfCheck]) -> Outcome {
    Outcome {
        pass: checks.iter().all(|c| c.pass),
        detail: checks
            .iter()
            .map(|c| format!("{} {:.2e} (limit {})", c.name, c.value, c.threshold))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn oracles() -> Outcome {
    let t0 = Instant::now();
    let checks = [selftest::ahc_oracle(100, 1).unwrap(), selftest::conv_oracle(120, 2).unwrap()];
    let mut o = from_checks(&checks);
    let secs = t0.elapsed().as_secs_f64();
    o.pass &= secs < 10.0;
    o.detail.push_str(&format!("; runtime {secs:.2}s (< 10s)"));
    o
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let seeds = 20;
    let mut pass = true;
    let mut parts = Vec::new();
    for block in SUITE_BLOCKS {
        let (mut worst, mut failed) = (0.0f64, Vec::new());
        for seed in 0..seeds {
            let r = check_suite_block(block, seed).unwrap();
            worst = worst.max(r.max_rel_error);
            if !r.passed {
                failed.push(seed);
            }
        }
        pass &= failed.is_empty();
        let f = if failed.is_empty() {
            String::new()
        } else {
            format!(" failing seeds {failed:?}")
        };
        parts.push(format!("{block} {worst:.1e}{f}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: pass && secs < 300.0,
        detail: format!("{seeds} seeds each, tol 1e-4: {}; runtime {secs:.0}s (< 300s)", parts.join(", ")),
    }
}

fn budgets() -> Outcome {
    let checks = profiler::compare(ModelConfig::variant).unwrap();
    Outcome {
        pass: checks.iter().all(|c| c.pass),
        detail: checks
            .iter()
            .map(|c| format!("{} {:.3} vs {:.3}{}", c.name, c.measured, c.reference, if c.pass { "" } else { " (out)" }))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn zero_gates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    for cfg in [ModelConfig::micro(), ModelConfig::variant(Variant::N), ModelConfig::variant(Variant::S)] {
        assert!(cfg.tunnels.gates.iter().all(|&g| g == 0.0));
        let mut off = cfg.clone();
        off.tunnels = TunnelConfig::disabled();
        let (a, b) = (build_model(&cfg, 11).unwrap(), build_model(&off, 11).unwrap());
        let img = Tensor::uniform([1, 3, 64, 64], 0.0, 1.0, &mut rng);
        let (ya, yb) = (forward_detect(&a, &img).unwrap(), forward_detect(&b, &img).unwrap());
        ok &= ya.iter().zip(&yb).all(|(u, v)| u.bit_eq(v));
    }
    Outcome {
        pass: ok,
        detail: "micro, N and S heads compared bit-for-bit against tunnels-disabled networks".into(),
    }
}

fn toy_training() -> Outcome {
    let max_steps = 1500;
    let cfg = TrainConfig {
        steps: max_steps,
        eval_every: 50,
        eval_scenes: 200,
        stop_at_target: true,
        ..Default::default()
    };
    let run = |tunnels: bool| {
        let mut model = ModelConfig::variant(Variant::N);
        model.num_classes = 3;
        if !tunnels {
            model.tunnels = TunnelConfig::disabled();
        }
        let mut net = build_model(&model, 0).unwrap();
        let t0 = Instant::now();
        let log = train_toy(&mut net, &cfg, |_, _| {}, |_, _| {}).unwrap();
        (log, t0.elapsed())
    };
    let (on, t_on) = run(true);
    let (off, t_off) = run(false);
    let last = |l: &hyperace::runtime::TrainLog| l.evals.last().map(|e| e.1).unwrap_or_default();
    let (e_on, e_off) = (last(&on), last(&off));
    let reached = on.reached_at.is_some() && t_on.as_secs_f64() < 1800.0;
    let not_slower = match (on.reached_at, off.reached_at) {
        (Some(a), Some(b)) => a <= b,
        (Some(_), None) => true,
        _ => false,
    };
    let steps = |s: Option<usize>| s.map_or(format!("not within {max_steps}"), |v| v.to_string());
    Outcome {
        pass: reached && not_slower,
        detail: format!(
            "N-scale, 3 classes, 64px scenes, batch 8. Tunnels on: target at step {} ({:.0}s), recall {:.3} precision {:.3}. \
             Tunnels off: target at step {} ({:.0}s), recall {:.3} precision {:.3}",
            steps(on.reached_at),
            t_on.as_secs_f64(),
            e_on.recall,
            e_on.precision,
            steps(off.reached_at),
            t_off.as_secs_f64(),
            e_off.recall,
            e_off.precision
        ),
    }
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("oracle equivalence (AHC, conv2d)", oracles),
        ("finite-difference gradient suite", gradients),
        ("participation normalization", || from_checks(&selftest::participation_normalization(1000, 3).unwrap())),
        ("permutation equivariance", || from_checks(&[selftest::permutation_equivariance(50, 4).unwrap()])),
        ("budget ratios and totals", budgets),
        ("zero gates equal the tunnels-disabled network", zero_gates),
        ("toy-scale learning", toy_training),
        ("linear time in N", || {
            from_checks(&[selftest::convolve_scaling(&[1000, 2000, 4000, 8000], 32, 8, 10, 5).unwrap()])
        }),
        ("post-processing", || {
            from_checks(&[selftest::nms_reference(1000, 7).unwrap(), selftest::decode_round_trip(1000, 8).unwrap()])
        }),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut all = true;
    for (i, (title, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.contains(&(i + 1)) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        report(i + 1, title, t0.elapsed(), &o);
        all &= o.pass;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
