//! Parameter/FLOP budgets, the reference budget comparisons, and
//! hyperedge participation export.
//!
//! FLOPs are 2 × multiply-accumulates for conv and matmul; pooling,
//! activations, batch norm, softmax and resize cost 1 per output element.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, Network, Variant};
use crate::nn::Session;
use crate::tensor::Tensor;

/// How FLOPs for a square input of side `size` are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    /// Measured at 32×32 and scaled by `(size / 32)²` — the usual way
    /// detector tooling quotes GFLOPs, and the one the reference budgets
    /// use.
    StrideScaled,
    /// Measured at the full input size.
    Direct,
}

impl std::str::FromStr for FlopConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stride-scaled" | "stride_scaled" | "scaled" => Ok(FlopConvention::StrideScaled),
            "direct" => Ok(FlopConvention::Direct),
            other => Err(Error::Config(format!("unknown FLOP convention `{other}` (stride-scaled or direct)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleBudget {
    pub name: String,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub input: [usize; 4],
    pub convention: FlopConvention,
    pub modules: Vec<ModuleBudget>,
    pub total_params: usize,
    pub total_flops: u64,
}

impl BudgetReport {
    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Aligned-column table with a totals row.
    pub fn to_text(&self) -> String {
        let width = self.modules.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<width$}  {:>12}  {:>14}\n", "module", "params", "FLOPs");
        for m in &self.modules {
            s.push_str(&format!("{:<width$}  {:>12}  {:>14}\n", m.name, m.params, m.flops));
        }
        s.push_str(&format!("{:<width$}  {:>12}  {:>14}\n", "total", self.total_params, self.total_flops));
        let [_, _, h, w] = self.input;
        s.push_str(&format!(
            "{:.3} M params, {:.2} GFLOPs at {h}x{w} ({:?})\n",
            self.params_m(),
            self.gflops(),
            self.convention
        ));
        s
    }
}

/// Per-module parameters and FLOPs at a square input of side `size`.
/// Depends only on the architecture, never on weight values.
pub fn budget(net: &Network, size: usize, convention: FlopConvention) -> Result<BudgetReport> {
    let (measure, scale) = match convention {
        FlopConvention::StrideScaled => {
            if !size.is_multiple_of(32) {
                return Err(Error::invalid("budget", format!("input {size} is not a multiple of 32")));
            }
            (32, ((size / 32) * (size / 32)) as u64)
        }
        FlopConvention::Direct => (size, 1),
    };
    let modules: Vec<ModuleBudget> = net
        .cost_breakdown([1, 3, measure, measure])?
        .into_iter()
        .map(|m| ModuleBudget {
            params: net.module_params(&m.name),
            flops: m.flops * scale,
            name: m.name,
        })
        .collect();
    Ok(BudgetReport {
        input: [1, 3, size, size],
        convention,
        total_params: modules.iter().map(|m| m.params).sum(),
        total_flops: modules.iter().map(|m| m.flops).sum(),
        modules,
    })
}

/// Parameter-only view of [`budget`] (FLOPs at the default 640 input).
pub fn count_params(net: &Network) -> Result<BudgetReport> {
    budget(net, 640, FlopConvention::StrideScaled)
}

pub fn count_flops(net: &Network, size: usize, convention: FlopConvention) -> Result<BudgetReport> {
    budget(net, size, convention)
}

/// Reference budgets: (variant, DS on (G, M), DS off (G, M)).
pub const REFERENCE_DS: [(Variant, (f64, f64), (f64, f64)); 2] =
    [(Variant::N, (6.4, 2.5), (7.9, 3.1)), (Variant::S, (20.8, 9.0), (27.1, 11.7))];

/// Reference totals of the larger variants: (G, M params).
pub const REFERENCE_LARGE: [(Variant, f64, f64); 2] = [(Variant::L, 88.4, 27.6), (Variant::X, 199.2, 64.0)];

/// Reference hyperedge sweep on S: M → (G, M params).
pub const REFERENCE_SWEEP: [(usize, f64, f64); 4] = [(2, 20.4, 8.6), (4, 20.5, 8.8), (8, 20.8, 9.0), (16, 21.5, 9.6)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub reference: f64,
    /// Allowed deviation, absolute (percentage points) or relative, as
    /// described by `kind`.
    pub tolerance: f64,
    pub kind: String,
    pub pass: bool,
}

impl Check {
    fn points(name: String, measured: f64, reference: f64, tol: f64) -> Check {
        Check {
            pass: (measured - reference).abs() <= tol,
            name,
            measured,
            reference,
            tolerance: tol,
            kind: "pp".into(),
        }
    }

    fn relative(name: String, measured: f64, reference: f64, tol: f64) -> Check {
        Check {
            pass: ((measured - reference) / reference).abs() <= tol,
            name,
            measured,
            reference,
            tolerance: tol,
            kind: "relative".into(),
        }
    }

    pub fn line(&self) -> String {
        let tol = if self.kind == "pp" {
            format!("±{} pp", self.tolerance)
        } else {
            format!("±{:.0}%", self.tolerance * 100.0)
        };
        format!(
            "{} {}: measured {:.3}, reference {:.3} ({tol})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.reference
        )
    }
}

fn totals(cfg: &ModelConfig) -> Result<(f64, f64)> {
    let net = build_model(cfg, 0)?;
    let r = budget(&net, 640, FlopConvention::StrideScaled)?;
    Ok((r.gflops(), r.params_m()))
}

/// The reference budget checks, with `base(variant)` supplying each
/// starting configuration: absolute totals (±15%), DS on/off reductions
/// (±5 pp) for N and S, and the S hyperedge sweep 2→16 deltas (±20%).
pub fn compare(base: impl Fn(Variant) -> ModelConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (v, (on_g, on_m), (off_g, off_m)) in REFERENCE_DS {
        let on_cfg = base(v);
        let mut off_cfg = on_cfg.clone();
        off_cfg.use_ds = false;
        let mut on_cfg = on_cfg;
        on_cfg.use_ds = true;
        let (g1, m1) = totals(&on_cfg)?;
        let (g0, m0) = totals(&off_cfg)?;
        checks.push(Check::relative(format!("{v} total GFLOPs"), g1, on_g, 0.15));
        checks.push(Check::relative(format!("{v} total params (M)"), m1, on_m, 0.15));
        let pct = |a: f64, b: f64| 100.0 * (1.0 - a / b);
        checks.push(Check::points(format!("{v} DS param reduction (%)"), pct(m1, m0), pct(on_m, off_m), 5.0));
        checks.push(Check::points(format!("{v} DS FLOP reduction (%)"), pct(g1, g0), pct(on_g, off_g), 5.0));
    }
    for (v, g, m) in REFERENCE_LARGE {
        let (g1, m1) = totals(&base(v))?;
        checks.push(Check::relative(format!("{v} total GFLOPs"), g1, g, 0.15));
        checks.push(Check::relative(format!("{v} total params (M)"), m1, m, 0.15));
    }
    let sweep = |m: usize| -> Result<(f64, f64)> {
        let mut c = base(Variant::S);
        c.hyperace.hyperedges = m;
        totals(&c)
    };
    let (g2, p2) = sweep(2)?;
    let (g16, p16) = sweep(16)?;
    let (r2, r16) = (REFERENCE_SWEEP[0], REFERENCE_SWEEP[3]);
    checks.push(Check::relative("s M 2→16 param delta (M)".into(), p16 - p2, r16.2 - r2.2, 0.20));
    checks.push(Check::relative("s M 2→16 FLOP delta (G)".into(), g16 - g2, r16.1 - r2.1, 0.20));
    Ok(checks)
}

/// Participation matrix of one C3AH layer for one image.
#[derive(Clone, Debug)]
pub struct ParticipationExport {
    pub layer: String,
    /// `[N, M]`, vertices in row-major pixel order.
    pub matrix: Tensor,
    pub height: usize,
    pub width: usize,
    /// Input pixels per feature-map cell.
    pub stride: usize,
}

impl ParticipationExport {
    /// `vertex,row,col,e0,e1,…` with one line per vertex.
    pub fn to_csv(&self) -> String {
        let m = self.matrix.shape()[1];
        let mut s = String::from("vertex,row,col");
        for e in 0..m {
            s.push_str(&format!(",e{e}"));
        }
        s.push('\n');
        for (v, row) in self.matrix.data().chunks(m).enumerate() {
            s.push_str(&format!("{v},{},{}", v / self.width, v % self.width));
            for a in row {
                s.push_str(&format!(",{a}"));
            }
            s.push('\n');
        }
        s
    }

    /// For every hyperedge, the `k` most participating vertices as
    /// `(x, y, weight)` with `(x, y)` the cell center in input pixels.
    pub fn top_k(&self, k: usize) -> Vec<Vec<(f64, f64, f64)>> {
        let (n, m) = (self.matrix.shape()[0], self.matrix.shape()[1]);
        let d = self.matrix.data();
        (0..m)
            .map(|e| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| d[b * m + e].total_cmp(&d[a * m + e]));
                idx.into_iter()
                    .take(k)
                    .map(|v| {
                        let s = self.stride as f64;
                        ((v % self.width) as f64 * s + s / 2.0, (v / self.width) as f64 * s + s / 2.0, d[v * m + e])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn top_k_csv(&self, k: usize) -> String {
        let mut s = String::from("hyperedge,rank,x,y,weight\n");
        for (e, list) in self.top_k(k).iter().enumerate() {
            for (r, (x, y, w)) in list.iter().enumerate() {
                s.push_str(&format!("{e},{r},{x},{y},{w}\n"));
            }
        }
        s
    }
}

/// Names of the network's C3AH layers.
pub fn c3ah_layer_names(net: &Network) -> Vec<String> {
    net.c3ah_layers().iter().map(|l| l.name.clone()).collect()
}

/// Runs `image` (`[1, 3, H, W]`) and returns the participation matrix of
/// the C3AH layer named `layer` (full name, or its index).
pub fn export_participation(net: &Network, image: &Tensor, layer: &str) -> Result<ParticipationExport> {
    let names = c3ah_layer_names(net);
    let chosen = names
        .iter()
        .find(|n| n.as_str() == layer || n.ends_with(&format!(".{layer}")))
        .or_else(|| layer.parse::<usize>().ok().and_then(|i| names.get(i)))
        .cloned()
        .ok_or_else(|| Error::UnknownLayer {
            wanted: layer.to_string(),
            available: names.clone(),
        })?;
    if image.rank() != 4 || image.shape()[0] != 1 {
        return Err(Error::invalid("participation", format!("expected one [1, 3, H, W] image, got {:?}", image.shape())));
    }
    net.check_input(image.shape())?;
    let mut s = Session::eval(&net.store);
    let x = s.tape.constant(image.clone());
    net.forward(&mut s, x)?;
    let a = s
        .probes()
        .iter()
        .find(|(n, _)| n == &chosen)
        .map(|(_, v)| s.tape.value(*v).clone())
        .expect("every C3AH layer records its participation");
    // The high-order branch runs on the stride-16 map.
    let stride = 16;
    let (h, w) = (image.shape()[2] / stride, image.shape()[3] / stride);
    let (n, m) = (a.shape()[1], a.shape()[2]);
    if n != h * w {
        return Err(Error::invalid("participation", format!("{n} vertices do not tile a {h}x{w} map")));
    }
    Ok(ParticipationExport {
        layer: chosen,
        matrix: a.reshape([n, m])?,
        height: h,
        width: w,
        stride,
    })
}
