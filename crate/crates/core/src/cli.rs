//! Command-line front end. Machine-readable results go to stdout, logs to
//! stderr. Precedence: built-in defaults < `--config` file < flags.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::model::{build_model, check_suite_block, ModelConfig, Network, TunnelConfig, Variant, SUITE_BLOCKS};
use crate::profiler::{self, FlopConvention};
use crate::runtime::{self, load_image, TrainConfig};
use crate::selftest;

#[derive(Parser, Debug)]
#[command(name = "hyperace", version, about = "Hypergraph-enhanced detector: build, run, profile and verify")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a model configuration as JSON.
    Build(BuildArgs),
    /// Detect objects in an image; prints JSON lines.
    Detect(DetectArgs),
    /// Parameter and FLOP budget of a configuration.
    Profile(ProfileArgs),
    /// Dump a C3AH layer's participation matrix as CSV.
    Hyperedges(HyperedgeArgs),
    /// Finite-difference gradient checks over the building blocks.
    Gradcheck(GradcheckArgs),
    /// Train on synthetic scenes; writes weights, config and loss trace.
    Toytrain(ToytrainArgs),
    /// Oracle-equivalence and property checks.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    N,
    S,
    L,
    X,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::N => Variant::N,
            VariantArg::S => Variant::S,
            VariantArg::L => Variant::L,
            VariantArg::X => Variant::X,
        }
    }
}

/// Flags shared by every command that builds a network.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Configuration JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this variant's defaults (ignored with --config).
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Use standard convolutions instead of the depthwise-separable blocks.
    #[arg(long)]
    pub no_ds: bool,
    /// Hyperedge count M.
    #[arg(long)]
    pub hyperedges: Option<usize>,
    /// Disable every distribution tunnel (and the HyperACE module).
    #[arg(long)]
    pub no_tunnels: bool,
    /// Number of object classes.
    #[arg(long)]
    pub classes: Option<usize>,
}

impl ModelArgs {
    pub fn resolve(&self, default: Variant) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => ModelConfig::load(p)?,
            None => ModelConfig::variant(self.variant.map_or(default, Variant::from)),
        };
        if self.no_ds {
            cfg.use_ds = false;
        }
        if let Some(m) = self.hyperedges {
            cfg.hyperace.hyperedges = m;
        }
        if self.no_tunnels {
            cfg.tunnels = TunnelConfig::disabled();
        }
        if let Some(k) = self.classes {
            cfg.num_classes = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// YV13 weight file; without it weights are randomly initialized from --seed.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// PPM (P6) or raw NCHW float image.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    #[arg(long, default_value_t = 0.45)]
    pub iou: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConventionArg {
    StrideScaled,
    Direct,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Square input side.
    #[arg(long, default_value_t = 640)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "stride-scaled")]
    pub convention: ConventionArg,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Also run the reference budget comparisons (variant totals, DS on/off, hyperedge sweep).
    #[arg(long)]
    pub compare: bool,
}

#[derive(Args, Debug)]
pub struct HyperedgeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    /// C3AH layer: full name (e.g. hyperace.high.0), suffix, or index.
    #[arg(long, default_value = "0")]
    pub layer: String,
    /// Also write the top-k vertices per hyperedge (image coordinates) here.
    #[arg(long)]
    pub top_k_out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SuiteSize {
    Micro,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, value_enum, default_value = "micro")]
    pub size: SuiteSize,
    /// Only this block (default: all).
    #[arg(long)]
    pub block: Option<String>,
}

#[derive(Args, Debug)]
pub struct ToytrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Scene side in pixels (multiple of 32).
    #[arg(long, default_value_t = 64)]
    pub scene_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Held-out scenes evaluated at the end (and every --eval-every steps).
    #[arg(long, default_value_t = 200)]
    pub eval_scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    /// Output directory: weights.yv13, config.json, loss.csv, eval.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn network(model: &ModelArgs, weights: Option<&Path>, seed: u64, default: Variant) -> Result<Network> {
    let cfg = model.resolve(default)?;
    let mut net = build_model(&cfg, seed)?;
    if let Some(w) = weights {
        runtime::apply_weights(&mut net.store, runtime::load_weights(w)?)?;
    }
    Ok(net)
}

fn emit(out: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(out.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

/// Executes a parsed command. `Ok(false)` means the command ran but its
/// checks failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let v = cli.verbose;
    match &cli.command {
        Command::Build(a) => {
            let cfg = a.model.resolve(Variant::N)?;
            let json = cfg.to_json() + "\n";
            match &a.out {
                Some(p) => {
                    std::fs::write(p, json)?;
                    log(v, format!("wrote {}", p.display()));
                }
                None => emit(&json)?,
            }
            Ok(true)
        }
        Command::Detect(a) => {
            let net = network(&a.model, a.weights.as_deref(), a.seed, Variant::N)?;
            let image = load_image(&a.image)?;
            let dets = runtime::train::detect(&net, &image, a.conf, a.iou)?;
            log(v, format!("{} detections", dets.len()));
            emit(&dets.iter().map(|d| d.to_json_line() + "\n").collect::<String>())?;
            Ok(true)
        }
        Command::Profile(a) => {
            let net = network(&a.model, None, 0, Variant::N)?;
            let convention = match a.convention {
                ConventionArg::StrideScaled => FlopConvention::StrideScaled,
                ConventionArg::Direct => FlopConvention::Direct,
            };
            let report = profiler::budget(&net, a.size, convention)?;
            let mut ok = true;
            let mut out = match a.format {
                Format::Text => report.to_text(),
                Format::Json => report.to_json() + "\n",
            };
            if a.compare {
                let base = a.model.clone();
                let checks = profiler::compare(|variant| {
                    let mut m = base.clone();
                    m.config = None;
                    m.variant = None;
                    m.resolve(variant).expect("validated above")
                })?;
                ok = checks.iter().all(|c| c.pass);
                match a.format {
                    Format::Text => out.extend(checks.iter().map(|c| c.line() + "\n")),
                    Format::Json => out.push_str(&(serde_json::to_string_pretty(&checks)? + "\n")),
                }
            }
            emit(&out)?;
            Ok(ok)
        }
        Command::Hyperedges(a) => {
            let net = network(&a.model, a.weights.as_deref(), a.seed, Variant::N)?;
            let image = load_image(&a.image)?;
            let export = profiler::export_participation(&net, &image, &a.layer)?;
            log(v, format!("layer {}: {}x{} vertices", export.layer, export.height, export.width));
            if let Some(p) = &a.top_k_out {
                std::fs::write(p, export.top_k_csv(a.top_k))?;
            }
            emit(&export.to_csv())?;
            Ok(true)
        }
        Command::Gradcheck(a) => {
            let SuiteSize::Micro = a.size;
            let blocks: Vec<&str> = match &a.block {
                Some(b) => vec![b.as_str()],
                None => SUITE_BLOCKS.to_vec(),
            };
            let mut ok = true;
            let mut out = String::from("block,seed,max_rel_error,checked,pass\n");
            let mut worst: f64 = 0.0;
            for seed in a.seed..a.seed + a.seeds.max(1) {
                for block in &blocks {
                    let r = check_suite_block(block, seed)?;
                    log(v, format!("{block} seed {seed}: {:.3e}", r.max_rel_error));
                    ok &= r.passed;
                    worst = worst.max(r.max_rel_error);
                    out.push_str(&format!("{block},{seed},{:e},{},{}\n", r.max_rel_error, r.checked, r.passed));
                }
            }
            out.push_str(&format!("# max relative error {worst:e}\n"));
            emit(&out)?;
            Ok(ok)
        }
        Command::Toytrain(a) => {
            let mut model = a.model.clone();
            if model.classes.is_none() && model.config.is_none() {
                model.classes = Some(runtime::CLASS_NAMES.len());
            }
            let mut net = network(&model, None, a.seed, Variant::N)?;
            if net.config.num_classes < runtime::CLASS_NAMES.len() {
                return Err(Error::Config(format!(
                    "synthetic scenes have {} classes; the model has {}",
                    runtime::CLASS_NAMES.len(),
                    net.config.num_classes
                )));
            }
            let cfg = TrainConfig {
                steps: a.steps,
                lr: a.lr,
                batch: a.batch,
                seed: a.seed,
                scene: runtime::SceneConfig {
                    size: a.scene_size,
                    ..Default::default()
                },
                eval_every: a.eval_every,
                eval_scenes: a.eval_scenes,
                ..Default::default()
            };
            std::fs::create_dir_all(&a.out)?;
            let log_every = (a.steps / 20).max(1);
            let trace = runtime::train_toy(
                &mut net,
                &cfg,
                |step, loss| {
                    if step % log_every == 0 {
                        log(v, format!("step {step} loss {loss:.4}"));
                    }
                },
                |step, r| eprintln!("eval @{step}: recall {:.3}, precision {:.3}", r.recall, r.precision),
            )?;
            runtime::save_weights(&net.store, &a.out.join("weights.yv13"))?;
            std::fs::write(a.out.join("config.json"), net.config.to_json())?;
            std::fs::write(a.out.join("loss.csv"), trace.to_csv())?;
            if let Some((_, r)) = trace.evals.last() {
                std::fs::write(a.out.join("eval.json"), serde_json::to_string_pretty(r)?)?;
            }
            emit(&trace.to_csv())?;
            Ok(true)
        }
        Command::Selftest(a) => {
            let checks = selftest::run_all(a.seed)?;
            emit(&checks.iter().map(|c| c.line() + "\n").collect::<String>())?;
            Ok(checks.iter().all(|c| c.pass))
        }
    }
}

/// Parses `argv` and runs it: exit 0 on success, 1 on an operational
/// error or failed check, 2 on a usage error.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
