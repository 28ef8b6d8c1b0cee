use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use gkpec::analysis::{
    capacity_lower_bound, contour_grid, db_to_r, fidelity_no_qec, fidelity_report, threshold_diagonal,
};
use gkpec::concat::{evaluate_plan_with, run_plan, CodePlan};
use gkpec::gaussian::GaussianChannel;
use gkpec::mc::{chi_square_test, mc_fidelity, mc_residual, McConfig};
use gkpec::memory::{memory_sigmas, partition_by_threshold, MemoryChannelSpec};
use gkpec::mixture::PRUNE_EPS;
use gkpec::optimize::{optimize_full, OptimizeRequest, OptimizerSettings, PermutationScope, Strategy};
use gkpec::reduction::{reduce_channel, verify_reduction};
use gkpec::two_mode::{
    average_std, sr_residual_mixture, tms_residual_mixture, CodeFamily, SrLayerParams, TmsLayerParams,
};

mod figures;

#[derive(Parser, Debug)]
#[command(name = "gkpec", version, about = "GKP error correction against Gaussian noise")]
struct Cli {
    /// Random seed; falls back to $GKPEC_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results are identical for any count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Reduce a Gaussian channel JSON {"n","T","N","d"} to independent AWGN channels.
    Reduce {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Single two-mode code: residual statistics for given noise and gain.
    TwoMode {
        #[arg(long, value_enum)]
        code: Code,
        #[arg(long)]
        sigma_data: f64,
        #[arg(long)]
        sigma_anc: f64,
        #[arg(long)]
        gain: f64,
        /// Include the residual mixtures.
        #[arg(long)]
        mixtures: bool,
    },
    /// Evaluate a concatenated plan.
    Concat {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        mixtures: bool,
    },
    /// Optimize gains (and layer orders) for a set of channels.
    Optimize {
        #[arg(long, value_enum)]
        code: Code,
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        #[arg(long, value_enum, default_value = "global")]
        strategy: StrategyArg,
        /// `all`, `reverse`, or orders like `4,3,1,2,5;4,3,2,1,5`.
        #[arg(long, default_value = "all")]
        perms: String,
        #[command(flatten)]
        opt: OptArgs,
        /// Also write the per-order ratio table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Unravel the lossy memory channel into independent AWGN channels.
    Memory {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        kappa: f64,
        /// Keep channels above the code threshold (those at or above 1 are
        /// still dropped).
        #[arg(long)]
        keep_all: bool,
        /// Optimize a concatenated code over the kept channels.
        #[arg(long)]
        plan: bool,
        #[arg(long, value_enum, default_value = "tms")]
        code: Code,
        /// Diagonal threshold used for discarding; computed when omitted.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Capacity lower bound on the logical variance.
    Bound {
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        /// Achieved logical STD to compare against.
        #[arg(long)]
        achieved: Option<f64>,
    },
    /// Largest equal noise at which the optimized two-mode code still helps.
    Threshold {
        #[arg(long, value_enum)]
        code: Code,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Grid of error-correction ratios as CSV.
    Contour {
        #[arg(long, value_enum)]
        code: Code,
        #[arg(long, default_value_t = 0.05)]
        min: f64,
        #[arg(long, default_value_t = 0.6)]
        max: f64,
        #[arg(long, default_value_t = 12)]
        res: usize,
    },
    /// Fidelity of a squeezed vacuum sent through two noisy channels.
    Fidelity {
        #[arg(long)]
        db: f64,
        #[arg(long)]
        sigma1: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long, value_enum, default_value = "tms")]
        code: Code,
        /// Only report the unprotected fidelity through the better channel.
        #[arg(long)]
        no_qec: bool,
    },
    /// Monte Carlo simulation of a plan.
    Mc {
        #[command(flatten)]
        plan: PlanArgs,
        /// Sample count; accepts forms like 1e7.
        #[arg(long, default_value = "1e6", value_parser = parse_count)]
        samples: u64,
        /// Histogram bins for a goodness-of-fit test against the analytic density.
        #[arg(long)]
        bins: Option<usize>,
        /// Also estimate the squeezed-vacuum fidelity at this squeezing.
        #[arg(long)]
        db: Option<f64>,
    },
    /// Emit figure data as CSV plus a manifest.
    Figures {
        #[arg(value_enum)]
        which: Vec<figures::Figure>,
        #[arg(long, default_value = "figures")]
        dir: PathBuf,
        /// Random samples per configuration.
        #[arg(long, default_value_t = 20)]
        samples: usize,
        /// Grid resolution for contour figures.
        #[arg(long, default_value_t = 12)]
        res: usize,
    },
}

#[derive(Args, Debug, Serialize)]
struct PlanArgs {
    /// Plan JSON {"family","sigmas","gains","permutation"}.
    #[arg(long, conflicts_with_all = ["code", "sigmas", "gains", "perm"])]
    plan: Option<PathBuf>,
    #[arg(long, value_enum)]
    code: Option<Code>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    gains: Vec<f64>,
    /// Layer order; defaults to the reverse order.
    #[arg(long, value_delimiter = ',')]
    perm: Vec<usize>,
}

#[derive(Args, Debug, Serialize)]
struct OptArgs {
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    prune_eps: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Code {
    Tms,
    Sr,
}

impl From<Code> for CodeFamily {
    fn from(c: Code) -> Self {
        match c {
            Code::Tms => CodeFamily::Tms,
            Code::Sr => CodeFamily::Sr,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StrategyArg {
    Global,
    Greedy,
}

fn parse_count(s: &str) -> Result<u64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s}: {e}"))?;
    if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
        return Err(format!("{s} is not a whole sample count"));
    }
    Ok(v as u64)
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

pub(crate) struct Ctx {
    pub seed: u64,
    meta: Value,
}

impl Ctx {
    fn settings(&self, opt: Option<&OptArgs>) -> OptimizerSettings {
        let mut s = OptimizerSettings { seed: self.seed, ..OptimizerSettings::default() };
        if let Some(o) = opt {
            if let Some(v) = o.starts {
                s.starts = v;
            }
            if let Some(v) = o.budget {
                s.budget = v;
            }
            if let Some(v) = o.prune_eps {
                s.prune_eps = v;
            }
        }
        s
    }

    pub fn meta(&self) -> Value {
        self.meta.clone()
    }
}

/// Deterministic parts of the run identity; the timestamp is added later
/// and never hashed.
fn run_meta(cli: &Cli, seed: u64) -> Value {
    // results do not depend on the thread count, so --jobs is left out
    let config = json!({ "command": &cli.cmd, "seed": seed });
    let hash = Sha256::digest(serde_json::to_vec(&config).expect("config serializes"));
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config_hash": hash.iter().map(|b| format!("{b:02x}")).collect::<String>(),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> AnyResult<T> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn load_plan(args: &PlanArgs) -> AnyResult<CodePlan> {
    if let Some(path) = &args.plan {
        let plan: CodePlan = read_json(path)?;
        plan.validate()?;
        return Ok(plan);
    }
    let code = args.code.ok_or("either --plan or --code with --sigmas is required")?;
    if args.sigmas.is_empty() {
        return Err("--sigmas is required without --plan".into());
    }
    let n = args.sigmas.len();
    let perm = if args.perm.is_empty() { (1..=n).rev().collect() } else { args.perm.clone() };
    Ok(CodePlan::new(code.into(), args.sigmas.clone(), args.gains.clone(), perm)?)
}

fn parse_perms(spec: &str) -> AnyResult<PermutationScope> {
    Ok(match spec {
        "all" => PermutationScope::All,
        "reverse" => PermutationScope::ReverseOnly,
        list => PermutationScope::Explicit(
            list.split(';')
                .map(|p| p.split(',').map(|x| x.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?,
        ),
    })
}

fn threshold_for(code: CodeFamily, given: Option<f64>) -> AnyResult<f64> {
    Ok(match given {
        Some(t) => t,
        None => threshold_diagonal(code, 1e-4)?,
    })
}

fn run(cli: &Cli, ctx: &Ctx) -> AnyResult<Value> {
    let value = match &cli.cmd {
        Command::Reduce { input } => {
            let c: GaussianChannel = read_json(input)?;
            let r = reduce_channel(&c)?;
            json!({
                "sigmas": r.sigmas,
                "stages": { "pre": r.pre, "post": r.post },
                "residual": r.residual_error,
                "verify_deviation": verify_reduction(&c, &r),
                "degraded": r.degraded,
                "active_noise_conjugation": r.active_noise_conjugation,
                "erased_modes": r.erased_modes,
            })
        }
        Command::TwoMode { code, sigma_data, sigma_anc, gain, mixtures } => {
            let (name, bin, peak, (q, p)) = match CodeFamily::from(*code) {
                CodeFamily::Tms => {
                    let prm = TmsLayerParams::new(*sigma_data, *sigma_anc, *gain)?;
                    ("tms", prm.sigma_bin(), prm.sigma_peak(), tms_residual_mixture(&prm))
                }
                CodeFamily::Sr => {
                    let prm = SrLayerParams::new(*sigma_data, *sigma_anc, *gain)?;
                    ("sr", prm.sigma_bin(), prm.sigma_peak(), sr_residual_mixture(&prm))
                }
            };
            let mut v = json!({
                "code": name,
                "sigma_bin": bin,
                "sigma_peak": peak,
                "sigma_q": q.std_dev(),
                "sigma_p": p.std_dev(),
                "sigma_L": average_std(&q, &p),
            });
            if *mixtures {
                v["mixtures"] = json!({ "q": q, "p": p });
            }
            v
        }
        Command::Concat { plan, mixtures } => {
            let plan = load_plan(plan)?;
            serde_json::to_value(evaluate_plan_with(&plan, PRUNE_EPS, *mixtures)?)?
        }
        Command::Optimize { code, sigmas, strategy, perms, opt, csv } => {
            let mut req = OptimizeRequest::new(sigmas.clone(), (*code).into());
            req.strategy = match strategy {
                StrategyArg::Global => Strategy::Global,
                StrategyArg::Greedy => Strategy::Greedy,
            };
            req.scope = parse_perms(perms)?;
            req.settings = ctx.settings(Some(opt));
            let r = optimize_full(&req)?;
            if let Some(path) = csv {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["index", "permutation", "gains", "sigma_L", "ratio", "baseline"])?;
                for row in &r.table {
                    w.write_record([
                        row.index.to_string(),
                        join(&row.permutation),
                        row.gains.iter().map(|g| sig9(*g)).collect::<Vec<_>>().join(" "),
                        sig9(row.sigma_l),
                        sig9(row.ratio),
                        row.baseline.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            json!({ "sigma_L_star": r.best_sigma_l, "result": r })
        }
        Command::Memory { n, mu, kappa, keep_all, plan, code, threshold, opt } => {
            let modes = memory_sigmas(&MemoryChannelSpec::new(*n, *mu, *kappa)?);
            let family: CodeFamily = (*code).into();
            let cut = if *keep_all { 1.0 } else { threshold_for(family, *threshold)? };
            let (kept, discarded) = partition_by_threshold(&modes.sigmas, cut);
            let mut v = json!({
                "sigmas": modes.sigmas,
                "transmissivities": modes.transmissivities,
                "threshold": cut,
                "kept": kept,
                "discarded": discarded,
            });
            if *plan {
                let mut req = OptimizeRequest::new(kept, family);
                req.settings = ctx.settings(Some(opt));
                let r = optimize_full(&req)?;
                v["sigma_L_star"] = json!(r.best_sigma_l);
                v["plan"] = serde_json::to_value(&r.best)?;
                v["orders"] = serde_json::to_value(&r.table)?;
            }
            v
        }
        Command::Bound { sigmas, achieved } => {
            let mut b = capacity_lower_bound(sigmas)?;
            if let Some(a) = achieved {
                b = b.with_achieved(*a);
            }
            json!({ "bound": b, "satisfied": b.satisfied() })
        }
        Command::Threshold { code, tol } => {
            json!({ "code": CodeFamily::from(*code), "sigma_c": threshold_diagonal((*code).into(), *tol)? })
        }
        Command::Contour { code, min, max, res } => {
            let grid = contour_grid((*code).into(), *min, *max, *res)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["sigma1", "sigma2", "G", "sigma_L", "ratio"])?;
            for p in &grid {
                w.write_record([p.sigma1, p.sigma2, p.gain, p.sigma_l, p.ratio].map(sig9))?;
            }
            let text = String::from_utf8(w.into_inner()?)?;
            return Ok(json!({ "csv": text }));
        }
        Command::Fidelity { db, sigma1, sigma2, code, no_qec } => {
            let r = db_to_r(*db);
            if *no_qec {
                json!({ "r": r, "no_qec": fidelity_no_qec(r, sigma1.min(*sigma2)) })
            } else {
                serde_json::to_value(fidelity_report((*code).into(), r, *sigma1, *sigma2, &ctx.settings(None))?)?
            }
        }
        Command::Mc { plan, samples, bins, db } => {
            let plan = load_plan(plan)?;
            let (state, _) = run_plan(&plan, PRUNE_EPS)?;
            let mut cfg = McConfig::new(plan, *samples, ctx.seed);
            if let Some(b) = bins {
                let w = 6.0 * state.q.std_dev().max(state.p.std_dev());
                cfg.histogram = Some((-w, w, *b));
            }
            let res = mc_residual(&cfg)?;
            let mut v = json!({ "analytic_sigma_L": state.sigma_l(), "mc": res });
            if let (Some(hq), Some(hp)) = (&res.histogram_q, &res.histogram_p) {
                v["chi_square"] = json!({ "q": chi_square_test(hq, &state.q), "p": chi_square_test(hp, &state.p) });
            }
            if let Some(db) = db {
                v["fidelity"] = serde_json::to_value(mc_fidelity(&cfg, db_to_r(*db))?)?;
            }
            v
        }
        Command::Figures { which, dir, samples, res } => {
            fs::create_dir_all(dir)?;
            let list = if which.is_empty() { figures::Figure::all() } else { which.clone() };
            let opts = figures::Options { samples: *samples, res: *res, settings: ctx.settings(None) };
            let mut entries = Vec::new();
            for f in list {
                entries.extend(f.emit(dir, &opts, ctx)?);
            }
            let manifest = json!({ "meta": ctx.meta(), "files": entries });
            fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
            manifest
        }
    };
    Ok(value)
}

pub(crate) fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.8e}")
}

pub(crate) fn join(p: &[usize]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> AnyResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => match std::env::var("GKPEC_SEED") {
            Ok(v) => match v.trim().parse() {
                Ok(s) => s,
                Err(_) => {
                    eprintln!("error: GKPEC_SEED={v} is not an unsigned integer");
                    return ExitCode::from(2);
                }
            },
            Err(_) => 0,
        },
    };
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let ctx = Ctx { seed, meta: run_meta(&cli, seed) };
    let value = match run(&cli, &ctx) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let output = if let Command::Contour { .. } = cli.cmd {
        value["csv"].as_str().unwrap_or_default().to_string()
    } else {
        let mut meta = ctx.meta();
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        meta["timestamp"] = json!(now);
        let mut doc = json!({ "meta": meta });
        doc["data"] = value;
        serde_json::to_string_pretty(&doc).expect("json serializes") + "\n"
    };
    let written = match &cli.out {
        Some(path) => fs::write(path, output),
        None => std::io::stdout().write_all(output.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
