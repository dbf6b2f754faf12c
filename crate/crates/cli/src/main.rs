use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use choquard_core::config::RunConfig;
use choquard_core::energy::{poisson_recover, poisson_residual};
use choquard_core::grid::RadialFunction;
use choquard_core::moser::moser_bound_report;
use choquard_core::nonlinearity::{beta0, validate_assumptions};
use choquard_core::solver::{attach_poisson, continue_to_zero, solve_mu, Progress, SolutionBundle};
use choquard_core::{verify, Error};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

const CACHE_ENV: &str = "CHOQUARD_CACHE_DIR";

#[derive(Parser, Debug)]
#[command(name = "choquard", version, about = "Mountain-pass solver for the logarithmic Choquard equation")]
struct Cli {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set grid.M=400`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every weight and nonlinearity assumption and print the derived constants.
    Validate,
    /// Run the inequality and consistency suites.
    Verify,
    /// Mountain-pass solve of J_mu at one mu.
    Solve {
        #[arg(long)]
        mu: f64,
    },
    /// Continuation mu -> 0 followed by the log-functional polish.
    Continue,
    /// Moser-sequence level bound.
    MoserBound {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<f64>,
        /// Kernel parameter; defaults to mu0.
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Recover phi_u from a stored u and report the Poisson residual.
    Poisson {
        #[arg(long)]
        u: PathBuf,
    },
}

/// Failure carrying the process exit code.
struct Exit(u8, anyhow::Error);

fn classify(err: anyhow::Error) -> Exit {
    let code = match err.downcast_ref::<Error>() {
        Some(Error::Parse(_)) | Some(Error::Io(_)) => 2,
        Some(e) if e.is_numerical() => 3,
        _ => 1,
    };
    Exit(code, err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> std::result::Result<u8, Exit> {
    let cfg = load_config(cli).map_err(classify)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let result = match &cli.command {
        Command::Validate => return cmd_validate(&cfg).map_err(classify),
        Command::Verify => return cmd_verify(&cfg, cache).map_err(classify),
        Command::Solve { mu } => cmd_solve(&cfg, *mu, &out, cache),
        Command::Continue => cmd_continue(&cfg, &out, cache),
        Command::MoserBound { n, mu } => cmd_moser(&cfg, n, *mu, &out, cache),
        Command::Poisson { u } => cmd_poisson(&cfg, u, &out, cache),
    };
    result.map(|()| 0).map_err(classify)
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    Ok(match &cli.config {
        Some(path) => RunConfig::load(path, &cli.overrides)?,
        None => RunConfig::parse("", &cli.overrides)?,
    })
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n"
}

/// Config hash, derived constants and grid, shared by every report.
fn header(cfg: &RunConfig, command: &str) -> Value {
    let w = &cfg.weights.params;
    let derived = w.derive_exponents().ok();
    let rho = w.moser_radius();
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": cfg,
        "derived": derived,
        "threshold": choquard_core::nonlinearity::mountain_pass_threshold(w, cfg.nonlinearity.alpha0),
        "beta0": beta0(w, cfg.nonlinearity.alpha0, rho),
        "rho": rho,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn cmd_validate(cfg: &RunConfig) -> Result<u8> {
    let w = &cfg.weights.params;
    let mut failed: Vec<String> = Vec::new();
    let weight_checks = match cfg.weights() {
        Ok(weights) => weights.assumption_checks(),
        Err(Error::Assumption { assumption, detail }) => {
            failed.push(assumption.clone());
            vec![choquard_core::weights::AssumptionCheck::new(&assumption, false, detail)]
        }
        Err(e @ Error::Domain(_)) => {
            failed.push("config".into());
            vec![choquard_core::weights::AssumptionCheck::new("config", false, e.to_string())]
        }
        Err(e) => return Err(e.into()),
    };
    failed.extend(weight_checks.iter().filter(|c| !c.passed).map(|c| c.assumption.clone()));
    let integrability = failed.is_empty().then(|| w.check_integrability());
    let nonlinearity = if failed.is_empty() {
        let nl = cfg.nonlinearity()?;
        let rep = validate_assumptions(&nl, w)?;
        failed.extend(rep.checks.iter().filter(|c| !c.passed).map(|c| c.assumption.clone()));
        Some(rep)
    } else {
        None
    };
    if integrability.as_ref().is_some_and(|i| !i.holds) {
        failed.push("integrability".into());
    }
    failed.dedup();
    let report = merge(
        header(cfg, "validate"),
        json!({
            "complete": true,
            "passed": failed.is_empty(),
            "failed": failed,
            "weights": weight_checks,
            "integrability": integrability,
            "nonlinearity": nonlinearity,
        }),
    );
    print!("{}", pretty(&report));
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("validation failed: {}", failed.join(", "));
        Ok(1)
    }
}

fn cmd_verify(cfg: &RunConfig, cache: Option<PathBuf>) -> Result<u8> {
    cfg.weights()?;
    let rep = verify::run_all(cfg, cache)?;
    let report = merge(header(cfg, "verify"), json!({ "complete": true, "passed": rep.passed, "suites": rep.suites }));
    print!("{}", pretty(&report));
    if rep.passed {
        Ok(0)
    } else {
        let names: Vec<&str> = rep.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        eprintln!("failing suites: {}", names.join(", "));
        Ok(1)
    }
}

fn bundle_json(b: &SolutionBundle) -> Value {
    serde_json::to_value(b).expect("bundle serializes")
}

/// Writes the trace and the report; on failure the report is marked incomplete.
fn finish(out: &Path, report: Value, trace: &[Value], outcome: Result<Value>) -> Result<()> {
    let lines: String = trace.iter().map(|v| v.to_string() + "\n").collect();
    write_atomic(&out.join("trace.jsonl"), &lines)?;
    match outcome {
        Ok(extra) => {
            let full = merge(merge(report, extra), json!({ "complete": true }));
            write_atomic(&out.join("report.json"), &pretty(&full))?;
            print!("{}", pretty(&full));
            Ok(())
        }
        Err(err) => {
            let partial = merge(report, json!({ "complete": false, "error": format!("{err:#}") }));
            write_atomic(&out.join("report.json"), &pretty(&partial))?;
            Err(err)
        }
    }
}

fn cmd_solve(cfg: &RunConfig, mu: f64, out: &Path, cache: Option<PathBuf>) -> Result<()> {
    let mut trace = Vec::new();
    let outcome = (|| -> Result<Value> {
        let ctx = cfg.context(cache)?;
        let mut bundle = solve_mu(&ctx, mu, None, &mut |p| trace.push(serde_json::to_value(&p).expect("event")))?;
        let problem = ctx.problem()?;
        let logk = ctx.log_kernels()?;
        attach_poisson(&ctx, &problem, &logk, &mut bundle)?;
        write_atomic(&out.join("u.csv"), &bundle.u.to_csv())?;
        if let Some(phi) = &bundle.phi {
            write_atomic(&out.join("phi.csv"), &phi.to_csv())?;
        }
        let split = bundle.log_split.clone();
        Ok(json!({
            "mu": mu,
            "grid": ctx.grid.descriptor(),
            "solution": bundle_json(&bundle),
            "logFF_near": split.as_ref().map(|s| s.near),
            "logFF_far": split.as_ref().map(|s| s.far),
            "mp_margin": bundle.margin,
        }))
    })();
    finish(out, header(cfg, "solve"), &trace, outcome)
}

fn cmd_continue(cfg: &RunConfig, out: &Path, cache: Option<PathBuf>) -> Result<()> {
    let mut trace = Vec::new();
    let mut steps = Vec::new();
    let outcome = (|| -> Result<Value> {
        let ctx = cfg.context(cache)?;
        let rep = continue_to_zero(&ctx, &cfg.schedule, &mut |p| {
            if let Progress::Step(s) = &p {
                steps.push(serde_json::to_value(s).expect("step"));
            }
            trace.push(serde_json::to_value(&p).expect("event"));
        })?;
        let limit = &rep.limit;
        write_atomic(&out.join("u0.csv"), &limit.u.to_csv())?;
        if let Some(phi) = &limit.phi {
            write_atomic(&out.join("phi.csv"), &phi.to_csv())?;
        }
        let split = limit.log_split.clone();
        let history: Vec<Value> = rep.steps.iter().map(|s| json!([s.mu, s.level])).collect();
        Ok(json!({
            "grid": ctx.grid.descriptor(),
            "continuation": rep,
            "c_mu_history": history,
            "logFF_near": split.as_ref().map(|s| s.near),
            "logFF_far": split.as_ref().map(|s| s.far),
            "mp_margin": rep.threshold - rep.sup_level,
        }))
    })();
    let report = merge(header(cfg, "continue"), json!({ "steps": steps }));
    finish(out, report, &trace, outcome)
}

fn cmd_moser(cfg: &RunConfig, ns: &[f64], mu: Option<f64>, out: &Path, cache: Option<PathBuf>) -> Result<()> {
    let outcome = (|| -> Result<Value> {
        let ctx = cfg.context(cache)?;
        let w = &cfg.weights.params;
        let rep = moser_bound_report(&ctx, mu.unwrap_or(w.mu0), ns, w.moser_radius())?;
        Ok(json!({ "moser": rep }))
    })();
    finish(out, header(cfg, "moser-bound"), &[], outcome)
}

fn cmd_poisson(cfg: &RunConfig, u_path: &Path, out: &Path, cache: Option<PathBuf>) -> Result<()> {
    let outcome = (|| -> Result<Value> {
        let ctx = cfg.context(cache)?;
        let u = RadialFunction::from_csv(ctx.grid.clone(), u_path)?;
        let problem = ctx.problem()?;
        let logk = ctx.kernel(choquard_core::kernels::KernelKind::Log)?;
        let phi = poisson_recover(&problem, &logk, &u)?;
        let source = RadialFunction::new(ctx.grid.clone(), problem.density(u.values())?)?;
        let residual = match poisson_residual(&phi, &source) {
            Ok(r) => Some(r),
            Err(Error::UnsupportedDimension(_)) => None,
            Err(e) => return Err(e.into()),
        };
        write_atomic(&out.join("phi.csv"), &phi.to_csv())?;
        Ok(json!({ "u": u_path, "poisson_residual": residual }))
    })();
    finish(out, header(cfg, "poisson"), &[], outcome)
}
