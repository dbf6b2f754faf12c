//! Property suites for the inequalities and identities the solver relies on.
//!
//! Every suite reports its sample count, failure count, worst margin and,
//! on failure, a witness input. A suite that errors is reported as failed.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::Result;
use crate::grid::{decay_diagnostic, RadialGrid};
use crate::kernels::{dot, g_mu, HlsChecker, KernelKind, KernelMatrix};
use crate::moser::moser_bound_report;
use crate::nonlinearity::ln_phi_of_x;
use crate::solver::solve_mu;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub skipped: bool,
    pub samples: usize,
    pub failures: usize,
    /// Largest observed lhs/rhs-type ratio or error; the suite passes when it is within tolerance.
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
    pub details: Value,
}

impl SuiteReport {
    fn new(name: &str, samples: usize, failures: usize, worst_margin: f64, witness: Option<Value>, details: Value) -> Self {
        Self {
            name: name.to_string(),
            passed: failures == 0,
            skipped: false,
            samples,
            failures,
            worst_margin,
            witness,
            details,
        }
    }

    fn skipped(name: &str, note: &str) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            skipped: true,
            samples: 0,
            failures: 0,
            worst_margin: 0.0,
            witness: None,
            details: json!({ "note": note }),
        }
    }

    fn errored(name: &str, err: &crate::Error) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            skipped: false,
            samples: 0,
            failures: 1,
            worst_margin: f64::NAN,
            witness: Some(json!({ "error": err.to_string() })),
            details: Value::Null,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

/// Smooth profile with u(R_max) = 0 built from a Gaussian, r e^{-r} and a Lorentzian.
pub fn random_profile(rng: &mut ChaCha8Rng, nodes: &[f64], r_max: f64) -> Vec<f64> {
    let a: [f64; 3] = [rng.gen_range(0.1..0.8), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..0.4)];
    let s: f64 = rng.gen_range(0.5..2.0);
    let mut v: Vec<f64> = nodes
        .iter()
        .map(|&r| (a[0] * (-(r / s).powi(2)).exp() + a[1] * (-r).exp() * r + a[2] / (1.0 + r * r)) * (1.0 - r / r_max))
        .collect();
    if let Some(last) = v.last_mut() {
        *last = 0.0;
    }
    v
}

/// G_μ(t) >= log(1/t) on (0,1], and G_μ(t) <= C_ν t^{-ν} for ν > μ with C_ν at the maximizer.
pub fn suite_basic_est(samples: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..samples {
        let t: f64 = 1.0 - rng.gen::<f64>();
        let mu: f64 = 1.0 - rng.gen::<f64>();
        let lhs = g_mu(t, mu).expect("t > 0");
        let rhs = (1.0 / t).ln();
        // Allows four ulps of rounding in the comparison.
        let gap = rhs - lhs - 4.0 * f64::EPSILON * rhs.abs();
        worst = worst.max(rhs - lhs);
        if gap > 0.0 {
            failures += 1;
            witness.get_or_insert(json!({ "part": 1, "t": t, "mu": mu, "g_mu": lhs, "log_inv_t": rhs }));
        }
    }
    let mut worst2: f64 = 0.0;
    for _ in 0..samples {
        let mu: f64 = 1.0 - rng.gen::<f64>();
        let nu: f64 = mu + 1.0 - rng.gen::<f64>();
        let t = 10f64.powf(rng.gen_range(-8.0..3.0));
        let h = |t: f64| t.powf(nu) * g_mu(t, mu).expect("t > 0");
        // d/dt (t^{ν-μ} - t^ν) = 0 at t^{-μ} = ν/(ν-μ).
        let t_star = ((nu - mu) / nu).powf(1.0 / mu);
        let c_nu = h(t_star);
        let ratio = h(t) / c_nu;
        worst2 = worst2.max(ratio);
        if ratio > 1.0 + 1e-12 {
            failures += 1;
            witness.get_or_insert(json!({ "part": 2, "t": t, "mu": mu, "nu": nu, "c_nu": c_nu, "value": h(t) }));
        }
    }
    SuiteReport::new(
        "basic_est",
        2 * samples,
        failures,
        worst2,
        witness,
        json!({ "part1_worst_deficit": worst, "part2_worst_ratio": worst2 }),
    )
}

/// ln Φ_{α,j0}(t) with x = α t^{N/(N-1)}.
fn ln_phi(alpha: f64, j0: usize, t: f64, n_dim: usize) -> f64 {
    let n = n_dim as f64;
    ln_phi_of_x(alpha * t.powf(n / (n - 1.0)), j0)
}

/// (Φ_{α,j0}(t))^r <= C_β Φ_{αβ,j0}(t) for β > r > 1, sampled over t ∈ (0, 10].
pub fn suite_sani(samples: usize, n_dim: usize, j0: usize, seed: u64) -> SuiteReport {
    const TRIPLES: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a17);
    let per = samples.div_ceil(TRIPLES);
    let mut failures = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut witness = None;
    let mut constants = Vec::new();
    for _ in 0..TRIPLES {
        let alpha = rng.gen_range(0.5..4.0);
        let r = rng.gen_range(1.05..3.0);
        let beta = r + rng.gen_range(0.05..2.0);
        let ln_ratio = |t: f64| r * ln_phi(alpha, j0, t, n_dim) - ln_phi(alpha * beta, j0, t, n_dim);
        // Calibration: dense log scan over [1e-6, 10] refined by golden section.
        let scan: Vec<f64> = (0..=4000).map(|k| 10f64.powf(-6.0 + 7.0 * k as f64 / 4000.0)).collect();
        let k = (0..scan.len())
            .max_by(|&a, &b| ln_ratio(scan[a]).total_cmp(&ln_ratio(scan[b])))
            .expect("nonempty");
        let (mut a, mut b) = (scan[k.saturating_sub(1)], scan[(k + 1).min(scan.len() - 1)]);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if ln_ratio(c) >= ln_ratio(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let ln_c = ln_ratio(scan[k]).max(ln_ratio(0.5 * (a + b))) + 1e-9;
        constants.push(json!({ "alpha": alpha, "r": r, "beta": beta, "ln_c_beta": ln_c }));
        for _ in 0..per {
            let t = 10.0 * (1.0 - rng.gen::<f64>());
            let excess = ln_ratio(t) - ln_c;
            worst = worst.max(excess);
            if excess > 0.0 {
                failures += 1;
                witness.get_or_insert(json!({ "alpha": alpha, "r": r, "beta": beta, "t": t, "ln_excess": excess }));
            }
        }
    }
    SuiteReport::new(
        "sani",
        per * TRIPLES,
        failures,
        worst,
        witness,
        json!({ "j0": j0, "constants": constants }),
    )
}

/// HLS on random Gaussian mixtures with μ = 1 and q = r = 2N/(2N-1).
pub fn suite_hls(samples: usize, n_dim: usize, calibration: f64, seed: u64, exec: crate::exec::Execution) -> SuiteReport {
    let n = n_dim as f64;
    let q = 2.0 * n / (2.0 * n - 1.0);
    let checker = match HlsChecker::new(n_dim, 1.0, q, q, calibration, exec) {
        Ok(c) => c,
        Err(e) => return SuiteReport::errored("hls", &e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x415);
    let mixture = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
        let k = rng.gen_range(1..=4);
        (0..k).map(|_| (rng.gen_range(0.1..2.0), rng.gen_range(0.3..2.5))).collect()
    };
    let eval = |mix: &[(f64, f64)], r: f64| mix.iter().map(|(a, s)| a * (-0.5 * (r / s).powi(2)).exp()).sum::<f64>();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for _ in 0..samples {
        let fm = mixture(&mut rng);
        let hm = mixture(&mut rng);
        let out = checker.check_fn(|r| eval(&fm, r), |r| eval(&hm, r));
        let ratio = out.lhs / (checker.c_fit() * out.rhs);
        worst = worst.max(ratio);
        if !out.passed {
            failures += 1;
            witness.get_or_insert(json!({ "f": fm, "h": hm, "lhs": out.lhs, "rhs": out.rhs, "c_fit": checker.c_fit() }));
        }
    }
    SuiteReport::new(
        "hls",
        samples,
        failures,
        worst,
        witness,
        json!({ "mu": 1.0, "q": q, "r": q, "gaussian_ratio": checker.gaussian_ratio(), "c_fit": checker.c_fit(), "calibration": calibration }),
    )
}

/// N = 2 log kernel against the mean-value identity κ(r, s) = -log max(r, s), plus symmetry.
pub fn suite_kernel_mean_value(cfg: &RunConfig) -> SuiteReport {
    let run = || -> Result<SuiteReport> {
        let grid = RadialGrid::new(2, &cfg.grid)?;
        let k = KernelMatrix::assemble(&grid, KernelKind::Log, cfg.solver.angular_order, cfg.execution())?;
        let nodes = grid.nodes();
        let m = nodes.len();
        let mut failures = 0;
        let mut worst: f64 = 0.0;
        let mut worst_sym: f64 = 0.0;
        let mut witness = None;
        for i in 0..m {
            for j in 0..m {
                let exact = -nodes[i].max(nodes[j]).ln();
                let got = k.kappa(i, j);
                // Relative error with a 1e-6 floor where the oracle vanishes.
                let err = (got - exact).abs() / exact.abs().max(1e-6);
                worst = worst.max(err);
                let sym = (got - k.kappa(j, i)).abs() / got.abs().max(1e-6);
                worst_sym = worst_sym.max(sym);
                if err > 1e-6 || sym > 1e-8 {
                    failures += 1;
                    witness.get_or_insert(json!({ "r": nodes[i], "s": nodes[j], "kappa": got, "exact": exact }));
                }
            }
        }
        Ok(SuiteReport::new(
            "kernel_mean_value",
            m * m,
            failures,
            worst,
            witness,
            json!({ "nodes": m, "worst_symmetry": worst_sym }),
        ))
    };
    run().unwrap_or_else(|e| SuiteReport::errored("kernel_mean_value", &e))
}

/// Central differences of J_μ0 against ⟨∇J_μ0(u), v⟩ on random smooth pairs.
pub fn suite_gradient_fd(cfg: &RunConfig, pairs: usize, cache_dir: Option<PathBuf>) -> SuiteReport {
    let run = || -> Result<SuiteReport> {
        let ctx = cfg.context(cache_dir.clone())?;
        let problem = ctx.problem()?;
        let kernel = ctx.kernel(KernelKind::GMu(cfg.weights.params.mu0))?;
        let j = problem.functional(&kernel)?;
        let nodes = ctx.grid.nodes();
        let r_max = ctx.grid.r_max();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed ^ 0x9d);
        let h = 1e-6;
        let mut failures = 0;
        let mut worst: f64 = 0.0;
        let mut witness = None;
        for k in 0..pairs {
            let u = random_profile(&mut rng, nodes, r_max);
            let v = random_profile(&mut rng, nodes, r_max);
            let an = dot(&j.gradient(&u)?, &v);
            let plus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fd = (j.value(&plus)? - j.value(&minus)?) / (2.0 * h);
            let rel = (fd - an).abs() / an.abs().max(1e-8);
            worst = worst.max(rel);
            if rel > 1e-5 {
                failures += 1;
                witness.get_or_insert(json!({ "pair": k, "fd": fd, "analytic": an }));
            }
        }
        Ok(SuiteReport::new(
            "gradient_fd",
            pairs,
            failures,
            worst,
            witness,
            json!({ "h": h, "mu": cfg.weights.params.mu0 }),
        ))
    };
    run().unwrap_or_else(|e| SuiteReport::errored("gradient_fd", &e))
}

/// Tail slope of the μ0 mountain-pass solution against -ℓ/(N-1) + 0.1.
pub fn suite_radial_decay(cfg: &RunConfig, cache_dir: Option<PathBuf>) -> SuiteReport {
    let run = || -> Result<SuiteReport> {
        let ctx = cfg.context(cache_dir.clone())?;
        let bundle = solve_mu(&ctx, cfg.weights.params.mu0, None, &mut |_| {})?;
        let w = &cfg.weights.params;
        let d = decay_diagnostic(&bundle.u, w.ell, w.r0);
        let passed = d.passed;
        Ok(SuiteReport::new(
            "radial_decay",
            d.samples,
            usize::from(!passed),
            d.slope.unwrap_or(f64::NEG_INFINITY),
            (!passed).then(|| json!({ "slope": d.slope, "threshold": d.threshold })),
            json!({ "mu": w.mu0, "level": bundle.level, "decay": d }),
        ))
    };
    run().unwrap_or_else(|e| SuiteReport::errored("radial_decay", &e))
}

pub fn suite_moser(cfg: &RunConfig, cache_dir: Option<PathBuf>) -> SuiteReport {
    if cfg.verify.moser_n.is_empty() {
        return SuiteReport::skipped("moser", "empty n-list");
    }
    let run = || -> Result<SuiteReport> {
        let ctx = cfg.context(cache_dir.clone())?;
        let w = &cfg.weights.params;
        let rep = moser_bound_report(&ctx, w.mu0, &cfg.verify.moser_n, w.moser_radius())?;
        let failures = rep
            .entries
            .iter()
            .filter(|e| !e.norm.within_bracket || e.norm.rel_error > 1e-4)
            .count()
            + usize::from(rep.n0.is_none())
            + usize::from(!rep.delta_decreasing);
        let worst = rep.entries.iter().map(|e| e.norm.rel_error).fold(0.0, f64::max);
        let witness = (failures > 0).then(|| serde_json::to_value(&rep).unwrap_or(Value::Null));
        Ok(SuiteReport::new(
            "moser",
            rep.entries.len(),
            failures,
            worst,
            witness,
            serde_json::to_value(&rep).unwrap_or(Value::Null),
        ))
    };
    run().unwrap_or_else(|e| SuiteReport::errored("moser", &e))
}

/// Runs every suite; the Moser suite only when an n-list is configured.
pub fn run_all(cfg: &RunConfig, cache_dir: Option<PathBuf>) -> Result<VerifyReport> {
    let v = &cfg.verify;
    let n_dim = cfg.weights.params.n_dim;
    let j0 = cfg.weights.params.derive_exponents()?.j0;
    let suites = vec![
        suite_basic_est(v.basic_samples, v.seed),
        suite_sani(v.sani_samples, n_dim, j0, v.seed),
        suite_hls(v.hls_samples, n_dim, v.hls_calibration, v.seed, cfg.execution()),
        suite_radial_decay(cfg, cache_dir.clone()),
        suite_kernel_mean_value(cfg),
        suite_gradient_fd(cfg, v.gradient_pairs, cache_dir.clone()),
        suite_moser(cfg, cache_dir),
    ];
    Ok(VerifyReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_and_sani_pass() {
        let b = suite_basic_est(2000, 1);
        assert!(b.passed, "{b:?}");
        let s = suite_sani(2000, 2, 1, 1);
        assert!(s.passed, "{s:?}");
        assert_eq!(s.samples, 2000);
    }

    #[test]
    fn hls_passes_and_fails_when_miscalibrated() {
        let ok = suite_hls(20, 2, 1.0, 3, crate::exec::Execution::Parallel);
        assert!(ok.passed, "{ok:?}");
        let bad = suite_hls(20, 2, 0.5, 3, crate::exec::Execution::Parallel);
        assert!(!bad.passed && bad.witness.is_some());
    }

    #[test]
    fn moser_suite_skips_on_empty_list() {
        let s = suite_moser(&RunConfig::default(), None);
        assert!(s.skipped && s.passed);
    }
}
