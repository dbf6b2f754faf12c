//! The critical-growth nonlinearity F(t) = θ t^q e^{α0 t^p}, p = N/(N-1),
//! the Trudinger-Moser remainder Φ, the auxiliary function H, and
//! sampled validators for (f0)-(f5).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive;
use crate::weights::{AssumptionCheck, WeightConfig};

/// Largest admissible exponent argument α0 |t|^p before evaluation is refused.
pub const EXPONENT_CAP: f64 = 700.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub q: f64,
    pub alpha0: f64,
    pub theta: f64,
    /// Exponent used in (f5).
    pub lambda: f64,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            q: 3.0,
            alpha0: 1.0,
            theta: 1.0,
            lambda: 2.0,
        }
    }
}

/// The built-in family bound to a dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    cfg: NonlinearityConfig,
    n_dim: usize,
    p: f64,
}

impl Nonlinearity {
    pub fn new(cfg: NonlinearityConfig, n_dim: usize) -> Result<Self> {
        if n_dim < 2 {
            return Err(Error::UnsupportedDimension(n_dim));
        }
        for (name, v) in [("q", cfg.q), ("alpha0", cfg.alpha0), ("theta", cfg.theta), ("lambda", cfg.lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} = {v} must be positive")));
            }
        }
        let n = n_dim as f64;
        Ok(Self {
            cfg,
            n_dim,
            p: n / (n - 1.0),
        })
    }

    pub fn config(&self) -> &NonlinearityConfig {
        &self.cfg
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    /// p = N/(N-1).
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Exponent argument α0 t^p.
    #[inline]
    pub fn exponent(&self, t: f64) -> f64 {
        self.cfg.alpha0 * t.abs().powf(self.p)
    }

    /// Largest |t| for which the exponent stays below [`EXPONENT_CAP`].
    pub fn t_cap(&self) -> f64 {
        (EXPONENT_CAP / self.cfg.alpha0).powf(1.0 / self.p)
    }

    pub fn check_cap(&self, t: f64) -> Result<()> {
        let e = self.exponent(t);
        if e > EXPONENT_CAP || !e.is_finite() {
            return Err(Error::Overflow {
                argument: e,
                cap: EXPONENT_CAP,
                value: t.abs(),
            });
        }
        Ok(())
    }

    /// P1 = q + α0 p t^p, with f = θ e^E t^{q-1} P1.
    #[inline]
    fn p1(&self, t: f64) -> f64 {
        self.cfg.q + self.cfg.alpha0 * self.p * t.powf(self.p)
    }

    #[inline]
    pub fn big_f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.cfg.theta * t.powf(self.cfg.q) * self.exponent(t).exp()
    }

    #[inline]
    pub fn f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.cfg.theta * t.powf(self.cfg.q - 1.0) * self.p1(t) * self.exponent(t).exp()
    }

    /// (F(t), f(t)) sharing one exponential.
    #[inline]
    pub fn pair(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        let big = self.cfg.theta * t.powf(self.cfg.q) * self.exponent(t).exp();
        (big, big * self.p1(t) / t)
    }

    pub fn fprime(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.cfg.theta * t.powf(self.cfg.q - 2.0) * self.p2(t) * self.exponent(t).exp()
    }

    /// P2 with f' = θ e^E t^{q-2} P2.
    fn p2(&self, t: f64) -> f64 {
        let ap = self.cfg.alpha0 * self.p * t.powf(self.p);
        (ap + self.cfg.q - 1.0) * self.p1(t) + ap * self.p
    }

    /// F f' / f² = P2 / P1², free of exponentials.
    pub fn ratio(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return (self.cfg.q - 1.0) / self.cfg.q;
        }
        let p1 = self.p1(t);
        self.p2(t) / (p1 * p1)
    }

    /// F(t) / (t f(t)) = 1 / P1.
    pub fn big_f_over_tf(&self, t: f64) -> f64 {
        1.0 / self.p1(t.max(0.0))
    }

    /// Integrand of H: (N/2 · F f'/f² - (N-2)/2)^{1/N}.
    pub fn h_integrand(&self, t: f64) -> Result<f64> {
        let n = self.n_dim as f64;
        let radicand = 0.5 * n * self.ratio(t) - 0.5 * (n - 2.0);
        if !(radicand > 0.0) {
            return Err(Error::assumption(
                "(f3)",
                format!("H radicand {radicand:.3e} <= 0 at t = {t}"),
            ));
        }
        Ok(radicand.powf(1.0 / n))
    }

    /// H(t) = ∫_0^t h(s) ds.
    pub fn h_eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("H needs t >= 0 (got {t})")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        // Surface radicand failures before integrating.
        for k in 0..=64 {
            self.h_integrand(t * k as f64 / 64.0)?;
        }
        let h = |s: f64| self.h_integrand(s).unwrap_or(f64::NAN);
        adaptive(h, 0.0, t, 1e-13, 1e-13)
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Accuracy(format!("H({t}) quadrature did not converge")))
    }
}

/// Φ_{α,j0}(t) = e^{α|t|^p} - Σ_{j<j0} (α|t|^p)^j / j!, with p = N/(N-1).
pub fn phi_eval(alpha: f64, j0: usize, t: f64, n_dim: usize) -> f64 {
    let n = n_dim as f64;
    let x = alpha * t.abs().powf(n / (n - 1.0));
    phi_of_x(x, j0)
}

/// e^x minus its Taylor polynomial of degree j0 - 1 (x >= 0).
pub fn phi_of_x(x: f64, j0: usize) -> f64 {
    if x < 1.0 {
        // Tail series Σ_{j>=j0} x^j/j!.
        let mut term = (1..=j0).fold(1.0, |acc, j| acc * x / j as f64);
        let mut sum = 0.0;
        let mut j = j0;
        while term > 1e-18 * sum || sum == 0.0 {
            sum += term;
            j += 1;
            term *= x / j as f64;
            if term == 0.0 {
                break;
            }
        }
        sum
    } else {
        let mut partial = 0.0;
        let mut term = 1.0;
        for j in 0..j0 {
            partial += term;
            term *= x / (j + 1) as f64;
        }
        x.exp() - partial
    }
}

/// ln Φ written through x = α|t|^p; finite for x far beyond the f64 exponential range.
pub fn ln_phi_of_x(x: f64, j0: usize) -> f64 {
    if x < 30.0 {
        return phi_of_x(x, j0).ln();
    }
    let mut partial = 0.0;
    let mut term = (-x).exp();
    for j in 0..j0 {
        partial += term;
        term *= x / (j + 1) as f64;
    }
    x + (1.0 - partial).ln()
}

/// Б = (ω A0 / N)((b̃0 + N)/α0)^{N-1}.
pub fn mountain_pass_threshold(w: &WeightConfig, alpha0: f64) -> f64 {
    let n = w.n_dim as f64;
    let omega = crate::special::unit_sphere_measure(w.n_dim);
    omega * w.a0 / n * ((w.b0_tilde() + n) / alpha0).powf(n - 1.0)
}

/// β0 = (A0/ω) · 2(b̃0+N)^{N+2} / (α0^N C_N C_Q² ρ^{2(b̃0+N)}) · e^{2(b̃0+N)ρ^L/((N-1)L)}.
pub fn beta0(w: &WeightConfig, alpha0: f64, rho: f64) -> f64 {
    let n = w.n_dim as f64;
    let omega = crate::special::unit_sphere_measure(w.n_dim);
    let c_n = crate::special::riesz_log_constant(w.n_dim);
    let s = w.b0_tilde() + n;
    let prefactor = (w.a0 / omega) * 2.0 * s.powf(n + 2.0)
        / (alpha0.powf(n) * c_n * w.c_q * w.c_q * rho.powf(2.0 * s));
    prefactor * (2.0 * s * rho.powf(w.l_upper) / ((n - 1.0) * w.l_upper)).exp()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonlinearityReport {
    /// Numerical infimum of F f'/f² (grid minimum and endpoint limits).
    pub tau_num: f64,
    pub tau_lower_bound: f64,
    /// Supremum of F f'/f² over the sample grid (the constant C of (f3)).
    pub ratio_sup: f64,
    pub f4_limit_at_1e3: f64,
    /// Value of the (f5) quotient's limit, or a description when it diverges.
    pub f5_limit: String,
    pub f5_exponent: f64,
    pub lambda_critical: f64,
    pub beta0: f64,
    pub rho: f64,
    pub be_threshold: f64,
    pub p_tilde: f64,
    /// F(t) <= M0 f(t) for t >= s0.
    pub m0: f64,
    pub s0: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl NonlinearityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Converts a failed report into an assumption error naming the first violation.
    pub fn into_result(self) -> Result<Self> {
        if let Some(c) = self.checks.iter().find(|c| !c.passed) {
            return Err(Error::assumption(&c.assumption, c.detail.clone()));
        }
        Ok(self)
    }
}

/// Log-spaced samples on [1e-8, 1e3].
pub fn sample_grid(count: usize) -> Vec<f64> {
    let (lo, hi) = (1e-8f64.ln(), 1e3f64.ln());
    (0..count)
        .map(|k| (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn validate_assumptions(nl: &Nonlinearity, w: &WeightConfig) -> Result<NonlinearityReport> {
    let d = w.derive_exponents()?;
    let n = w.n_dim as f64;
    let cfg = nl.config();
    let ts = sample_grid(4001);
    let mut checks = Vec::new();

    // (f0): sign structure on samples below the overflow cap.
    let t_cap = nl.t_cap();
    let positive = ts.iter().filter(|&&t| t <= t_cap).all(|&t| nl.f(t) > 0.0 && nl.big_f(t) > 0.0);
    let vanish = [-1e3, -1.0, -1e-8, 0.0].iter().all(|&t| nl.f(t) == 0.0 && nl.big_f(t) == 0.0);
    checks.push(AssumptionCheck::new(
        "(f0)",
        positive && vanish,
        "f > 0 on sampled t > 0 and f = 0 on t <= 0".into(),
    ));

    // (f1): log f - α t^p at the point where α0 t^p = 900.
    let t1 = (900.0 / cfg.alpha0).powf(1.0 / nl.p());
    let ln_f = |t: f64| cfg.theta.ln() + (cfg.q - 1.0) * t.ln() + nl.p1(t).ln() + nl.exponent(t);
    let above = ln_f(t1) - 1.1 * nl.exponent(t1);
    let below = ln_f(t1) - 0.9 * nl.exponent(t1);
    checks.push(AssumptionCheck::new(
        "(f1)",
        above < -10.0 && below > 10.0,
        format!("log(f/e^{{αt^p}}) at t = {t1:.3}: {above:.1} for α = 1.1α0, {below:.1} for α = 0.9α0"),
    ));

    // (f2): f(t) ~ qθ t^{q-1} at 0, so any p̃ in (γ, q) works.
    let p_tilde = 0.5 * (cfg.q + d.gamma);
    checks.push(AssumptionCheck::new(
        "(f2)",
        cfg.q > d.gamma,
        format!("q = {} > γ = {}; p̃ = {p_tilde}", cfg.q, d.gamma),
    ));

    // (f3): grid minimum and endpoint limits (q-1)/q and 1.
    let ratios: Vec<f64> = ts.iter().map(|&t| nl.ratio(t)).collect();
    let grid_min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let grid_max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tau_num = grid_min.min((cfg.q - 1.0) / cfg.q).min(1.0);
    let ratio_sup = grid_max.max((cfg.q - 1.0) / cfg.q).max(1.0);
    let tau_lower = 1.0 - 2.0 / n;
    checks.push(AssumptionCheck::new(
        "(f3)",
        tau_num > tau_lower + 1e-6 && tau_num < 1.0 && ratio_sup.is_finite(),
        format!("τ_num = {tau_num:.6} in ({tau_lower}, 1), sup ratio = {ratio_sup:.6}"),
    ));

    let f4 = nl.ratio(1e3);
    checks.push(AssumptionCheck::new(
        "(f4)",
        (f4 - 1.0).abs() < 1e-2,
        format!("F f'/f² at t = 1e3 is {f4:.6}"),
    ));

    // (f5): t^λ f F e^{-2α0 t^p} = θ² t^{λ+2q-1} P1 ~ θ² α0 p t^{λ+2q+p-1}.
    let lambda_critical = 1.0 + n / (n - 1.0);
    let exponent = cfg.lambda + 2.0 * cfg.q + nl.p() - 1.0;
    let f5_limit = if exponent > 0.0 {
        "+inf".to_string()
    } else if exponent == 0.0 {
        format!("{}", cfg.theta * cfg.theta * cfg.alpha0 * nl.p())
    } else {
        "0".to_string()
    };
    let rho = w.moser_radius();
    let b0 = beta0(w, cfg.alpha0, rho);
    let lambda_ok = cfg.lambda > 0.0 && cfg.lambda <= lambda_critical + 1e-12;
    let beta_ok = if (cfg.lambda - lambda_critical).abs() < 1e-12 {
        exponent > 0.0 || (exponent == 0.0 && cfg.theta * cfg.theta * cfg.alpha0 * nl.p() > b0)
    } else {
        exponent >= 0.0
    };
    checks.push(AssumptionCheck::new(
        "(f5)",
        lambda_ok && beta_ok,
        format!(
            "λ = {} in (0, {lambda_critical}]; limit = {f5_limit} (any β admissible when +inf); β0 = {b0:.6e}",
            cfg.lambda
        ),
    ));

    // F <= M0 f for t >= s0: F/f = t/P1 is bounded since p > 1.
    let s0 = 1.0;
    let m0 = ts
        .iter()
        .filter(|&&t| t >= s0)
        .map(|&t| t * nl.big_f_over_tf(t))
        .fold(0.0, f64::max);

    Ok(NonlinearityReport {
        tau_num,
        tau_lower_bound: tau_lower,
        ratio_sup,
        f4_limit_at_1e3: f4,
        f5_limit,
        f5_exponent: exponent,
        lambda_critical,
        beta0: b0,
        rho,
        be_threshold: mountain_pass_threshold(w, cfg.alpha0),
        p_tilde,
        m0,
        s0,
        checks,
    })
}

/// Calibrated constants of the growth bounds
/// |f| <= ε t^{p̃-1} + C1 t^{p-1} Φ_{α,j0}(t) and |F| <= ε t^{p̃} + C2 t^p Φ_{α,j0}(t).
#[derive(Clone, Debug, Serialize)]
pub struct GrowthBounds {
    pub epsilon: f64,
    pub alpha: f64,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn growth_bounds(nl: &Nonlinearity, j0: usize, p_tilde: f64, alpha: f64, p: f64, epsilon: f64) -> GrowthBounds {
    let n_dim = nl.n_dim();
    let ts: Vec<f64> = sample_grid(4001).into_iter().filter(|&t| t <= nl.t_cap()).collect();
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    for &t in &ts {
        let (big, small) = nl.pair(t);
        let phi = phi_eval(alpha, j0, t, n_dim);
        if phi > 0.0 {
            c1 = c1.max((small - epsilon * t.powf(p_tilde - 1.0)) / (t.powf(p - 1.0) * phi));
            c2 = c2.max((big - epsilon * t.powf(p_tilde)) / (t.powf(p) * phi));
        }
    }
    GrowthBounds {
        epsilon,
        alpha,
        p,
        c1,
        c2,
    }
}
