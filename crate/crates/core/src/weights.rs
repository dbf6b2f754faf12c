//! Radial weights A (diffusion) and Q (source), their structural
//! assumptions, and the exponents derived from them.
//!
//! The built-in profiles are `A(r) = A0 (1 + r^ell)` and
//! `Q(r) = CQ r^b0` on (0, 1], `CQ r^b` on [1, ∞). Tabulated profiles are
//! accepted through [`TabulatedWeights`] and checked on their samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{riesz_log_constant, unit_sphere_measure};

/// Radius below which the built-in Q follows its small-r power law.
pub const BUILTIN_Q_JUNCTION: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(rename = "N")]
    pub n_dim: usize,
    #[serde(rename = "A0")]
    pub a0: f64,
    pub ell: f64,
    #[serde(rename = "L")]
    pub l_upper: f64,
    pub r0: f64,
    #[serde(rename = "CQ")]
    pub c_q: f64,
    pub b0: f64,
    pub b: f64,
    pub mu0: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            n_dim: 2,
            a0: 1.0,
            ell: 2.0,
            l_upper: 2.0,
            r0: 1.0,
            c_q: 1.0,
            b0: 0.0,
            b: -1.0,
            mu0: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedExponents {
    /// Lower end of the weighted embedding range.
    pub gamma: f64,
    pub b0_tilde: f64,
    pub j0: usize,
    /// inf of A over the unit ball.
    pub c_a: f64,
    /// Riesz constant of the logarithmic kernel.
    pub c_n: f64,
    pub alpha_n: f64,
    pub alpha_n_tilde: f64,
    /// |S^{N-1}|.
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    /// b - ell·γ/(N-1) + N; must be negative.
    pub exponent: f64,
    pub holds: bool,
    /// Which branch of γ applies: "b < ell - N" or "b >= ell - N".
    pub branch: String,
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_dim as f64;
        if self.n_dim < 2 {
            return Err(Error::assumption("(A)", format!("dimension N = {} must be >= 2", self.n_dim)));
        }
        if !(self.a0 > 0.0) {
            return Err(Error::assumption("(A)", format!("A0 = {} must be positive", self.a0)));
        }
        if !(self.ell > 0.0) {
            return Err(Error::assumption("(A)", format!("ell = {} must be positive", self.ell)));
        }
        if !(self.l_upper >= self.ell) {
            return Err(Error::assumption(
                "(A')",
                format!("L = {} must be >= ell = {}", self.l_upper, self.ell),
            ));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::assumption("(A')", format!("r0 = {} must be positive", self.r0)));
        }
        if !(self.b0 > -n) {
            return Err(Error::assumption("(Q)", format!("b0 = {} must exceed -N = {}", self.b0, -n)));
        }
        if !(self.b > -n) {
            return Err(Error::assumption("(Q)", format!("b = {} must exceed -N = {}", self.b, -n)));
        }
        if !(self.c_q > 0.0) {
            return Err(Error::assumption("(Q')", format!("CQ = {} must be positive", self.c_q)));
        }
        if !(self.mu0 > 0.0 && self.mu0 <= 1.0) {
            return Err(Error::domain(format!("mu0 = {} must lie in (0, 1]", self.mu0)));
        }
        Ok(())
    }

    pub fn eval_a(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::domain(format!("A evaluated at nonpositive radius {r}")));
        }
        Ok(self.a_unchecked(r))
    }

    pub fn eval_q(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::domain(format!("Q evaluated at nonpositive radius {r}")));
        }
        Ok(self.q_unchecked(r))
    }

    #[inline]
    pub(crate) fn a_unchecked(&self, r: f64) -> f64 {
        self.a0 * (1.0 + r.powf(self.ell))
    }

    #[inline]
    pub(crate) fn q_unchecked(&self, r: f64) -> f64 {
        if r <= BUILTIN_Q_JUNCTION {
            self.c_q * r.powf(self.b0)
        } else {
            self.c_q * r.powf(self.b)
        }
    }

    /// γ = max{N, (b - ell + N)(N + 1)/ell + N}, selected by the sign of b - (ell - N).
    pub fn gamma(&self) -> f64 {
        let n = self.n_dim as f64;
        if self.b < self.ell - n {
            n
        } else {
            (self.b - self.ell + n) * (n + 1.0) / self.ell + n
        }
    }

    pub fn b0_tilde(&self) -> f64 {
        let n = self.n_dim as f64;
        self.b0.max(self.b0 * (1.0 - self.mu0 / (2.0 * n)))
    }

    pub fn derive_exponents(&self) -> Result<DerivedExponents> {
        self.validate()?;
        let n = self.n_dim as f64;
        let gamma = self.gamma();
        let j0 = ((gamma * (n - 1.0) / n) - 1e-12).ceil().max(1.0) as usize;
        let omega = unit_sphere_measure(self.n_dim);
        let alpha_n = n * omega.powf(1.0 / (n - 1.0));
        // inf of A0(1 + r^ell) over the unit ball is approached as r -> 0.
        let c_a = self.a0;
        let alpha_n_tilde = alpha_n * (1.0 + self.b0 / n) * c_a.powf(1.0 / (n - 1.0));
        Ok(DerivedExponents {
            gamma,
            b0_tilde: self.b0_tilde(),
            j0,
            c_a,
            c_n: riesz_log_constant(self.n_dim),
            alpha_n,
            alpha_n_tilde,
            omega,
        })
    }

    pub fn check_integrability(&self) -> IntegrabilityReport {
        let n = self.n_dim as f64;
        let gamma = self.gamma();
        let exponent = self.b - self.ell * gamma / (n - 1.0) + n;
        let branch = if self.b < self.ell - n {
            "b < ell - N"
        } else {
            "b >= ell - N"
        };
        IntegrabilityReport {
            exponent,
            holds: exponent < 0.0,
            branch: branch.to_string(),
        }
    }

    /// ρ = min{1/4, r0, r_Q} used by the level estimate; r_Q = 1 for the built-in Q.
    pub fn moser_radius(&self) -> f64 {
        0.25f64.min(self.r0).min(BUILTIN_Q_JUNCTION)
    }
}

/// Sampled weights read from a three-column CSV `r,A,Q`, interpolated
/// linearly in log-log coordinates and extended by the end power laws.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedWeights {
    log_r: Vec<f64>,
    log_a: Vec<f64>,
    log_q: Vec<f64>,
}

impl TabulatedWeights {
    pub fn new(r: &[f64], a: &[f64], q: &[f64]) -> Result<Self> {
        if r.len() < 3 || r.len() != a.len() || r.len() != q.len() {
            return Err(Error::domain("tabulated weights need >= 3 rows of equal length"));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r[0] <= 0.0 {
            return Err(Error::domain("tabulated radii must be positive and increasing"));
        }
        if a.iter().chain(q).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("tabulated A and Q must be positive and finite"));
        }
        Ok(Self {
            log_r: r.iter().map(|x| x.ln()).collect(),
            log_a: a.iter().map(|x| x.ln()).collect(),
            log_q: q.iter().map(|x| x.ln()).collect(),
        })
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (mut r, mut a, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('r') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))
            };
            if cols.len() != 3 {
                return Err(Error::Parse(format!(
                    "{}:{}: expected 3 columns r,A,Q",
                    path.display(),
                    lineno + 1
                )));
            }
            r.push(parse(cols[0])?);
            a.push(parse(cols[1])?);
            q.push(parse(cols[2])?);
        }
        Self::new(&r, &a, &q)
    }

    fn interp(&self, values: &[f64], r: f64) -> f64 {
        let x = r.ln();
        let n = self.log_r.len();
        let k = self.log_r.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (x0, x1) = (self.log_r[k - 1], self.log_r[k]);
        let (y0, y1) = (values[k - 1], values[k]);
        (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp()
    }

    pub fn a(&self, r: f64) -> f64 {
        self.interp(&self.log_a, r)
    }

    pub fn q(&self, r: f64) -> f64 {
        self.interp(&self.log_q, r)
    }

    fn end_slope(&self, values: &[f64], small_end: bool) -> f64 {
        let n = self.log_r.len();
        if small_end {
            (values[1] - values[0]) / (self.log_r[1] - self.log_r[0])
        } else {
            (values[n - 1] - values[n - 2]) / (self.log_r[n - 1] - self.log_r[n - 2])
        }
    }

    /// Checks (A), (A'), (Q), (Q') on the samples against the structural constants in `cfg`.
    pub fn validate_against(&self, cfg: &WeightConfig) -> Vec<AssumptionCheck> {
        let tol = 1e-9;
        let radii: Vec<f64> = self.log_r.iter().map(|x| x.exp()).collect();
        let mut checks = Vec::new();

        let a_low = radii
            .iter()
            .all(|&r| self.a(r) >= cfg.a0 * r.powf(cfg.ell) * (1.0 - tol));
        checks.push(AssumptionCheck::new(
            "(A)",
            a_low && self.a(radii[0]) > 0.0,
            format!("A(r) >= A0 r^ell on {} samples", radii.len()),
        ));

        let a_prime = radii.iter().filter(|&&r| r < cfg.r0).all(|&r| {
            let v = self.a(r);
            v >= cfg.a0 * (1.0 + r.powf(cfg.ell)) * (1.0 - tol)
                && v <= cfg.a0 * (1.0 + r.powf(cfg.l_upper)) * (1.0 + tol)
        });
        checks.push(AssumptionCheck::new(
            "(A')",
            a_prime,
            "A0(1 + r^ell) <= A(r) <= A0(1 + r^L) on samples below r0".to_string(),
        ));

        let s0 = self.end_slope(&self.log_q, true);
        let s1 = self.end_slope(&self.log_q, false);
        checks.push(AssumptionCheck::new(
            "(Q)",
            s0 >= cfg.b0 - 1e-6 && s1 <= cfg.b + 1e-6,
            format!("log-log end slopes {s0:.4} (needs >= b0) and {s1:.4} (needs <= b)"),
        ));

        let ratio = self.q(radii[0]) / radii[0].powf(cfg.b0_tilde());
        checks.push(AssumptionCheck::new(
            "(Q')",
            ratio >= cfg.c_q * (1.0 - 1e-3),
            format!("Q/r^b0_tilde = {ratio:.6} at the smallest sample (CQ = {})", cfg.c_q),
        ));
        checks
    }
}

/// Weight pair used by the solver: the built-in profiles or a table.
#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    BuiltIn(WeightConfig),
    Tabulated(WeightConfig, TabulatedWeights),
}

impl Weights {
    pub fn config(&self) -> &WeightConfig {
        match self {
            Weights::BuiltIn(c) | Weights::Tabulated(c, _) => c,
        }
    }

    pub fn a(&self, r: f64) -> f64 {
        match self {
            Weights::BuiltIn(c) => c.a_unchecked(r),
            Weights::Tabulated(_, t) => t.a(r),
        }
    }

    pub fn q(&self, r: f64) -> f64 {
        match self {
            Weights::BuiltIn(c) => c.q_unchecked(r),
            Weights::Tabulated(_, t) => t.q(r),
        }
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self, Weights::BuiltIn(_))
    }

    /// Assumption checks (A), (A'), (Q), (Q') with warnings.
    pub fn assumption_checks(&self) -> Vec<AssumptionCheck> {
        let cfg = self.config();
        match self {
            Weights::Tabulated(_, t) => t.validate_against(cfg),
            Weights::BuiltIn(_) => builtin_checks(cfg),
        }
    }
}

fn builtin_checks(cfg: &WeightConfig) -> Vec<AssumptionCheck> {
    let mut checks = Vec::new();
    let structural = cfg.validate();
    let name_of = |e: &Error| match e {
        Error::Assumption { assumption, .. } => assumption.clone(),
        _ => String::new(),
    };
    let failed = structural.as_ref().err().map(name_of).unwrap_or_default();
    checks.push(AssumptionCheck::new(
        "(A)",
        failed != "(A)",
        format!("A(r) = A0(1 + r^ell) with A0 = {}, ell = {}", cfg.a0, cfg.ell),
    ));
    // The upper bound A0(1 + r^ell) <= A0(1 + r^L) on B_r0 needs r^ell <= r^L there.
    let samples: Vec<f64> = (1..=200).map(|k| cfg.r0 * k as f64 / 200.0).collect();
    let upper_ok = samples
        .iter()
        .all(|&r| r.powf(cfg.ell) <= r.powf(cfg.l_upper) * (1.0 + 1e-12));
    checks.push(AssumptionCheck::new(
        "(A')",
        failed != "(A')" && upper_ok,
        format!(
            "A0(1 + r^ell) <= A(r) <= A0(1 + r^L) on B_r0 (r0 = {}, L = {})",
            cfg.r0, cfg.l_upper
        ),
    ));
    checks.push(AssumptionCheck::new(
        "(Q)",
        failed != "(Q)",
        format!("Q ~ r^b0 at 0, r^b at infinity with b0 = {}, b = {} > -N", cfg.b0, cfg.b),
    ));
    let mut q_prime = AssumptionCheck::new(
        "(Q')",
        failed != "(Q')",
        format!("liminf Q(r)/r^b0_tilde = CQ = {} with b0_tilde = {}", cfg.c_q, cfg.b0_tilde()),
    );
    if cfg.b0 < 0.0 {
        q_prime.warning = Some(
            "b0 < 0: the built-in Q gives liminf Q/r^b0_tilde = +inf, which satisfies the bound but not equality"
                .to_string(),
        );
    }
    checks.push(q_prime);
    checks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub assumption: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl AssumptionCheck {
    pub fn new(assumption: &str, passed: bool, detail: String) -> Self {
        Self {
            assumption: assumption.to_string(),
            passed,
            detail,
            warning: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(ell: f64, b: f64) -> WeightConfig {
        WeightConfig {
            ell,
            l_upper: ell,
            b,
            ..WeightConfig::default()
        }
    }

    #[test]
    fn eval_a_examples() {
        let c = cfg(2.0, -1.0);
        assert_eq!(c.eval_a(1.0).unwrap(), 2.0);
        assert!((c.eval_a(1e-12).unwrap() - 1.0).abs() < 1e-15);
        let c2 = WeightConfig {
            a0: 2.0,
            ell: 1.0,
            l_upper: 1.0,
            ..WeightConfig::default()
        };
        assert!((c2.eval_a(3.0).unwrap() - 8.0).abs() < 1e-14);
        assert!(matches!(c.eval_a(0.0), Err(Error::Domain(_))));
        assert!(matches!(c.eval_a(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn eval_q_examples() {
        let c = WeightConfig { b0: 0.0, b: -1.0, ..WeightConfig::default() };
        assert_eq!(c.eval_q(1.0).unwrap(), 1.0);
        let c = WeightConfig { b0: 1.0, b: -1.0, ..WeightConfig::default() };
        assert!((c.eval_q(0.25).unwrap() - 0.25).abs() < 1e-15);
        let c = WeightConfig { c_q: 2.0, b0: 0.0, b: -2.0, ..WeightConfig::default() };
        assert!((c.eval_q(10.0).unwrap() - 0.02).abs() < 1e-15);
        assert!(c.eval_q(0.0).is_err());
    }

    #[test]
    fn derived_exponent_examples() {
        let d = cfg(2.0, -1.0).derive_exponents().unwrap();
        assert_eq!(d.gamma, 2.0);
        assert_eq!(d.j0, 1);
        assert!((d.c_n - 1.0 / (2.0 * PI)).abs() < 1e-16);
        assert!((d.alpha_n - 4.0 * PI).abs() < 1e-14);
        let d = cfg(2.0, 1.0).derive_exponents().unwrap();
        assert!((d.gamma - 3.5).abs() < 1e-15);
        assert_eq!(d.j0, 2);
        let d4 = WeightConfig { n_dim: 4, ..cfg(2.0, -1.0) }.derive_exponents().unwrap();
        assert!((d4.c_n - 1.0 / (8.0 * PI * PI)).abs() < 1e-17);
    }

    #[test]
    fn integrability_examples() {
        let r = cfg(2.0, -1.0).check_integrability();
        assert!((r.exponent + 3.0).abs() < 1e-14 && r.holds);
        let r = cfg(2.0, 1.0).check_integrability();
        assert!((r.exponent + 4.0).abs() < 1e-14 && r.holds);
    }

    #[test]
    fn invalid_configs_name_the_assumption() {
        let bad = WeightConfig { b0: -2.0, ..WeightConfig::default() };
        match bad.validate() {
            Err(Error::Assumption { assumption, .. }) => assert_eq!(assumption, "(Q)"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = WeightConfig { l_upper: 1.0, ..WeightConfig::default() };
        assert!(bad.validate().is_err());
        let bad = WeightConfig { mu0: 0.0, ..WeightConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn b0_tilde_depends_on_sign_of_b0() {
        let c = WeightConfig { b0: 1.0, ..WeightConfig::default() };
        assert_eq!(c.b0_tilde(), 1.0);
        let c = WeightConfig { b0: -1.0, mu0: 0.5, ..WeightConfig::default() };
        assert!((c.b0_tilde() - -(1.0 - 0.5 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn tabulated_copy_of_builtin_passes() {
        let c = WeightConfig::default();
        let r: Vec<f64> = (0..400).map(|k| 1e-4 * 1.03f64.powi(k)).collect();
        let a: Vec<f64> = r.iter().map(|&x| c.a_unchecked(x)).collect();
        let q: Vec<f64> = r.iter().map(|&x| c.q_unchecked(x)).collect();
        let t = TabulatedWeights::new(&r, &a, &q).unwrap();
        assert!((t.a(0.37) - c.a_unchecked(0.37)).abs() < 1e-3);
        for check in t.validate_against(&c) {
            assert!(check.passed, "{check:?}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn integrability_holds_for_valid_configs(
                n_dim in 2usize..6,
                ell in 0.05f64..8.0,
                b0_off in 0.01f64..10.0,
                b_off in 0.01f64..20.0,
            ) {
                let n = n_dim as f64;
                let c = WeightConfig {
                    n_dim, ell, l_upper: ell, b0: -n + b0_off, b: -n + b_off,
                    ..WeightConfig::default()
                };
                prop_assume!(c.validate().is_ok());
                let d = c.derive_exponents().unwrap();
                prop_assert!(d.gamma >= n);
                prop_assert_eq!(d.gamma == n, c.b < ell - n || (c.b - ell + n) == 0.0);
                prop_assert!(c.check_integrability().holds);
            }

            #[test]
            fn q_is_continuous_and_bounded_by_power_laws(
                b0 in -1.9f64..3.0, b in -1.9f64..3.0, r in 1e-6f64..1e3,
            ) {
                let c = WeightConfig { b0, b, ..WeightConfig::default() };
                let left = c.q_unchecked(1.0 - 1e-12);
                let right = c.q_unchecked(1.0 + 1e-12);
                prop_assert!((left - right).abs() < 1e-9);
                let ratio = if r <= 1.0 { c.q_unchecked(r) / r.powf(b0) } else { c.q_unchecked(r) / r.powf(b) };
                prop_assert!((ratio - c.c_q).abs() < 1e-9);
                let a = c.a_unchecked(r);
                prop_assert!(a >= c.a0 * (1.0 + r.powf(c.ell)) * (1.0 - 1e-15));
                prop_assert!(a <= c.a0 * (1.0 + r.powf(c.l_upper)) * (1.0 + 1e-15));
            }
        }
    }
}
