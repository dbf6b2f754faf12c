//! Moser sequence w̃_n and the level bound max_t J_μ(t w_n) < Б.

use std::sync::Arc;

use serde::Serialize;

use crate::energy::Problem;
use crate::error::{Error, Result};
use crate::grid::{stiffness_weights, e_norm_pow, GridSpec, RadialGrid};
use crate::kernels::{KernelKind, KernelMatrix};
use crate::solver::Context;

/// w̃_n(r) = (log n)^{1-1/N} on [0, ρ/n], log(ρ/r)/(log n)^{1/N} on (ρ/n, ρ), 0 beyond.
pub fn moser_profile(r: f64, n: f64, rho: f64, n_dim: usize) -> f64 {
    let ln = n.ln();
    let nd = n_dim as f64;
    if r <= rho / n {
        ln.powf(1.0 - 1.0 / nd)
    } else if r < rho {
        (rho / r).ln() / ln.powf(1.0 / nd)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MoserNorm {
    pub n: f64,
    /// ‖w̃_n‖^N by quadrature.
    pub norm_pow: f64,
    /// ω A0 (1 + (ρ^ℓ - (ρ/n)^ℓ)/(ℓ log n)).
    pub closed_form: f64,
    pub rel_error: f64,
    pub delta: f64,
    /// Exact finite-n bracket from A0(1+r^ℓ) <= A <= A0(1+r^L).
    pub delta_lower: f64,
    pub delta_upper: f64,
    pub within_bracket: bool,
}

/// Grid carrying the kinks of w̃_n as nodes.
pub fn moser_grid(n_dim: usize, spec: &GridSpec, n: f64, rho: f64) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(n_dim, &spec.with_anchors(&[rho / n, rho]))
}

pub fn moser_norm(ctx: &Context, grid: &Arc<RadialGrid>, n: f64, rho: f64) -> Result<(MoserNorm, Vec<f64>)> {
    if !ctx.weights.is_builtin() {
        return Err(Error::domain("the Moser report needs the built-in weights"));
    }
    if n <= 1.0 {
        return Err(Error::domain(format!("Moser index n = {n} must exceed 1")));
    }
    let w = ctx.weights.config();
    let n_dim = grid.n_dim();
    let u: Vec<f64> = grid.nodes().iter().map(|&r| moser_profile(r, n, rho, n_dim)).collect();
    let a_e = stiffness_weights(grid, &ctx.weights);
    let norm_pow = e_norm_pow(grid, &a_e, &u);
    let omega = grid.omega();
    let ln = n.ln();
    let bracket = |e: f64| (rho.powf(e) - (rho / n).powf(e)) / (e * ln);
    let closed_form = omega * w.a0 * (1.0 + bracket(w.ell));
    let delta = norm_pow / (omega * w.a0) - 1.0;
    let (delta_lower, delta_upper) = (bracket(w.ell), bracket(w.l_upper));
    let slack = 1e-4 * (1.0 + delta);
    Ok((
        MoserNorm {
            n,
            norm_pow,
            closed_form,
            rel_error: (norm_pow - closed_form).abs() / closed_form,
            delta,
            delta_lower,
            delta_upper,
            within_bracket: delta >= delta_lower - slack && delta <= delta_upper + slack,
        },
        u,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct MoserEntry {
    #[serde(flatten)]
    pub norm: MoserNorm,
    /// ‖w_n‖ after normalization.
    pub w_norm: f64,
    /// argmax_t J_μ(t w_n).
    pub t_n: f64,
    pub max_energy: f64,
    pub below_threshold: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MoserReport {
    pub mu: f64,
    pub rho: f64,
    pub threshold: f64,
    pub entries: Vec<MoserEntry>,
    pub delta_decreasing: bool,
    /// Smallest listed n with max_t J_μ(t w_n) < Б.
    pub n0: Option<f64>,
    pub passed: bool,
}

/// Maximizes t ↦ J(t w) for t >= 0: coarse scan with bracket doubling, then golden section.
pub fn maximize_along(j: &crate::energy::Functional, w: &[f64], t_hi0: f64) -> Result<(f64, f64)> {
    let eval = |t: f64| -> Result<f64> {
        let u: Vec<f64> = w.iter().map(|x| t * x).collect();
        match j.value(&u) {
            Ok(v) => Ok(v),
            Err(Error::Overflow { .. }) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    const SCAN: usize = 64;
    let mut t_hi = t_hi0;
    for _ in 0..30 {
        let vals: Vec<f64> = (0..=SCAN).map(|k| eval(t_hi * k as f64 / SCAN as f64)).collect::<Result<_>>()?;
        let k = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect("nonempty scan");
        if k == SCAN {
            t_hi *= 2.0;
            continue;
        }
        let h = t_hi / SCAN as f64;
        let (mut a, mut b) = ((k as f64 - 1.0).max(0.0) * h, (k as f64 + 1.0) * h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (eval(c)?, eval(d)?);
        while b - a > 1e-12 * b.max(1e-300) {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = eval(d)?;
            }
        }
        let t = 0.5 * (a + b);
        return Ok((t, eval(t)?));
    }
    Err(Error::Maximization(format!("t ↦ J(t w) still increasing at t = {t_hi}")))
}

pub fn moser_bound_report(ctx: &Context, mu: f64, ns: &[f64], rho: f64) -> Result<MoserReport> {
    let threshold = ctx.threshold();
    let n_dim = ctx.grid.n_dim();
    let t_hi0 = 2.0 * (n_dim as f64 * threshold).powf(1.0 / n_dim as f64);
    let mut entries = Vec::with_capacity(ns.len());
    for &n in ns {
        let grid = moser_grid(n_dim, ctx.grid.spec(), n, rho)?;
        let (norm, u) = moser_norm(ctx, &grid, n, rho)?;
        let scale = norm.norm_pow.powf(1.0 / n_dim as f64);
        let w: Vec<f64> = u.iter().map(|x| x / scale).collect();
        let sub = Context { grid: grid.clone(), ..ctx.clone() };
        let problem: Problem = sub.problem()?;
        let w_norm = problem.norm(&w);
        let kernel = KernelMatrix::load_or_assemble(&grid, KernelKind::GMu(mu), ctx.angular_order, ctx.exec, ctx.cache_dir.as_deref())?;
        let j = problem.functional(&kernel)?;
        let (t_n, max_energy) = maximize_along(&j, &w, t_hi0)?;
        entries.push(MoserEntry {
            norm,
            w_norm,
            t_n,
            max_energy,
            below_threshold: max_energy < threshold,
        });
    }
    let n0 = entries.iter().find(|e| e.below_threshold).map(|e| e.norm.n);
    let delta_decreasing = entries.windows(2).all(|p| p[1].norm.delta < p[0].norm.delta);
    Ok(MoserReport {
        mu,
        rho,
        threshold,
        passed: n0.is_some() && entries.iter().all(|e| e.norm.within_bracket),
        delta_decreasing,
        n0,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::mpa::SolverParams;
    use crate::nonlinearity::{Nonlinearity, NonlinearityConfig};
    use crate::weights::{WeightConfig, Weights};

    fn ctx(m: usize) -> Context {
        let spec = GridSpec { m, ..GridSpec::default() };
        Context {
            weights: Weights::BuiltIn(WeightConfig::default()),
            nonlinearity: Nonlinearity::new(NonlinearityConfig::default(), 2).unwrap(),
            grid: RadialGrid::new(2, &spec).unwrap(),
            angular_order: 16,
            exec: Execution::Parallel,
            cache_dir: None,
            params: SolverParams::default(),
        }
    }

    #[test]
    fn profile_is_continuous_at_the_kinks() {
        let (n, rho) = (10.0, 0.25);
        let inner = moser_profile(rho / n, n, rho, 2);
        let just_out = moser_profile(rho / n * (1.0 + 1e-12), n, rho, 2);
        assert!((inner - just_out).abs() < 1e-10);
        assert_eq!(moser_profile(rho, n, rho, 2), 0.0);
    }

    #[test]
    fn norm_matches_closed_form() {
        let c = ctx(800);
        let mut prev = f64::INFINITY;
        for n in [10.0, 100.0, 1000.0] {
            let grid = moser_grid(2, c.grid.spec(), n, 0.25).unwrap();
            let (m, _) = moser_norm(&c, &grid, n, 0.25).unwrap();
            assert!(m.rel_error < 1e-4, "n={n}: {m:?}");
            assert!(m.within_bracket && m.delta < prev);
            prev = m.delta;
        }
        let grid = moser_grid(2, c.grid.spec(), 10.0, 0.25).unwrap();
        let (m, _) = moser_norm(&c, &grid, 10.0, 0.25).unwrap();
        assert!((m.closed_form - 6.3676).abs() < 1e-4);
    }

    #[test]
    fn level_bound_holds_for_large_n() {
        let c = ctx(800);
        let rep = moser_bound_report(&c, 0.5, &[10.0, 1000.0], 0.25).unwrap();
        for e in &rep.entries {
            assert!((e.w_norm - 1.0).abs() < 1e-10);
            assert!(e.max_energy > 0.0);
        }
        assert!(rep.passed && rep.delta_decreasing, "{rep:?}");
    }
}
