//! Solve drivers: a single μ, the μ → 0 continuation and the log polish.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{log_split, poisson_recover, poisson_residual, EnergyBreakdown, LogKernels, LogSplit, Problem};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{decay_diagnostic, DecayReport, RadialFunction, RadialGrid};
use crate::kernels::{KernelKind, KernelMatrix};
use crate::mpa::{find_geometry, mountain_pass, Geometry, SolverParams, TraceEvent};
use crate::nonlinearity::{mountain_pass_threshold, Nonlinearity};
use crate::weights::Weights;

/// Everything a solve needs apart from the kernel.
#[derive(Clone, Debug)]
pub struct Context {
    pub weights: Weights,
    pub nonlinearity: Nonlinearity,
    pub grid: Arc<RadialGrid>,
    pub angular_order: usize,
    pub exec: Execution,
    pub cache_dir: Option<PathBuf>,
    pub params: SolverParams,
}

impl Context {
    pub fn problem(&self) -> Result<Problem> {
        Problem::new(self.weights.clone(), self.nonlinearity.clone(), self.grid.clone(), self.exec)
    }

    pub fn kernel(&self, kind: KernelKind) -> Result<KernelMatrix> {
        KernelMatrix::load_or_assemble(&self.grid, kind, self.angular_order, self.exec, self.cache_dir.as_deref())
    }

    pub fn log_kernels(&self) -> Result<LogKernels> {
        LogKernels::assemble(&self.grid, self.angular_order, self.exec, self.cache_dir.as_deref())
    }

    /// Б = (ω A0 / N)((b̃0 + N)/α0)^{N-1}.
    pub fn threshold(&self) -> f64 {
        mountain_pass_threshold(self.weights.config(), self.nonlinearity.config().alpha0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationSchedule {
    pub ratio: f64,
    pub mu_min: f64,
    /// Explicit sequence; when empty the geometric sequence from μ0 is used.
    pub mus: Vec<f64>,
    pub warm_start: bool,
    /// Also solve each μ from a cold start and report the level discrepancy.
    pub cold_check: bool,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            mu_min: 1e-4,
            mus: Vec::new(),
            warm_start: true,
            cold_check: false,
        }
    }
}

impl ContinuationSchedule {
    /// μ0 > μ1 > ... > μ_K, all in (0, μ0]; geometric sequences end exactly at `mu_min`.
    pub fn sequence(&self, mu0: f64) -> Result<Vec<f64>> {
        let seq = if self.mus.is_empty() {
            if !(self.ratio > 0.0 && self.ratio < 1.0) {
                return Err(Error::domain(format!("schedule ratio {} outside (0, 1)", self.ratio)));
            }
            if !(self.mu_min > 0.0 && self.mu_min <= mu0) {
                return Err(Error::domain(format!("mu_min {} outside (0, mu0]", self.mu_min)));
            }
            let mut seq = vec![mu0];
            let mut mu = mu0 * self.ratio;
            while mu > self.mu_min * (1.0 + 1e-12) {
                seq.push(mu);
                mu *= self.ratio;
            }
            if *seq.last().expect("nonempty") > self.mu_min {
                seq.push(self.mu_min);
            }
            seq
        } else {
            self.mus.clone()
        };
        if seq.iter().any(|&m| !(m > 0.0 && m <= mu0)) {
            return Err(Error::domain("schedule values must lie in (0, mu0]"));
        }
        if seq.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::domain("schedule must be strictly decreasing"));
        }
        Ok(seq)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolutionBundle {
    pub kernel: KernelKind,
    pub energy: EnergyBreakdown,
    /// The mountain-pass level estimate J(u).
    pub level: f64,
    pub threshold: f64,
    /// Б - level.
    pub margin: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub residual_raw_l2: f64,
    pub norm: f64,
    pub sweeps: usize,
    pub min_value: f64,
    pub decay: DecayReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_split: Option<LogSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson_residual: Option<f64>,
    pub geometry: Geometry,
    #[serde(skip)]
    pub u: RadialFunction,
    #[serde(skip)]
    pub phi: Option<RadialFunction>,
}

/// Streaming progress of a solve.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Progress {
    Sweep(TraceEvent),
    Step(ContinuationStep),
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationStep {
    pub mu: f64,
    pub level: f64,
    pub norm: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub sweeps: usize,
    /// ‖u_{μ_k} - u_{μ_{k-1}}‖.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub increment: Option<f64>,
    /// |J(u_μ) - J_μ(u_μ)| for the log functional J.
    pub log_energy_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cold_level: Option<f64>,
    #[serde(skip)]
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationReport {
    pub steps: Vec<ContinuationStep>,
    pub threshold: f64,
    pub sup_level: f64,
    /// Lowest level along the schedule, attained at μ0.
    pub underline_c: f64,
    pub increments_decreasing: bool,
    pub log_gap_decreasing: bool,
    pub nontrivial: bool,
    pub limit: SolutionBundle,
}

fn finish_bundle(
    ctx: &Context,
    problem: &Problem,
    kernel: &KernelMatrix,
    out: crate::mpa::MpaOutcome,
    geometry: Geometry,
) -> Result<SolutionBundle> {
    let j = problem.functional(kernel)?;
    // Independent re-evaluation of the certificate.
    let g = j.gradient(&out.u)?;
    let residual = problem.dual_norm(&out.u, &g);
    let u = RadialFunction::new(ctx.grid.clone(), out.u)?;
    let w = ctx.weights.config();
    let threshold = ctx.threshold();
    Ok(SolutionBundle {
        kernel: kernel.kind(),
        level: out.energy.total,
        margin: threshold - out.energy.total,
        threshold,
        energy: out.energy,
        residual,
        tolerance: out.tolerance,
        residual_raw_l2: problem.raw_l2(&g),
        norm: out.norm,
        sweeps: out.sweeps,
        min_value: u.values().iter().cloned().fold(f64::INFINITY, f64::min),
        decay: decay_diagnostic(&u, w.ell, w.r0),
        log_split: None,
        poisson_residual: None,
        geometry,
        u,
        phi: None,
    })
}

/// Geometry for `j`, reusing `previous` when its endpoint still has negative energy.
fn geometry_for(j: &crate::energy::Functional, params: &SolverParams, previous: Option<&Geometry>) -> Result<Geometry> {
    if let Some(g) = previous {
        if matches!(j.value(&g.e), Ok(v) if v < 0.0) {
            return Ok(g.clone());
        }
    }
    find_geometry(j, params)
}

/// Mountain-pass solve of J_μ, cold from the geometry endpoint or warm from `start`.
pub fn solve_mu(
    ctx: &Context,
    mu: f64,
    start: Option<&[f64]>,
    progress: &mut dyn FnMut(Progress),
) -> Result<SolutionBundle> {
    let problem = ctx.problem()?;
    let kernel = ctx.kernel(KernelKind::GMu(mu))?;
    solve_with(ctx, &problem, &kernel, mu, start, None, progress)
}

fn solve_with(
    ctx: &Context,
    problem: &Problem,
    kernel: &KernelMatrix,
    mu: f64,
    start: Option<&[f64]>,
    previous: Option<&Geometry>,
    progress: &mut dyn FnMut(Progress),
) -> Result<SolutionBundle> {
    let j = problem.functional(kernel)?;
    let geometry = geometry_for(&j, &ctx.params, previous)?;
    let start = start.unwrap_or(&geometry.e);
    let out = mountain_pass(&j, start, &geometry.e, ctx.params.tol, &ctx.params, "mu", Some(mu), &mut |ev| {
        progress(Progress::Sweep(ev.clone()))
    })?;
    finish_bundle(ctx, problem, kernel, out, geometry)
}

/// Attaches φ_u, its Poisson residual (even N only) and the log-split certificate.
pub fn attach_poisson(ctx: &Context, problem: &Problem, logk: &LogKernels, bundle: &mut SolutionBundle) -> Result<()> {
    let phi = poisson_recover(problem, &logk.total, &bundle.u)?;
    let source = RadialFunction::new(ctx.grid.clone(), problem.density(bundle.u.values())?)?;
    bundle.poisson_residual = match poisson_residual(&phi, &source) {
        Ok(r) => Some(r),
        Err(Error::UnsupportedDimension(_)) => None,
        Err(e) => return Err(e),
    };
    bundle.phi = Some(phi);
    bundle.log_split = Some(log_split(problem, logk, bundle.u.values())?);
    Ok(())
}

/// Continuation μ0 → μ_K with warm starts, then the log polish giving u_0.
pub fn continue_to_zero(
    ctx: &Context,
    schedule: &ContinuationSchedule,
    progress: &mut dyn FnMut(Progress),
) -> Result<ContinuationReport> {
    let mus = schedule.sequence(ctx.weights.config().mu0)?;
    let problem = ctx.problem()?;
    let logk = ctx.log_kernels()?;
    let j_log = problem.functional(&logk.total)?;

    let mut steps: Vec<ContinuationStep> = Vec::new();
    let mut prev: Option<SolutionBundle> = None;
    for &mu in &mus {
        let kernel = ctx.kernel(KernelKind::GMu(mu))?;
        let start = if schedule.warm_start { prev.as_ref().map(|b| b.u.values()) } else { None };
        let geo_prev = prev.as_ref().map(|b| &b.geometry);
        let bundle = solve_with(ctx, &problem, &kernel, mu, start, geo_prev, progress)?;
        let cold_level = if schedule.cold_check && prev.is_some() {
            Some(solve_with(ctx, &problem, &kernel, mu, None, None, &mut |_| {})?.level)
        } else {
            None
        };
        let increment = prev.as_ref().map(|p| {
            let diff: Vec<f64> = bundle.u.values().iter().zip(p.u.values()).map(|(a, b)| a - b).collect();
            problem.norm(&diff)
        });
        let step = ContinuationStep {
            mu,
            level: bundle.level,
            norm: bundle.norm,
            residual: bundle.residual,
            tolerance: bundle.tolerance,
            sweeps: bundle.sweeps,
            increment,
            log_energy_gap: (j_log.value(bundle.u.values())? - bundle.level).abs(),
            cold_level,
            u: bundle.u.values().to_vec(),
        };
        progress(Progress::Step(step.clone()));
        steps.push(step);
        prev = Some(bundle);
    }
    let last = prev.expect("schedule is nonempty");

    // Log polish from the last approximating solution.
    let geometry = geometry_for(&j_log, &ctx.params, Some(&last.geometry))?;
    let out = mountain_pass(
        &j_log,
        last.u.values(),
        &geometry.e,
        ctx.params.log_tol,
        &ctx.params,
        "log",
        None,
        &mut |ev| progress(Progress::Sweep(ev.clone())),
    )
    .map_err(|e| match e {
        Error::Nonconvergence { residual, tolerance, .. } => Error::LimitNotConverged { residual, tolerance },
        Error::Stagnation { .. } => Error::LimitNotConverged {
            residual: f64::NAN,
            tolerance: ctx.params.log_tol,
        },
        other => other,
    })?;
    let mut limit = finish_bundle(ctx, &problem, &logk.total, out, geometry)?;
    if limit.residual > limit.tolerance {
        return Err(Error::LimitNotConverged {
            residual: limit.residual,
            tolerance: limit.tolerance,
        });
    }
    attach_poisson(ctx, &problem, &logk, &mut limit)?;
    if !limit.log_split.as_ref().is_some_and(|s| s.finite) {
        return Err(Error::LimitNotConverged {
            residual: limit.residual,
            tolerance: limit.tolerance,
        });
    }

    let increments: Vec<f64> = steps.iter().filter_map(|s| s.increment).collect();
    let gaps: Vec<f64> = steps.iter().map(|s| s.log_energy_gap).collect();
    Ok(ContinuationReport {
        threshold: ctx.threshold(),
        sup_level: steps.iter().map(|s| s.level).fold(f64::NEG_INFINITY, f64::max),
        underline_c: steps[0].level,
        increments_decreasing: increments.windows(2).all(|w| w[1] < w[0]),
        log_gap_decreasing: gaps.windows(2).all(|w| w[1] < w[0]),
        nontrivial: limit.norm > 1e-3 && limit.level >= steps[0].level,
        steps,
        limit,
    })
}
