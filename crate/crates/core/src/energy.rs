//! Discrete functionals J_μ and J, their gradients, the log-energy split,
//! and the Poisson component φ_u.
//!
//! Discretization: ‖u‖^N = ω Σ_e a_e |D_e u|^N with per-element slopes, and
//! the interaction (C_N/2) ρᵀ S ρ with ρ_i = Q(r_i) F(u_i) and S the
//! symmetric form matrix of the kernel. The last node carries u = 0.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{e_norm_pow, element_slopes, stiffness_weights, RadialFunction, RadialGrid};
use crate::kernels::{dot, KernelKind, KernelMatrix};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::fornberg;
use crate::special::riesz_log_constant;
use crate::weights::Weights;

/// Regularization of the preconditioner coefficient (|u'|² + ε²)^{(N-2)/2}.
pub const PRECONDITIONER_EPS: f64 = 1e-8;

/// Everything a functional needs except the kernel.
#[derive(Debug)]
pub struct Problem {
    weights: Weights,
    nonlinearity: Nonlinearity,
    grid: Arc<RadialGrid>,
    a_e: Vec<f64>,
    q_nodes: Vec<f64>,
    c_n: f64,
    exec: Execution,
}

impl Problem {
    pub fn new(weights: Weights, nonlinearity: Nonlinearity, grid: Arc<RadialGrid>, exec: Execution) -> Result<Self> {
        let n_dim = weights.config().n_dim;
        if grid.n_dim() != n_dim || nonlinearity.n_dim() != n_dim {
            return Err(Error::GridMismatch("weights, nonlinearity and grid disagree on N".into()));
        }
        let a_e = stiffness_weights(&grid, &weights);
        let q_nodes = grid.nodes().iter().map(|&r| weights.q(r)).collect();
        Ok(Self {
            weights,
            nonlinearity,
            a_e,
            q_nodes,
            c_n: riesz_log_constant(n_dim),
            grid,
            exec,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn exec(&self) -> Execution {
        self.exec
    }

    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    pub fn n_dim(&self) -> usize {
        self.grid.n_dim()
    }

    pub fn stiffness(&self) -> &[f64] {
        &self.a_e
    }

    pub fn q_nodes(&self) -> &[f64] {
        &self.q_nodes
    }

    /// ‖u‖ = (∫ A |u'|^N)^{1/N}.
    pub fn norm(&self, u: &[f64]) -> f64 {
        e_norm_pow(&self.grid, &self.a_e, u).powf(1.0 / self.n_dim() as f64)
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}-node grid",
                u.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    fn check_cap(&self, u: &[f64]) -> Result<()> {
        let max = u.iter().fold(0.0f64, |m, v| m.max(*v));
        self.nonlinearity.check_cap(max)
    }

    /// ρ_i = Q(r_i) F(u_i).
    pub fn density(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        self.check_cap(u)?;
        Ok(u.iter()
            .zip(&self.q_nodes)
            .map(|(&v, q)| q * self.nonlinearity.big_f(v))
            .collect())
    }

    /// Binds a kernel, producing J_μ (G_μ kernel) or J (log kernel).
    pub fn functional<'a>(&'a self, kernel: &'a KernelMatrix) -> Result<Functional<'a>> {
        if kernel.grid_id() != self.grid.id() {
            return Err(Error::GridMismatch("kernel assembled on another grid".into()));
        }
        Ok(Functional { problem: self, kernel })
    }

    /// d = S⁻¹ g for the linearized weighted N-Laplacian at u, with d = 0 at the last node.
    pub fn precondition(&self, u: &[f64], g: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        let nodes = self.grid.nodes();
        let omega = self.grid.omega();
        let n = self.n_dim() as i32;
        let slopes = element_slopes(nodes, u);
        let coef: Vec<f64> = (0..m - 1)
            .map(|e| {
                let h = nodes[e + 1] - nodes[e];
                let c = if n == 2 {
                    1.0
                } else {
                    (slopes[e] * slopes[e] + PRECONDITIONER_EPS * PRECONDITIONER_EPS).powf(0.5 * (n - 2) as f64)
                };
                omega * self.a_e[e] * c / (h * h)
            })
            .collect();
        // Tridiagonal system on nodes 0..m-2.
        let k = m - 1;
        let mut diag = vec![0.0; k];
        let mut off = vec![0.0; k.saturating_sub(1)];
        for e in 0..m - 1 {
            diag[e] += coef[e];
            if e + 1 < k {
                diag[e + 1] += coef[e];
                off[e] = -coef[e];
            }
        }
        let mut d = thomas(&diag, &off, &g[..k]);
        d.push(0.0);
        d
    }

    /// sqrt(gᵀ S⁻¹ g): the dual norm of the gradient (exact E-dual for N = 2).
    pub fn dual_norm(&self, u: &[f64], g: &[f64]) -> f64 {
        dot(&self.precondition(u, g), g).max(0.0).sqrt()
    }

    /// Quadrature-weighted ℓ² norm of g / vol, i.e. of the L² Riesz representative.
    pub fn raw_l2(&self, g: &[f64]) -> f64 {
        let vol = self.grid.volumes();
        let omega = self.grid.omega();
        g.iter()
            .zip(vol)
            .map(|(x, v)| x * x / (omega * v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Symmetric tridiagonal solve.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// ‖u‖^N / N.
    pub kinetic: f64,
    /// (C_N/2) ∫ (k * QF(u)) QF(u).
    pub interaction: f64,
    pub total: f64,
}

/// J with a fixed kernel.
#[derive(Clone, Copy, Debug)]
pub struct Functional<'a> {
    problem: &'a Problem,
    kernel: &'a KernelMatrix,
}

impl<'a> Functional<'a> {
    pub fn problem(&self) -> &'a Problem {
        self.problem
    }

    pub fn kernel(&self) -> &'a KernelMatrix {
        self.kernel
    }

    pub fn energy(&self, u: &[f64]) -> Result<EnergyBreakdown> {
        let p = self.problem;
        let rho = p.density(u)?;
        let kinetic = e_norm_pow(&p.grid, &p.a_e, u) / p.n_dim() as f64;
        let interaction = 0.5 * p.c_n * self.kernel.bilinear(&rho, &rho, p.exec);
        Ok(EnergyBreakdown {
            kinetic,
            interaction,
            total: kinetic - interaction,
        })
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(self.energy(u)?.total)
    }

    /// Discrete gradient: ⟨g, v⟩ is the directional derivative of the discrete J along v.
    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.energy_and_gradient(u)?.1)
    }

    pub fn energy_and_gradient(&self, u: &[f64]) -> Result<(EnergyBreakdown, Vec<f64>)> {
        let p = self.problem;
        p.check_len(u)?;
        p.check_cap(u)?;
        let nl = &p.nonlinearity;
        let m = u.len();
        let (big, small): (Vec<f64>, Vec<f64>) = u.iter().map(|&v| nl.pair(v)).unzip();
        let rho: Vec<f64> = big.iter().zip(&p.q_nodes).map(|(f, q)| f * q).collect();
        let s_rho = self.kernel.apply_form(&rho, p.exec);

        let nodes = p.grid.nodes();
        let omega = p.grid.omega();
        let n = p.n_dim() as i32;
        let slopes = element_slopes(nodes, u);
        let mut g = vec![0.0; m];
        let mut kin = 0.0;
        for e in 0..m - 1 {
            let d = slopes[e];
            let h = nodes[e + 1] - nodes[e];
            kin += p.a_e[e] * d.abs().powi(n);
            let flux = omega * p.a_e[e] * d.abs().powi(n - 2) * d / h;
            g[e] -= flux;
            g[e + 1] += flux;
        }
        for k in 0..m {
            g[k] -= p.c_n * s_rho[k] * p.q_nodes[k] * small[k];
        }
        g[m - 1] = 0.0;
        let kinetic = omega * kin / n as f64;
        let interaction = 0.5 * p.c_n * dot(&rho, &s_rho);
        Ok((
            EnergyBreakdown {
                kinetic,
                interaction,
                total: kinetic - interaction,
            },
            g,
        ))
    }

    /// Gradient residual measured in the dual norm.
    pub fn residual(&self, u: &[f64]) -> Result<f64> {
        let g = self.gradient(u)?;
        Ok(self.problem.dual_norm(u, &g))
    }
}

/// Log kernel together with its |x - y| <= 1 and > 1 parts.
#[derive(Debug)]
pub struct LogKernels {
    pub total: KernelMatrix,
    pub near: KernelMatrix,
    pub far: KernelMatrix,
}

impl LogKernels {
    pub fn assemble(grid: &RadialGrid, order: usize, exec: Execution, cache: Option<&std::path::Path>) -> Result<Self> {
        Ok(Self {
            total: KernelMatrix::load_or_assemble(grid, KernelKind::Log, order, exec, cache)?,
            near: KernelMatrix::load_or_assemble(grid, KernelKind::LogNear, order, exec, cache)?,
            far: KernelMatrix::load_or_assemble(grid, KernelKind::LogFar, order, exec, cache)?,
        })
    }
}

/// Finiteness certificate for ∫ (log(1/|·|) * QF(u)) QF(u).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogSplit {
    /// ∫∫_{|x-y|<=1} log(1/|x-y|) QF(u(x)) QF(u(y)).
    pub near: f64,
    /// ∫∫_{|x-y|>1} log(1/|x-y|) QF(u(x)) QF(u(y)).
    pub far: f64,
    /// |near + far - total|.
    pub consistency: f64,
    /// (2/(e d)) (∫|x|^d QF(u)) (∫QF(u)).
    pub far_bound: f64,
    pub d: f64,
    /// d + b - ℓγ/(N-1) + N.
    pub tail_exponent: f64,
    pub finite: bool,
    pub bound_holds: bool,
}

pub fn log_split(problem: &Problem, logk: &LogKernels, u: &[f64]) -> Result<LogSplit> {
    let rho = problem.density(u)?;
    let exec = problem.exec;
    let near = logk.near.bilinear(&rho, &rho, exec);
    let far = logk.far.bilinear(&rho, &rho, exec);
    let total = logk.total.bilinear(&rho, &rho, exec);
    let w = problem.weights.config();
    let integ = w.check_integrability();
    let d = (-integ.exponent / 2.0).min(1.0);
    let grid = &problem.grid;
    let moment: Vec<f64> = grid.nodes().iter().zip(&rho).map(|(r, x)| r.powf(d) * x).collect();
    let mass = grid.integrate(&rho);
    let far_bound = 2.0 / (std::f64::consts::E * d) * grid.integrate(&moment) * mass;
    let tail_exponent = d + integ.exponent;
    Ok(LogSplit {
        near,
        far,
        consistency: (near + far - total).abs(),
        far_bound,
        d,
        tail_exponent,
        finite: near.is_finite() && far.is_finite(),
        bound_holds: far.abs() <= far_bound && tail_exponent < 0.0,
    })
}

/// φ_u = C_N (log(1/|·|) * QF(u)).
pub fn poisson_recover(problem: &Problem, log_kernel: &KernelMatrix, u: &RadialFunction) -> Result<RadialFunction> {
    u.ensure_grid(&problem.grid)?;
    let rho = problem.density(u.values())?;
    let conv = log_kernel.convolve(&problem.grid, &rho, problem.exec)?;
    RadialFunction::new(problem.grid.clone(), conv.into_iter().map(|v| problem.c_n * v).collect())
}

/// Radial Laplacian φ'' + (N-1)φ'/r by five-point Fornberg stencils (one-sided near the ends).
pub fn radial_laplacian(nodes: &[f64], phi: &[f64], n_dim: usize) -> Vec<f64> {
    let m = nodes.len();
    let n = n_dim as f64;
    (0..m)
        .map(|i| {
            let lo = i.saturating_sub(2).min(m.saturating_sub(5));
            let xs = &nodes[lo..lo + 5.min(m)];
            let w = fornberg(nodes[i], xs, 2);
            let d1: f64 = w[1].iter().zip(&phi[lo..]).map(|(a, b)| a * b).sum();
            let d2: f64 = w[2].iter().zip(&phi[lo..]).map(|(a, b)| a * b).sum();
            d2 + (n - 1.0) * d1 / nodes[i]
        })
        .collect()
}

/// Interior nodes skipped at each end of the residual window.
pub const POISSON_MARGIN: usize = 5;

/// Relative residual of (-Δ)^{N/2} φ = source, N ∈ {2, 4}, in the vol-weighted L² norm.
pub fn poisson_residual(phi: &RadialFunction, source: &RadialFunction) -> Result<f64> {
    let grid = phi.grid();
    source.ensure_grid(grid)?;
    let n_dim = grid.n_dim();
    let nodes = grid.nodes();
    let applied: Vec<f64> = match n_dim {
        2 => radial_laplacian(nodes, phi.values(), 2).into_iter().map(|v| -v).collect(),
        4 => {
            let l1 = radial_laplacian(nodes, phi.values(), 4);
            radial_laplacian(nodes, &l1, 4)
        }
        _ => return Err(Error::UnsupportedDimension(n_dim)),
    };
    let m = nodes.len();
    if m <= 2 * POISSON_MARGIN {
        return Err(Error::domain("grid too small for the Poisson residual"));
    }
    let vol = grid.volumes();
    let range = POISSON_MARGIN..m - POISSON_MARGIN;
    let num: f64 = range.clone().map(|i| vol[i] * (applied[i] - source.values()[i]).powi(2)).sum();
    let den: f64 = range.map(|i| vol[i] * source.values()[i].powi(2)).sum();
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::nonlinearity::NonlinearityConfig;
    use crate::weights::WeightConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(m: usize, r_max: f64) -> Problem {
        let grid = RadialGrid::new(2, &GridSpec { m, r_max, ..GridSpec::default() }).unwrap();
        Problem::new(
            Weights::BuiltIn(WeightConfig::default()),
            Nonlinearity::new(NonlinearityConfig::default(), 2).unwrap(),
            grid,
            Execution::Parallel,
        )
        .unwrap()
    }

    fn smooth(rng: &mut ChaCha8Rng, nodes: &[f64], r_max: f64) -> Vec<f64> {
        let a: [f64; 3] = [rng.gen_range(0.1..0.8), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..0.4)];
        let s: f64 = rng.gen_range(0.5..2.0);
        let mut v: Vec<f64> = nodes
            .iter()
            .map(|&r| {
                (a[0] * (-(r / s).powi(2)).exp() + a[1] * (-r).exp() * r + a[2] / (1.0 + r * r)) * (1.0 - r / r_max)
            })
            .collect();
        *v.last_mut().unwrap() = 0.0;
        v
    }

    #[test]
    fn zero_function() {
        let p = problem(200, 20.0);
        let k = KernelMatrix::assemble(p.grid(), KernelKind::GMu(0.5), 16, Execution::Parallel).unwrap();
        let j = p.functional(&k).unwrap();
        let z = vec![0.0; p.grid().len()];
        let (e, g) = j.energy_and_gradient(&z).unwrap();
        assert_eq!(e.total, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = problem(200, 20.0);
        let k = KernelMatrix::assemble(p.grid(), KernelKind::GMu(0.5), 16, Execution::Parallel).unwrap();
        let j = p.functional(&k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let u = smooth(&mut rng, p.grid().nodes(), 20.0);
            let v = smooth(&mut rng, p.grid().nodes(), 20.0);
            let g = j.gradient(&u).unwrap();
            let h = 1e-6;
            let plus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fd = (j.value(&plus).unwrap() - j.value(&minus).unwrap()) / (2.0 * h);
            let an = dot(&g, &v);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn total_is_kinetic_minus_interaction() {
        let p = problem(200, 20.0);
        let k = KernelMatrix::assemble(p.grid(), KernelKind::Log, 16, Execution::Parallel).unwrap();
        let j = p.functional(&k).unwrap();
        let u: Vec<f64> = p.grid().nodes().iter().map(|&r| 1.5 * (-r * r).exp()).collect();
        let e = j.energy(&u).unwrap();
        assert_eq!(e.total, e.kinetic - e.interaction);
        let (e2, _) = j.energy_and_gradient(&u).unwrap();
        assert!((e2.total - e.total).abs() < 1e-12 * e.kinetic);
    }

    #[test]
    fn dual_norm_is_exact_e_dual_in_the_plane() {
        // For N = 2, sup ⟨g, v⟩/‖v‖ is attained at v = S⁻¹g.
        let p = problem(200, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g: Vec<f64> = (0..p.grid().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        *g.last_mut().unwrap() = 0.0;
        let z = vec![0.0; g.len()];
        let v = p.precondition(&z, &g);
        let ratio = dot(&g, &v) / p.norm(&v);
        assert!((ratio - p.dual_norm(&z, &g)).abs() < 1e-9 * ratio);
    }

    #[test]
    fn gmu_interaction_dominates_log_on_small_support() {
        let p = problem(200, 20.0);
        let log = KernelMatrix::assemble(p.grid(), KernelKind::Log, 16, Execution::Parallel).unwrap();
        let gmu = KernelMatrix::assemble(p.grid(), KernelKind::GMu(0.3), 16, Execution::Parallel).unwrap();
        let u: Vec<f64> = p.grid().nodes().iter().map(|&r| (1.0 - (4.0 * r).powi(2)).max(0.0)).collect();
        let il = p.functional(&log).unwrap().energy(&u).unwrap().interaction;
        let ig = p.functional(&gmu).unwrap().energy(&u).unwrap().interaction;
        assert!(ig >= il && il > 0.0);
    }

    #[test]
    fn form_symmetry_on_random_pairs() {
        let p = problem(200, 20.0);
        let k = KernelMatrix::assemble(p.grid(), KernelKind::GMu(0.5), 16, Execution::Parallel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g: Vec<f64> = (0..p.grid().len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let h: Vec<f64> = (0..p.grid().len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = k.bilinear(&g, &h, Execution::Parallel);
        let b = k.bilinear(&h, &g, Execution::Parallel);
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn manufactured_poisson_planar() {
        let grid = RadialGrid::new(2, &GridSpec::default()).unwrap();
        let phi = RadialFunction::from_fn(grid.clone(), |r| -r * r / 4.0).unwrap();
        let src = RadialFunction::from_fn(grid, |_| 1.0).unwrap();
        assert!(poisson_residual(&phi, &src).unwrap() < 1e-6);
    }

    #[test]
    fn manufactured_biharmonic() {
        let grid = RadialGrid::new(4, &GridSpec { r_max: 5.0, ..GridSpec::default() }).unwrap();
        let phi = RadialFunction::from_fn(grid.clone(), |r| r.powi(4)).unwrap();
        let src = RadialFunction::from_fn(grid, |_| 192.0).unwrap();
        assert!(poisson_residual(&phi, &src).unwrap() < 1e-4);
    }

    #[test]
    fn odd_dimension_is_rejected() {
        let grid = RadialGrid::new(3, &GridSpec { m: 100, ..GridSpec::default() }).unwrap();
        let phi = RadialFunction::zeros(grid.clone());
        assert!(matches!(
            poisson_residual(&phi, &RadialFunction::zeros(grid)),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn point_mass_potential_is_newtonian() {
        let p = problem(400, 20.0);
        let log = KernelMatrix::assemble(p.grid(), KernelKind::Log, 16, Execution::Parallel).unwrap();
        // Narrow bump of unit mass, width 1e-2.
        let w = 1e-2;
        let g: Vec<f64> = p
            .grid()
            .nodes()
            .iter()
            .map(|&r| (-(r / w).powi(2)).exp() / (std::f64::consts::PI * w * w))
            .collect();
        let phi: Vec<f64> = log.apply(&g, Execution::Parallel).into_iter().map(|v| p.c_n() * v).collect();
        for (i, &r) in p.grid().nodes().iter().enumerate() {
            if r > 0.2 && r < 10.0 {
                let exact = -r.ln() / (2.0 * std::f64::consts::PI);
                assert!((phi[i] - exact).abs() < 1e-6, "r={r}");
            }
        }
    }

    #[test]
    fn recovered_potential_solves_poisson() {
        let p = problem(800, 50.0);
        let log = KernelMatrix::assemble(p.grid(), KernelKind::Log, 16, Execution::Parallel).unwrap();
        let u = RadialFunction::from_fn(p.grid().clone(), |r| 1.2 * (-r * r).exp()).unwrap();
        let phi = poisson_recover(&p, &log, &u).unwrap();
        let src = RadialFunction::new(p.grid().clone(), p.density(u.values()).unwrap()).unwrap();
        let res = poisson_residual(&phi, &src).unwrap();
        assert!(res < 1e-3, "residual {res}");
    }
}
