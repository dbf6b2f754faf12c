//! Mountain-pass geometry and the path-deformation mountain-pass algorithm.
//!
//! The path is kept as the ray segment `0 → s_end·u` through the current
//! maximal point `u` followed by the straight segment to the fixed endpoint
//! `e`. Each sweep takes a preconditioned descent step from `u`,
//! re-maximizes along the ray through the trial point, and accepts it when
//! the path maximum decreases (Armijo). The path is then re-interpolated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBreakdown, Functional};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::kernels::dot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub path_points: usize,
    /// Residual tolerance relative to max(1, ‖u‖) for J_μ.
    pub tol: f64,
    /// Residual tolerance relative to max(1, ‖u‖) for the log functional.
    pub log_tol: f64,
    pub max_sweeps: usize,
    /// Consecutive sweeps without a decrease of the path maximum before giving up.
    pub stagnation_sweeps: usize,
    pub armijo_c1: f64,
    /// Directions sampled on the small sphere of the geometry search.
    pub geometry_directions: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            path_points: 33,
            tol: 1e-6,
            log_tol: 1e-5,
            max_sweeps: 5000,
            stagnation_sweeps: 10,
            armijo_c1: 1e-4,
            geometry_directions: 32,
            seed: 20240607,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub sweep: usize,
    pub energy: f64,
    pub residual: f64,
    pub max_index: usize,
    pub step: f64,
}

/// The bump: 1 on [0, 1/8], quintic smoothstep to 0 at 1/4.
pub fn bump(r: f64) -> f64 {
    if r <= 0.125 {
        1.0
    } else if r >= 0.25 {
        0.0
    } else {
        let x = (0.25 - r) / 0.125;
        x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Geometry {
    pub rho_small: f64,
    pub eta: f64,
    pub t_star: f64,
    pub e_energy: f64,
    pub e_norm: f64,
    #[serde(skip)]
    pub e: Vec<f64>,
}

/// Lemma-type geometry: a small sphere with J >= η > 0 and a point e beyond it with J(e) < 0.
pub fn find_geometry(j: &Functional, params: &SolverParams) -> Result<Geometry> {
    let p = j.problem();
    let nodes = p.grid().nodes();
    let phi0: Vec<f64> = nodes.iter().map(|&r| bump(r)).collect();

    let mut t = 1.0;
    let e = loop {
        let cand: Vec<f64> = phi0.iter().map(|v| t * v).collect();
        match j.value(&cand) {
            Ok(v) if v < -1.0 => break cand,
            Ok(_) => {}
            Err(Error::Overflow { .. }) => {
                // Search below the cap for a negative level.
                let cap = p.nonlinearity().t_cap();
                let found = (1..=64)
                    .map(|k| 0.5 * t + 0.5 * t * k as f64 / 64.0)
                    .filter(|&s| s < cap)
                    .map(|s| phi0.iter().map(|v| s * v).collect::<Vec<f64>>())
                    .find(|c| matches!(j.value(c), Ok(v) if v < -1.0));
                match found {
                    Some(c) => break c,
                    None => {
                        return Err(Error::Geometry(format!(
                            "J(t φ0) stays >= -1 below the exponent cap (t <= {t})"
                        )))
                    }
                }
            }
            Err(err) => return Err(err),
        }
        t *= 2.0;
        if t > (1u64 << 20) as f64 {
            return Err(Error::Geometry("J(t φ0) >= -1 for all t <= 2^20".into()));
        }
    };
    let t_star = e.iter().cloned().fold(0.0, f64::max);
    let e_energy = j.value(&e)?;
    let e_norm = p.norm(&e);

    // Unit directions: the bump and random smooth profiles.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let r_max = p.grid().r_max();
    let mut dirs = vec![phi0.clone()];
    for _ in 0..params.geometry_directions {
        let c: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let s: [f64; 3] = [rng.gen_range(0.05..0.5), rng.gen_range(0.3..2.0), rng.gen_range(1.0..5.0)];
        let mut v: Vec<f64> = nodes
            .iter()
            .map(|&r| {
                let g: f64 = (0..3).map(|k| c[k] * (-(r / s[k]).powi(2)).exp()).sum();
                g * (1.0 - r / r_max)
            })
            .collect();
        *v.last_mut().expect("nonempty") = 0.0;
        dirs.push(v);
    }
    for d in dirs.iter_mut() {
        let n = p.norm(d);
        d.iter_mut().for_each(|x| *x /= n);
    }
    for k in 1..=60 {
        let rho = 0.5f64.powi(k);
        if rho >= e_norm {
            continue;
        }
        let vals: Vec<Result<f64>> = map_indexed(p.exec(), dirs.len(), |i| {
            let u: Vec<f64> = dirs[i].iter().map(|x| rho * x).collect();
            j.value(&u)
        });
        let mut eta = f64::INFINITY;
        let mut ok = true;
        for v in vals {
            match v {
                Ok(x) => eta = eta.min(x),
                Err(Error::Overflow { .. }) => ok = false,
                Err(err) => return Err(err),
            }
        }
        if ok && eta > 0.0 {
            return Ok(Geometry {
                rho_small: rho,
                eta,
                t_star,
                e_energy,
                e_norm,
                e,
            });
        }
    }
    Err(Error::Geometry("no sphere with positive minimum found down to radius 2^-60".into()))
}

/// φ'(s) = ⟨∇J(s v), v⟩, with overflow read as "beyond the peak".
fn ray_slope(j: &Functional, v: &[f64], s: f64) -> Result<f64> {
    let u: Vec<f64> = v.iter().map(|x| s * x).collect();
    match j.gradient(&u) {
        Ok(g) => Ok(dot(&g, v)),
        Err(Error::Overflow { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Maximizes s ↦ J(s v) over s > 0, starting near s = 1.
pub fn ray_maximize(j: &Functional, v: &[f64]) -> Result<f64> {
    let mut lo = 1.0;
    let mut hi = 1.0;
    let d1 = ray_slope(j, v, 1.0)?;
    if d1 == 0.0 {
        return Ok(1.0);
    }
    let (mut f_lo, mut f_hi);
    if d1 > 0.0 {
        f_lo = d1;
        loop {
            hi *= 1.5;
            f_hi = ray_slope(j, v, hi)?;
            if f_hi <= 0.0 {
                break;
            }
            lo = hi;
            f_lo = f_hi;
            if hi > 1e12 {
                return Err(Error::Maximization("ray energy increases without bound".into()));
            }
        }
    } else {
        f_hi = d1;
        loop {
            lo /= 1.5;
            f_lo = ray_slope(j, v, lo)?;
            if f_lo > 0.0 {
                break;
            }
            hi = lo;
            f_hi = f_lo;
            if lo < 1e-12 {
                return Err(Error::Maximization("ray energy has no interior maximum".into()));
            }
        }
    }
    // Illinois regula falsi, with bisection while the upper slope is infinite.
    let mut side = 0i8;
    for _ in 0..200 {
        let s = if f_hi.is_finite() {
            (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        let s = if s > lo && s < hi { s } else { 0.5 * (lo + hi) };
        if (hi - lo) <= 1e-15 * hi {
            return Ok(s);
        }
        let fs = ray_slope(j, v, s)?;
        if fs == 0.0 {
            return Ok(s);
        }
        if fs > 0.0 {
            lo = s;
            f_lo = fs;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = s;
            f_hi = fs;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug)]
pub struct MountainPassState {
    pub path: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub max_index: usize,
    pub sweeps: usize,
    pub u: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct MpaOutcome {
    pub u: Vec<f64>,
    pub energy: EnergyBreakdown,
    pub residual: f64,
    pub tolerance: f64,
    pub norm: f64,
    pub sweeps: usize,
    pub path_max_history: Vec<f64>,
    pub state: MountainPassState,
}

/// Re-interpolated path: P points, the maximal point at the middle of the ray part.
fn build_path(u: &[f64], s_end: f64, e: &[f64], points: usize) -> (Vec<Vec<f64>>, usize) {
    let ray_pts = (points * 3) / 4;
    let m = ray_pts / 2;
    let mut path = Vec::with_capacity(points);
    for k in 0..=ray_pts {
        let s = if k <= m {
            k as f64 / m as f64
        } else {
            1.0 + (s_end - 1.0) * (k - m) as f64 / (ray_pts - m) as f64
        };
        path.push(u.iter().map(|x| s * x).collect());
    }
    let tail = points - 1 - ray_pts;
    for k in 1..=tail {
        let w = k as f64 / tail as f64;
        path.push(u.iter().zip(e).map(|(a, b)| (1.0 - w) * s_end * a + w * b).collect());
    }
    (path, m)
}

fn path_energies(j: &Functional, path: &[Vec<f64>]) -> Vec<f64> {
    map_indexed(j.problem().exec(), path.len(), |k| j.value(&path[k]).unwrap_or(f64::NEG_INFINITY))
}

/// Smallest s = 1.25^k > 1 with J(s u) < 0.
fn negative_extension(j: &Functional, u: &[f64]) -> Result<f64> {
    let mut s = 1.0;
    for _ in 0..200 {
        s *= 1.25;
        let cand: Vec<f64> = u.iter().map(|x| s * x).collect();
        match j.value(&cand) {
            Ok(v) if v < 0.0 => return Ok(s),
            Ok(_) => {}
            Err(Error::Overflow { .. }) => return Ok(s),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Geometry("ray energy stays nonnegative".into()))
}

/// Runs the mountain-pass iteration from the ray through `start`, with fixed endpoint `e`.
#[allow(clippy::too_many_arguments)]
pub fn mountain_pass(
    j: &Functional,
    start: &[f64],
    e: &[f64],
    tol: f64,
    params: &SolverParams,
    stage: &str,
    mu: Option<f64>,
    trace: &mut dyn FnMut(&TraceEvent),
) -> Result<MpaOutcome> {
    let p = j.problem();
    let s0 = ray_maximize(j, start)?;
    let mut u: Vec<f64> = start.iter().map(|x| s0 * x).collect();
    let (mut energy, mut g) = j.energy_and_gradient(&u)?;
    let mut max_energy = energy.total;
    let mut history = vec![max_energy];
    let mut stagnant = 0;
    let mut step0: f64 = 1.0;
    let mut last_step = 0.0;

    for sweep in 0..=params.max_sweeps {
        let pg = p.precondition(&u, &g);
        let dual2 = dot(&pg, &g).max(0.0);
        let residual = dual2.sqrt();
        let norm = p.norm(&u);
        let bound = tol * norm.max(1.0);

        let s_end = negative_extension(j, &u)?;
        let (path, m) = build_path(&u, s_end, e, params.path_points);
        let energies = path_energies(j, &path);
        let max_index = energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(m);
        trace(&TraceEvent {
            stage: stage.to_string(),
            mu,
            sweep,
            energy: max_energy,
            residual,
            max_index,
            step: last_step,
        });
        if residual <= bound {
            return Ok(MpaOutcome {
                energy,
                residual,
                tolerance: bound,
                norm,
                sweeps: sweep,
                path_max_history: history,
                state: MountainPassState {
                    path,
                    energies,
                    max_index,
                    sweeps: sweep,
                    u: u.clone(),
                    residual,
                },
                u,
            });
        }
        if sweep == params.max_sweeps {
            return Err(Error::Nonconvergence {
                sweeps: sweep,
                residual,
                tolerance: bound,
            });
        }

        // Armijo backtracking on the ray-maximized energy.
        let mut step = step0;
        let mut accepted: Option<(Vec<f64>, f64, f64)> = None;
        let mut fallback: Option<(Vec<f64>, f64, f64, f64)> = None;
        for _ in 0..40 {
            let w: Vec<f64> = u.iter().zip(&pg).map(|(a, d)| a - step * d).collect();
            if let Ok(s) = ray_maximize(j, &w) {
                let cand: Vec<f64> = w.iter().map(|x| s * x).collect();
                if let Ok(val) = j.value(&cand) {
                    if val <= max_energy - params.armijo_c1 * step * dual2 {
                        accepted = Some((cand, val, step));
                        break;
                    }
                    // Roundoff regime: keep the best non-increasing candidate with a smaller residual.
                    if val <= max_energy + 1e-13 * max_energy.abs() && fallback.is_none() {
                        let gc = j.gradient(&cand)?;
                        let rc = p.dual_norm(&cand, &gc);
                        if rc < residual {
                            fallback = Some((cand, val, step, rc));
                        }
                    }
                }
            }
            step *= 0.5;
        }
        let accepted = accepted.or(fallback.map(|(c, v, s, _)| (c, v, s)));
        match accepted {
            Some((cand, val, s)) => {
                u = cand;
                max_energy = val.min(max_energy);
                history.push(max_energy);
                last_step = s;
                step0 = (2.0 * s).min(1.0);
                stagnant = 0;
                let (en, gr) = j.energy_and_gradient(&u)?;
                energy = en;
                g = gr;
            }
            None => {
                stagnant += 1;
                step0 = step;
                if stagnant >= params.stagnation_sweeps {
                    return Err(Error::Stagnation {
                        sweeps: stagnant,
                        energy: max_energy,
                    });
                }
            }
        }
    }
    unreachable!("loop returns on the final sweep")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Problem;
    use crate::exec::Execution;
    use crate::grid::{GridSpec, RadialGrid};
    use crate::kernels::{KernelKind, KernelMatrix};
    use crate::nonlinearity::{mountain_pass_threshold, Nonlinearity, NonlinearityConfig};
    use crate::weights::{WeightConfig, Weights};

    fn setup(theta: f64) -> (Problem, KernelMatrix) {
        let grid = RadialGrid::new(2, &GridSpec { m: 300, r_max: 30.0, ..GridSpec::default() }).unwrap();
        let p = Problem::new(
            Weights::BuiltIn(WeightConfig::default()),
            Nonlinearity::new(NonlinearityConfig { theta, ..Default::default() }, 2).unwrap(),
            grid,
            Execution::Parallel,
        )
        .unwrap();
        let k = KernelMatrix::assemble(p.grid(), KernelKind::GMu(0.5), 16, Execution::Parallel).unwrap();
        (p, k)
    }

    #[test]
    fn bump_shape() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(0.125), 1.0);
        assert_eq!(bump(0.25), 0.0);
        assert!((bump(0.1875) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn geometry_and_mountain_pass() {
        let (p, k) = setup(1.0);
        let j = p.functional(&k).unwrap();
        let params = SolverParams::default();
        let geo = find_geometry(&j, &params).unwrap();
        assert!(geo.eta > 0.0 && geo.e_energy < 0.0 && geo.e_norm > geo.rho_small);
        let mut events = Vec::new();
        let out = mountain_pass(&j, &geo.e, &geo.e, 1e-6, &params, "test", Some(0.5), &mut |ev| {
            events.push(ev.clone())
        })
        .unwrap();
        let c = out.energy.total;
        assert!(c > 0.0 && c < mountain_pass_threshold(&WeightConfig::default(), 1.0));
        assert!(j.residual(&out.u).unwrap() <= 1e-6 * out.norm.max(1.0));
        assert!(out.u.iter().all(|v| *v >= -1e-8));
        assert!(out.path_max_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.state.path.len(), 33);
        assert!(out.state.path[0].iter().all(|v| *v == 0.0));
        assert_eq!(out.state.path.last().unwrap(), &geo.e);

        // A stronger nonlinearity lowers the level.
        let (p4, k4) = setup(4.0);
        let j4 = p4.functional(&k4).unwrap();
        let out4 = mountain_pass(&j4, &out.u, &geo.e, 1e-6, &params, "test", Some(0.5), &mut |_| {}).unwrap();
        assert!(out4.energy.total < c);
    }
}
