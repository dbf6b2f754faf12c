//! Graded radial grid, nodal quadrature, and radial functions.
//!
//! Nodes are piecewise geometric between anchor radii. Each piece holds an
//! even number of intervals, so consecutive interval pairs carry a
//! quadratic (Simpson-type) rule for `∫ u(r) r^{N-1} dr`. The core
//! `[0, r_1]` is added to the first node with `u` taken constant there.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use crate::special::unit_sphere_measure;
use crate::weights::Weights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Target node count; the realized count rounds each piece to an even number of intervals.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R_max")]
    pub r_max: f64,
    /// r_1 = r_min_factor · R_max.
    pub r_min_factor: f64,
    /// Extra radii forced onto the grid (besides r_1, 1 and R_max).
    pub anchors: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            m: 800,
            r_max: 50.0,
            r_min_factor: 1e-6,
            anchors: Vec::new(),
        }
    }
}

impl GridSpec {
    pub fn with_anchors(&self, extra: &[f64]) -> Self {
        let mut s = self.clone();
        s.anchors.extend_from_slice(extra);
        s
    }

    pub fn with_size(&self, m: usize, r_max: f64) -> Self {
        Self { m, r_max, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 8 {
            return Err(Error::domain(format!("grid needs M >= 8, got {}", self.m)));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::domain(format!("R_max = {} must be positive", self.r_max)));
        }
        if !(self.r_min_factor > 0.0 && self.r_min_factor < 1.0) {
            return Err(Error::domain("r_min_factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RadialGrid {
    n_dim: usize,
    spec: GridSpec,
    nodes: Vec<f64>,
    /// vol_i = ∫ ℓ_i(r) r^{N-1} dr, so Σ vol_i u_i ≈ ∫_0^{R_max} u r^{N-1} dr.
    vol: Vec<f64>,
    /// Per-pair share of vol for nodes (2k, 2k+1, 2k+2).
    pair_vol: Vec<[f64; 3]>,
    core_vol: f64,
    omega: f64,
    id: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridDescriptor {
    pub n_dim: usize,
    pub nodes: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub anchors: Vec<f64>,
    pub max_ratio: f64,
    pub id: String,
}

impl RadialGrid {
    pub fn new(n_dim: usize, spec: &GridSpec) -> Result<Arc<Self>> {
        spec.validate()?;
        if n_dim < 2 {
            return Err(Error::UnsupportedDimension(n_dim));
        }
        let r_min = spec.r_min_factor * spec.r_max;
        let mut anchors = vec![r_min, spec.r_max];
        for &a in spec.anchors.iter().chain(std::iter::once(&1.0)) {
            if a > r_min * (1.0 + 1e-9) && a < spec.r_max * (1.0 - 1e-9) {
                anchors.push(a);
            }
        }
        anchors.sort_by(f64::total_cmp);
        anchors.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-9);

        let total_log = (spec.r_max / r_min).ln();
        let intervals = (spec.m - 1) as f64;
        let mut nodes = vec![r_min];
        for w in anchors.windows(2) {
            let share = (w[1] / w[0]).ln() / total_log * intervals;
            let k = ((share / 2.0).round() as usize).max(1) * 2;
            for j in 1..=k {
                nodes.push(if j == k { w[1] } else { w[0] * (w[1] / w[0]).powf(j as f64 / k as f64) });
            }
        }
        Self::from_nodes(n_dim, spec.clone(), nodes)
    }

    fn from_nodes(n_dim: usize, spec: GridSpec, nodes: Vec<f64>) -> Result<Arc<Self>> {
        let m = nodes.len();
        debug_assert!((m - 1).is_multiple_of(2));
        let rule = GaussRule::new(8);
        let pow = (n_dim - 1) as i32;
        let mut vol = vec![0.0; m];
        let mut pair_vol = Vec::with_capacity((m - 1) / 2);
        for k in 0..(m - 1) / 2 {
            let (x0, x1, x2) = (nodes[2 * k], nodes[2 * k + 1], nodes[2 * k + 2]);
            let l0 = |r: f64| (r - x1) * (r - x2) / ((x0 - x1) * (x0 - x2));
            let l1 = |r: f64| (r - x0) * (r - x2) / ((x1 - x0) * (x1 - x2));
            let l2 = |r: f64| (r - x0) * (r - x1) / ((x2 - x0) * (x2 - x1));
            let w = [
                rule.integrate(x0, x2, |r| l0(r) * r.powi(pow)),
                rule.integrate(x0, x2, |r| l1(r) * r.powi(pow)),
                rule.integrate(x0, x2, |r| l2(r) * r.powi(pow)),
            ];
            if w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::domain(format!("nonpositive quadrature weight on pair {k}: {w:?}")));
            }
            for (j, wj) in w.iter().enumerate() {
                vol[2 * k + j] += wj;
            }
            pair_vol.push(w);
        }
        let core_vol = nodes[0].powi(n_dim as i32) / n_dim as f64;
        vol[0] += core_vol;

        let mut hasher = Sha256::new();
        hasher.update((n_dim as u64).to_le_bytes());
        for r in &nodes {
            hasher.update(r.to_le_bytes());
        }
        let mut id = String::with_capacity(64);
        for b in hasher.finalize() {
            let _ = write!(id, "{b:02x}");
        }
        Ok(Arc::new(Self {
            n_dim,
            spec,
            nodes,
            vol,
            pair_vol,
            core_vol,
            omega: unit_sphere_measure(n_dim),
            id,
        }))
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Nodal volumes vol_i (radial measure r^{N-1} dr, core included).
    pub fn volumes(&self) -> &[f64] {
        &self.vol
    }

    /// Quadrature weights w_i with Σ w_i r_i^{N-1} u_i ≈ ∫ u r^{N-1} dr.
    pub fn weights(&self) -> Vec<f64> {
        let p = (self.n_dim - 1) as i32;
        self.vol.iter().zip(&self.nodes).map(|(v, r)| v / r.powi(p)).collect()
    }

    pub fn pair_volumes(&self) -> &[[f64; 3]] {
        &self.pair_vol
    }

    pub fn core_volume(&self) -> f64 {
        self.core_vol
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().expect("nonempty grid")
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// SHA-256 of (N, nodes); two grids with equal ids are interchangeable.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// ∫_{R^N} g dx for a radial g sampled at the nodes.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        self.omega * self.vol.iter().zip(g).map(|(v, x)| v * x).sum::<f64>()
    }

    /// Element integrals ∫_{r_e}^{r_{e+1}} h(r) r^{N-1} dr (8-point Gauss).
    pub fn element_integrals<F: Fn(f64) -> f64>(&self, h: F) -> Vec<f64> {
        let rule = GaussRule::new(8);
        let pow = (self.n_dim - 1) as i32;
        self.nodes
            .windows(2)
            .map(|w| rule.integrate(w[0], w[1], |r| h(r) * r.powi(pow)))
            .collect()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        let max_ratio = self
            .nodes
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(1.0, f64::max);
        GridDescriptor {
            n_dim: self.n_dim,
            nodes: self.len(),
            r_min: self.nodes[0],
            r_max: self.r_max(),
            anchors: self.spec.anchors.clone(),
            max_ratio,
            id: self.id.clone(),
        }
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        self.id == other.id
    }

    /// Index of the node closest to `r`.
    pub fn nearest(&self, r: f64) -> usize {
        let k = self.nodes.partition_point(|&x| x < r);
        if k == 0 {
            0
        } else if k == self.len() {
            k - 1
        } else if (self.nodes[k] - r) < (r - self.nodes[k - 1]) {
            k
        } else {
            k - 1
        }
    }
}

/// A scalar field sampled at the nodes of a grid.
#[derive(Clone, Debug)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("nonfinite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<RadialGrid>, f: F) -> Result<Self> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn ensure_grid(&self, grid: &RadialGrid) -> Result<()> {
        if self.grid.same_as(grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "function lives on grid {} but grid {} was expected",
                &self.grid.id()[..12],
                &grid.id()[..12]
            )))
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,value\n");
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            let _ = writeln!(s, "{r:.17e},{v:.17e}");
        }
        s
    }

    /// Reads a two-column CSV written by [`RadialFunction::to_csv`]; radii must match `grid`.
    pub fn from_csv(grid: Arc<RadialGrid>, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::with_capacity(grid.len());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('r') || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse(format!("{}:{}: {msg}", path.display(), lineno + 1));
            let (r, v) = line.split_once(',').ok_or_else(|| bad("expected r,value"))?;
            let r: f64 = r.trim().parse().map_err(|_| bad("bad radius"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
            let k = values.len();
            let expected = *grid
                .nodes()
                .get(k)
                .ok_or_else(|| Error::GridMismatch(format!("{} has more rows than grid nodes", path.display())))?;
            if (r - expected).abs() > 1e-10 * expected {
                return Err(Error::GridMismatch(format!(
                    "{}:{}: radius {r} does not match grid node {expected}",
                    path.display(),
                    lineno + 1
                )));
            }
            values.push(v);
        }
        Self::new(grid, values)
    }
}

/// Per-element slopes (u_{e+1} - u_e)/h_e.
pub fn element_slopes(nodes: &[f64], u: &[f64]) -> Vec<f64> {
    nodes
        .windows(2)
        .zip(u.windows(2))
        .map(|(r, v)| (v[1] - v[0]) / (r[1] - r[0]))
        .collect()
}

/// Per-element weights a_e = ∫_e A(r) r^{N-1} dr.
pub fn stiffness_weights(grid: &RadialGrid, weights: &Weights) -> Vec<f64> {
    grid.element_integrals(|r| weights.a(r))
}

/// ‖u‖^N = ω Σ_e a_e |D_e u|^N.
pub fn e_norm_pow(grid: &RadialGrid, a_e: &[f64], u: &[f64]) -> f64 {
    let n = grid.n_dim() as i32;
    let slopes = element_slopes(grid.nodes(), u);
    grid.omega() * a_e.iter().zip(&slopes).map(|(a, d)| a * d.abs().powi(n)).sum::<f64>()
}

/// (∫ A |u'|^N dx)^{1/N}.
pub fn e_norm(u: &RadialFunction, weights: &Weights) -> Result<f64> {
    let grid = u.grid();
    if grid.n_dim() != weights.config().n_dim {
        return Err(Error::GridMismatch("grid and weight dimensions differ".into()));
    }
    let a_e = stiffness_weights(grid, weights);
    Ok(e_norm_pow(grid, &a_e, u.values()).powf(1.0 / grid.n_dim() as f64))
}

/// (∫ Q |u|^p dx)^{1/p}.
pub fn lp_q_norm(u: &RadialFunction, weights: &Weights, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("Lebesgue exponent p = {p} must be >= 1")));
    }
    let grid = u.grid();
    let g: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(u.values())
        .map(|(&r, v)| weights.q(r) * v.abs().powf(p))
        .collect();
    Ok(grid.integrate(&g).powf(1.0 / p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub slope: Option<f64>,
    pub threshold: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub passed: bool,
    pub vacuous: bool,
}

/// Least-squares slope of log|u| against log r over [max(r0, R/10), R], nonzero nodes only.
pub fn decay_diagnostic(u: &RadialFunction, ell: f64, r0: f64) -> DecayReport {
    let grid = u.grid();
    let n = grid.n_dim() as f64;
    let r_max = grid.r_max();
    let lo = r0.max(r_max / 10.0);
    let threshold = -ell / (n - 1.0) + 0.1;
    let pts: Vec<(f64, f64)> = grid
        .nodes()
        .iter()
        .zip(u.values())
        .filter(|(r, v)| **r >= lo && **r <= r_max && v.abs() > 0.0)
        .map(|(r, v)| (r.ln(), v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return DecayReport {
            slope: None,
            threshold,
            window: (lo, r_max),
            samples: pts.len(),
            passed: true,
            vacuous: true,
        };
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    DecayReport {
        slope: Some(slope),
        threshold,
        window: (lo, r_max),
        samples: pts.len(),
        passed: slope <= threshold,
        vacuous: false,
    }
}
