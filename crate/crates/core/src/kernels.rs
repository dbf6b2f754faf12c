//! Radial convolution kernels.
//!
//! A kernel `k(|x - y|)` acting on radial data reduces to the angular
//! average `κ(r, s)` over the sphere `|y| = s`. The convolution matrix uses
//! the grid's quadratic pair rule away from `s = r` and product integration
//! of `κ(r_i, ·)` against the pair's Lagrange basis on the (at most two)
//! pairs touching `r_i`, where `κ` has a kink or an integrable cusp.

use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::grid::RadialGrid;
use crate::quadrature::GaussRule;
use crate::special::polar_weight_total;

/// Threshold on |μ log t| below which [`g_mu`] switches to its series.
pub const G_MU_SERIES_THRESHOLD: f64 = 1e-4;

/// Angular panels on the diagonal stop at this polar angle; the rest is closed form.
const DIAGONAL_THETA0: f64 = 1e-7;

/// Agreement required between the two angular rules on each entry.
const ANGULAR_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "mu", rename_all = "snake_case")]
pub enum KernelKind {
    /// log(1/d).
    Log,
    /// log(1/d) restricted to d <= 1.
    LogNear,
    /// log(1/d) restricted to d > 1.
    LogFar,
    /// (d^{-μ} - 1)/μ.
    GMu(f64),
    /// d^{-μ}.
    Riesz(f64),
}

impl KernelKind {
    pub fn tag(&self) -> String {
        match self {
            KernelKind::Log => "log".into(),
            KernelKind::LogNear => "log_near".into(),
            KernelKind::LogFar => "log_far".into(),
            KernelKind::GMu(mu) => format!("g_mu({mu:e})"),
            KernelKind::Riesz(mu) => format!("riesz({mu:e})"),
        }
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    fn eval_sq(&self, d2: f64) -> f64 {
        match *self {
            KernelKind::Log => -0.5 * d2.ln(),
            KernelKind::LogNear => {
                if d2 <= 1.0 {
                    -0.5 * d2.ln()
                } else {
                    0.0
                }
            }
            KernelKind::LogFar => {
                if d2 > 1.0 {
                    -0.5 * d2.ln()
                } else {
                    0.0
                }
            }
            KernelKind::GMu(mu) => g_mu_log(-0.5 * d2.ln(), mu),
            KernelKind::Riesz(mu) => (-0.5 * mu * d2.ln()).exp(),
        }
    }

    /// Singular exponent σ with k(d) ~ d^{-σ} at 0 (0 for logarithmic kernels).
    fn singular_power(&self) -> f64 {
        match *self {
            KernelKind::GMu(mu) | KernelKind::Riesz(mu) => mu,
            _ => 0.0,
        }
    }

    fn splits_at_unit_distance(&self) -> bool {
        matches!(self, KernelKind::LogNear | KernelKind::LogFar)
    }
}

/// G_μ evaluated from ℓ = log(1/t).
#[inline]
fn g_mu_log(ell: f64, mu: f64) -> f64 {
    let x = mu * ell;
    if x.abs() < G_MU_SERIES_THRESHOLD {
        ell * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        x.exp_m1() / mu
    }
}

/// G_μ(t) = (t^{-μ} - 1)/μ.
pub fn g_mu(t: f64, mu: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("G_mu evaluated at t = {t} <= 0")));
    }
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::domain(format!("mu = {mu} must lie in (0, 1]")));
    }
    Ok(g_mu_log(-t.ln(), mu))
}

/// Angular averaging rules: a fine and a coarse Gauss rule per panel.
#[derive(Clone, Debug)]
pub struct AngularRule {
    order: usize,
    fine: GaussRule,
    coarse: GaussRule,
}

impl AngularRule {
    pub fn new(order: usize) -> Self {
        let order = order.max(4);
        Self {
            order,
            fine: GaussRule::new(order),
            coarse: GaussRule::new(order / 2),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// (1/|S^{N-1}|) ∫_{S^{N-1}} k(|r e_1 - s ω|) dσ(ω).
pub fn angular_average(kind: KernelKind, r: f64, s: f64, n_dim: usize, rule: &AngularRule) -> Result<f64> {
    if !(r > 0.0 && s > 0.0) {
        return Err(Error::domain(format!("angular average needs r, s > 0 (got {r}, {s})")));
    }
    if n_dim < 2 {
        return Err(Error::UnsupportedDimension(n_dim));
    }
    angular_unchecked(kind, r, s, n_dim, rule)
}

fn angular_unchecked(kind: KernelKind, r: f64, s: f64, n_dim: usize, rule: &AngularRule) -> Result<f64> {
    let n = n_dim as f64;
    let wn = polar_weight_total(n_dim);
    let diagonal = r == s;
    if diagonal && kind.singular_power() >= n - 1.0 {
        return Ok(f64::INFINITY);
    }
    let pi = std::f64::consts::PI;
    let mut breaks: Vec<f64> = Vec::with_capacity(48);
    if diagonal {
        let mut th = pi;
        while th > DIAGONAL_THETA0 {
            breaks.push(th);
            th *= 0.5;
        }
        breaks.push(DIAGONAL_THETA0);
        breaks.reverse();
    } else {
        let theta_c = (r - s).abs() / (r * s).sqrt();
        breaks.push(0.0);
        if theta_c < pi / 2.0 {
            let mut th = theta_c;
            while th < pi {
                breaks.push(th);
                th *= 2.0;
            }
        } else {
            breaks.push(pi / 2.0);
        }
        breaks.push(pi);
    }
    if kind.splits_at_unit_distance() {
        let diff2 = (r - s) * (r - s);
        let sin2 = (1.0 - diff2) / (4.0 * r * s);
        if diff2 < 1.0 && sin2 < 1.0 {
            let th_star = 2.0 * sin2.sqrt().asin();
            if th_star > breaks[0] && th_star < pi {
                let k = breaks.partition_point(|&b| b < th_star);
                if (breaks[k] - th_star).abs() > 1e-15 {
                    breaks.insert(k, th_star);
                }
            }
        }
    }

    let four_rs = 4.0 * r * s;
    let diff2 = (r - s) * (r - s);
    let sin_pow = n_dim as i32 - 2;
    let h = |theta: f64| {
        let sh = (0.5 * theta).sin();
        let d2 = diff2 + four_rs * sh * sh;
        let w = if sin_pow == 0 { 1.0 } else { theta.sin().powi(sin_pow) };
        kind.eval_sq(d2) * w
    };
    let mut total = 0.0;
    let mut err = 0.0;
    let mut scale = 0.0;
    for w in breaks.windows(2) {
        let fine = rule.fine.integrate(w[0], w[1], h);
        let coarse = rule.coarse.integrate(w[0], w[1], h);
        total += fine;
        err += (fine - coarse).abs();
        scale += fine.abs();
    }
    if diagonal {
        total += diagonal_core(kind, r, n);
    }
    if err > ANGULAR_TOL * scale.max(1e-300) && err > 1e-13 {
        return Err(Error::Accuracy(format!(
            "angular quadrature for {} at (r, s) = ({r:e}, {s:e}): panel disagreement {err:.3e}",
            kind.tag()
        )));
    }
    Ok(total / wn)
}

/// ∫_0^{θ0} k(r θ) θ^{N-2} dθ, using d = 2r sin(θ/2) ≈ rθ on the first panel.
fn diagonal_core(kind: KernelKind, r: f64, n: f64) -> f64 {
    let t0 = DIAGONAL_THETA0;
    let m = n - 1.0;
    let p = t0.powf(m);
    let log_part = -(r.ln() * p / m + p * (t0.ln() / m - 1.0 / (m * m)));
    match kind {
        KernelKind::Log => log_part,
        KernelKind::LogNear => {
            if r * t0 <= 1.0 {
                log_part
            } else {
                0.0
            }
        }
        KernelKind::LogFar => {
            if r * t0 > 1.0 {
                log_part
            } else {
                0.0
            }
        }
        KernelKind::GMu(mu) => (r.powf(-mu) * t0.powf(m - mu) / (m - mu) - p / m) / mu,
        KernelKind::Riesz(mu) => r.powf(-mu) * t0.powf(m - mu) / (m - mu),
    }
}

/// Dense kernel operators on one grid.
///
/// * `kappa[i][j] = κ(r_i, r_j)` (diagonal may be `+∞` for strongly singular kernels),
/// * `conv`: `(conv · g)_i ≈ ∫_{R^N} k(|x_i - y|) g(|y|) dy`,
/// * `form`: symmetric, `gᵀ form h ≈ ∫∫ k(|x - y|) g(x) h(y) dx dy`.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    kind: KernelKind,
    grid_id: String,
    order: usize,
    m: usize,
    kappa: Vec<f64>,
    conv: Vec<f64>,
    form: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CacheHeader {
    format: String,
    kind: KernelKind,
    grid: String,
    order: usize,
    m: usize,
}

const CACHE_FORMAT: &str = "choquard-kernel-v1";

impl KernelMatrix {
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn grid_id(&self) -> &str {
        &self.grid_id
    }

    pub fn kappa(&self, i: usize, j: usize) -> f64 {
        self.kappa[i * self.m + j]
    }

    pub fn conv_row(&self, i: usize) -> &[f64] {
        &self.conv[i * self.m..(i + 1) * self.m]
    }

    pub fn form_row(&self, i: usize) -> &[f64] {
        &self.form[i * self.m..(i + 1) * self.m]
    }

    fn check_grid(&self, grid: &RadialGrid) -> Result<()> {
        if grid.id() != self.grid_id {
            return Err(Error::GridMismatch(format!(
                "kernel {} assembled on another grid",
                self.kind.tag()
            )));
        }
        Ok(())
    }

    /// Assembles the operators for `kind` on `grid` with angular order `order`.
    pub fn assemble(grid: &RadialGrid, kind: KernelKind, order: usize, exec: Execution) -> Result<Self> {
        let rule = AngularRule::new(order);
        let n_dim = grid.n_dim();
        let m = grid.len();
        let nodes = grid.nodes();

        // Upper triangle by rows, then mirrored.
        let rows: Vec<Result<Vec<f64>>> = map_indexed(exec, m, |i| {
            (i..m)
                .map(|j| angular_unchecked(kind, nodes[i], nodes[j], n_dim, &rule))
                .collect()
        });
        let mut kappa = vec![0.0; m * m];
        for (i, row) in rows.into_iter().enumerate() {
            for (k, v) in row?.into_iter().enumerate() {
                let j = i + k;
                kappa[i * m + j] = v;
                kappa[j * m + i] = v;
            }
        }

        let omega = grid.omega();
        let pair_vol = grid.pair_volumes();
        let core = grid.core_volume();
        let grading = if kind.singular_power() > 0.0 { 16 } else { 4 };
        let conv_rows: Vec<Result<Vec<f64>>> = map_indexed(exec, m, |i| {
            let mut row = vec![0.0; m];
            let ri = nodes[i];
            for (k, w) in pair_vol.iter().enumerate() {
                let base = 2 * k;
                if i >= base && i <= base + 2 {
                    let local = near_pair_weights(kind, ri, &nodes[base..base + 3], n_dim, &rule, grading)?;
                    for l in 0..3 {
                        row[base + l] += local[l];
                    }
                } else {
                    for l in 0..3 {
                        row[base + l] += kappa[i * m + base + l] * w[l];
                    }
                }
            }
            row[0] += angular_unchecked(kind, ri, 0.5 * nodes[0], n_dim, &rule)? * core;
            for v in row.iter_mut() {
                *v *= omega;
            }
            Ok(row)
        });
        let mut conv = Vec::with_capacity(m * m);
        for row in conv_rows {
            conv.extend(row?);
        }

        let vol = grid.volumes();
        let mut form = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = 0.5 * omega * (vol[i] * conv[i * m + j] + vol[j] * conv[j * m + i]);
                form[i * m + j] = v;
                form[j * m + i] = v;
            }
        }
        Ok(Self {
            kind,
            grid_id: grid.id().to_string(),
            order: rule.order(),
            m,
            kappa,
            conv,
            form,
        })
    }

    /// Like [`KernelMatrix::assemble`] but consults `cache_dir` first and stores new results there.
    pub fn load_or_assemble(
        grid: &RadialGrid,
        kind: KernelKind,
        order: usize,
        exec: Execution,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let Some(dir) = cache_dir else {
            return Self::assemble(grid, kind, order, exec);
        };
        let path = Self::cache_path(dir, grid, kind, order);
        if let Ok(k) = Self::read_cache(&path, grid, kind, order) {
            return Ok(k);
        }
        let k = Self::assemble(grid, kind, order, exec)?;
        std::fs::create_dir_all(dir)?;
        k.write_cache(&path)?;
        Ok(k)
    }

    pub fn cache_path(dir: &Path, grid: &RadialGrid, kind: KernelKind, order: usize) -> PathBuf {
        let mut h = Sha256::new();
        h.update(CACHE_FORMAT.as_bytes());
        h.update(kind.tag().as_bytes());
        h.update(grid.id().as_bytes());
        h.update((order as u64).to_le_bytes());
        let digest = h.finalize();
        let name: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
        dir.join(format!("{name}.kernel"))
    }

    fn write_cache(&self, path: &Path) -> Result<()> {
        let header = CacheHeader {
            format: CACHE_FORMAT.into(),
            kind: self.kind,
            grid: self.grid_id.clone(),
            order: self.order,
            m: self.m,
        };
        let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        bytes.push(b'\n');
        for v in self.kappa.iter().chain(&self.conv).chain(&self.form) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn read_cache(path: &Path, grid: &RadialGrid, kind: KernelKind, order: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("kernel cache without header".into()))?;
        let header: CacheHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse(e.to_string()))?;
        let m = grid.len();
        let expected = CacheHeader {
            format: CACHE_FORMAT.into(),
            kind,
            grid: grid.id().to_string(),
            order: AngularRule::new(order).order(),
            m,
        };
        if header != expected || bytes.len() - nl - 1 != 3 * m * m * 8 {
            return Err(Error::Parse("kernel cache header mismatch".into()));
        }
        let mut vals = bytes[nl + 1..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = || -> Vec<f64> { (&mut vals).take(m * m).collect() };
        let (kappa, conv, form) = (take(), take(), take());
        Ok(Self {
            kind,
            grid_id: header.grid,
            order: header.order,
            m,
            kappa,
            conv,
            form,
        })
    }

    /// (conv · g)_i: the convolution k * g at node i.
    pub fn apply(&self, g: &[f64], exec: Execution) -> Vec<f64> {
        matvec(&self.conv, self.m, g, exec)
    }

    /// form · g.
    pub fn apply_form(&self, g: &[f64], exec: Execution) -> Vec<f64> {
        matvec(&self.form, self.m, g, exec)
    }

    /// gᵀ form h ≈ ∫∫ k(|x - y|) g(x) h(y) dx dy.
    pub fn bilinear(&self, g: &[f64], h: &[f64], exec: Execution) -> f64 {
        dot(&self.apply_form(h, exec), g)
    }

    pub fn convolve(&self, grid: &RadialGrid, g: &[f64], exec: Execution) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        if g.len() != self.m {
            return Err(Error::GridMismatch(format!("{} values for a {}-node kernel", g.len(), self.m)));
        }
        Ok(self.apply(g, exec))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(mat: &[f64], m: usize, g: &[f64], exec: Execution) -> Vec<f64> {
    map_indexed(exec, m, |i| dot(&mat[i * m..(i + 1) * m], g))
}

/// ∫_{x0}^{x2} κ(r, s) ℓ_l(s) s^{N-1} ds for the pair's three Lagrange functions ℓ_l,
/// with panels graded toward s = r.
fn near_pair_weights(
    kind: KernelKind,
    r: f64,
    x: &[f64],
    n_dim: usize,
    rule: &AngularRule,
    grading: usize,
) -> Result<[f64; 3]> {
    let gl = GaussRule::new(8);
    let pow = (n_dim - 1) as i32;
    let (x0, x1, x2) = (x[0], x[1], x[2]);
    let basis = |s: f64| {
        [
            (s - x1) * (s - x2) / ((x0 - x1) * (x0 - x2)),
            (s - x0) * (s - x2) / ((x1 - x0) * (x1 - x2)),
            (s - x0) * (s - x1) / ((x2 - x0) * (x2 - x1)),
        ]
    };
    let mut out = [0.0; 3];
    let mut panel = |a: f64, b: f64| -> Result<()> {
        for (s, w) in gl.mapped(a, b) {
            let k = angular_unchecked(kind, r, s, n_dim, rule)? * s.powi(pow) * w;
            let l = basis(s);
            for j in 0..3 {
                out[j] += k * l[j];
            }
        }
        Ok(())
    };
    for (a, b) in [(x0, x1), (x1, x2)] {
        // Grade toward whichever endpoint coincides with r.
        if r == a || r == b {
            let (near, far) = if r == a { (a, b) } else { (b, a) };
            let len = far - near;
            let mut t = 1.0;
            for _ in 0..grading {
                let (p, q) = (near + 0.5 * t * len, near + t * len);
                panel(p.min(q), p.max(q))?;
                t *= 0.5;
            }
            let q = near + t * len;
            panel(near.min(q), near.max(q))?;
        } else {
            panel(a, b)?;
        }
    }
    Ok(out)
}

/// Outcome of one Hardy-Littlewood-Sobolev comparison.
#[derive(Clone, Debug, Serialize)]
pub struct HlsOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

/// Checks ∫ (|·|^{-μ} * f) h ≤ C_fit ‖f‖_q ‖h‖_r for radial f, h.
///
/// C_fit is 1.05 times the ratio measured on f = h = Gaussian, times `calibration_scale`.
#[derive(Debug)]
pub struct HlsChecker {
    grid: std::sync::Arc<RadialGrid>,
    kernel: KernelMatrix,
    q: f64,
    r: f64,
    gaussian_ratio: f64,
    c_fit: f64,
    exec: Execution,
}

impl HlsChecker {
    pub fn new(n_dim: usize, mu: f64, q: f64, r: f64, calibration_scale: f64, exec: Execution) -> Result<Self> {
        let n = n_dim as f64;
        if !(mu > 0.0 && mu < n) {
            return Err(Error::domain(format!("HLS needs 0 < mu < N (mu = {mu})")));
        }
        if !(q > 1.0 && r > 1.0) {
            return Err(Error::domain("HLS exponents must exceed 1"));
        }
        let relation = 1.0 / q + mu / n + 1.0 / r;
        if (relation - 2.0).abs() > 1e-12 {
            return Err(Error::domain(format!("1/q + mu/N + 1/r = {relation} != 2")));
        }
        let spec = crate::grid::GridSpec {
            m: 200,
            r_max: 12.0,
            r_min_factor: 1e-5,
            anchors: vec![],
        };
        let grid = RadialGrid::new(n_dim, &spec)?;
        let kernel = KernelMatrix::assemble(&grid, KernelKind::Riesz(mu), 16, exec)?;
        let mut me = Self {
            grid,
            kernel,
            q,
            r,
            gaussian_ratio: 0.0,
            c_fit: 0.0,
            exec,
        };
        let gauss: Vec<f64> = me.grid.nodes().iter().map(|&x| (-0.5 * x * x).exp()).collect();
        let (lhs, rhs) = me.sides(&gauss, &gauss);
        me.gaussian_ratio = lhs / rhs;
        me.c_fit = 1.05 * me.gaussian_ratio * calibration_scale;
        Ok(me)
    }

    pub fn grid(&self) -> &std::sync::Arc<RadialGrid> {
        &self.grid
    }

    pub fn gaussian_ratio(&self) -> f64 {
        self.gaussian_ratio
    }

    pub fn c_fit(&self) -> f64 {
        self.c_fit
    }

    fn lq(&self, f: &[f64], p: f64) -> f64 {
        let g: Vec<f64> = f.iter().map(|v| v.abs().powf(p)).collect();
        self.grid.integrate(&g).powf(1.0 / p)
    }

    /// (∫ (|·|^{-μ} * f) h, ‖f‖_q ‖h‖_r) for nodal samples.
    fn sides(&self, f: &[f64], h: &[f64]) -> (f64, f64) {
        let lhs = self.kernel.bilinear(h, f, self.exec);
        (lhs, self.lq(f, self.q) * self.lq(h, self.r))
    }

    pub fn check_samples(&self, f: &[f64], h: &[f64]) -> HlsOutcome {
        let (lhs, rhs) = self.sides(f, h);
        HlsOutcome {
            lhs,
            rhs,
            passed: lhs <= self.c_fit * rhs,
        }
    }

    pub fn check_fn<F: Fn(f64) -> f64, H: Fn(f64) -> f64>(&self, f: F, h: H) -> HlsOutcome {
        let fv: Vec<f64> = self.grid.nodes().iter().map(|&x| f(x)).collect();
        let hv: Vec<f64> = self.grid.nodes().iter().map(|&x| h(x)).collect();
        self.check_samples(&fv, &hv)
    }
}

/// HLS check on radial functions living on the checker's grid.
pub fn hls_check(
    checker: &HlsChecker,
    f: &crate::grid::RadialFunction,
    h: &crate::grid::RadialFunction,
) -> Result<HlsOutcome> {
    f.ensure_grid(checker.grid())?;
    h.ensure_grid(checker.grid())?;
    Ok(checker.check_samples(f.values(), h.values()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn g_mu_examples() {
        assert_eq!(g_mu(1.0, 1.0).unwrap(), 0.0);
        let v = g_mu(0.5, 0.01).unwrap();
        assert!((v - (2f64.powf(0.01) - 1.0) / 0.01).abs() < 1e-13);
        assert!(v >= 2f64.ln() && (v - 0.69556).abs() < 1e-5);
        assert!(g_mu(0.0, 0.5).is_err() && g_mu(-1.0, 0.5).is_err());
        for mu in [1e-2, 1e-4, 1e-6] {
            assert!((g_mu(0.3, mu).unwrap() - (1.0 / 0.3f64).ln()).abs() < 2.0 * mu);
        }
    }

    #[test]
    fn g_mu_series_branch_is_continuous() {
        let mu = 1e-3;
        for t in [0.9f64, 0.99, 0.9999, 1.0001, 1.01] {
            let exact = (t.powf(-mu) - 1.0) / mu;
            let v = g_mu(t, mu).unwrap();
            assert!((v - exact).abs() <= 1e-9 * exact.abs().max(1e-6), "t={t}");
        }
    }

    #[test]
    fn planar_mean_value_identity() {
        let rule = AngularRule::new(16);
        for (r, s) in [(2.0, 1.0), (1.0, 1.0), (0.3, 0.7), (5.0, 5.0), (1e-4, 3.0)] {
            let v = angular_average(KernelKind::Log, r, s, 2, &rule).unwrap();
            let exact = -f64::max(r, s).ln();
            assert!((v - exact).abs() <= 1e-9 * exact.abs() + 1e-13, "({r},{s}) {v} vs {exact}");
        }
    }

    #[test]
    fn brute_force_trapezoid_oracle() {
        // 10^6-point trapezoid over θ ∈ [0, π] for r = 2, s = 1.
        let n = 1_000_000;
        let f = |th: f64| -0.5 * (5.0 - 4.0 * th.cos()).ln();
        let h = std::f64::consts::PI / n as f64;
        let sum: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * f(k as f64 * h)
            })
            .sum();
        let oracle = sum * h / std::f64::consts::PI;
        let v = angular_average(KernelKind::Log, 2.0, 1.0, 2, &AngularRule::new(16)).unwrap();
        assert!((v - oracle).abs() < 1e-10 && (oracle + 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn newtonian_mean_value_in_three_dimensions() {
        // For N = 3 the spherical mean of 1/d is 1/max(r, s).
        let rule = AngularRule::new(16);
        for (r, s) in [(2.0, 1.0), (0.5, 0.5), (0.1, 4.0)] {
            let v = angular_average(KernelKind::Riesz(1.0), r, s, 3, &rule).unwrap();
            assert!((v - 1.0 / f64::max(r, s)).abs() < 1e-9);
        }
    }

    #[test]
    fn g_mu_envelope() {
        let rule = AngularRule::new(16);
        for n_dim in [2, 3, 4] {
            for (r, s) in [(1.5, 0.2), (2.0, 0.5), (0.2, 1.6)] {
                let v = angular_average(KernelKind::GMu(0.3), r, s, n_dim, &rule).unwrap();
                let lo = g_mu(r + s, 0.3).unwrap();
                let hi = g_mu((r - s).abs(), 0.3).unwrap();
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn split_kernels_add_up() {
        let rule = AngularRule::new(16);
        for (r, s) in [(0.8, 0.5), (1.2, 0.4), (0.3, 0.3), (3.0, 2.5)] {
            let a = angular_average(KernelKind::Log, r, s, 2, &rule).unwrap();
            let b = angular_average(KernelKind::LogNear, r, s, 2, &rule).unwrap();
            let c = angular_average(KernelKind::LogFar, r, s, 2, &rule).unwrap();
            assert!((a - b - c).abs() < 1e-12);
            assert!(b >= 0.0 && c <= 0.0);
        }
    }

    fn small_grid() -> std::sync::Arc<RadialGrid> {
        RadialGrid::new(2, &GridSpec { m: 160, r_max: 10.0, ..GridSpec::default() }).unwrap()
    }

    #[test]
    fn convolution_of_truncated_paraboloid() {
        // g = (1 - r^2)_+ has mass π/2, so (log 1/|·| * g)(r) = -(π/2) log r for r > 1.
        let grid = small_grid();
        let k = KernelMatrix::assemble(&grid, KernelKind::Log, 16, Execution::Parallel).unwrap();
        let g: Vec<f64> = grid.nodes().iter().map(|&r| (1.0 - r * r).max(0.0)).collect();
        let c = k.convolve(&grid, &g, Execution::Parallel).unwrap();
        for (i, &r) in grid.nodes().iter().enumerate() {
            if r > 1.0 {
                let exact = -std::f64::consts::FRAC_PI_2 * r.ln();
                assert!((c[i] - exact).abs() < 1e-9, "r={r}: {} vs {exact}", c[i]);
            }
        }
        let zero = k.convolve(&grid, &vec![0.0; grid.len()], Execution::Parallel).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn execution_modes_agree_and_form_is_symmetric() {
        let grid = small_grid();
        let a = KernelMatrix::assemble(&grid, KernelKind::GMu(0.5), 16, Execution::Parallel).unwrap();
        let b = KernelMatrix::assemble(&grid, KernelKind::GMu(0.5), 16, Execution::Sequential).unwrap();
        assert_eq!(a.conv, b.conv);
        let m = a.len();
        for i in 0..m {
            for j in 0..m {
                assert_eq!(a.form[i * m + j], a.form[j * m + i]);
                if i != j {
                    let (x, y) = (a.kappa(i, j), a.kappa(j, i));
                    assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn cache_roundtrip() {
        let grid = small_grid();
        let dir = tempfile::tempdir().unwrap();
        let a = KernelMatrix::load_or_assemble(&grid, KernelKind::Log, 16, Execution::Parallel, Some(dir.path()))
            .unwrap();
        let path = KernelMatrix::cache_path(dir.path(), &grid, KernelKind::Log, 16);
        assert!(path.exists());
        let b = KernelMatrix::load_or_assemble(&grid, KernelKind::Log, 16, Execution::Parallel, Some(dir.path()))
            .unwrap();
        assert_eq!(a.conv, b.conv);
        assert_eq!(a.form, b.form);
    }

    #[test]
    fn gmu_matrix_approaches_log_matrix() {
        let grid = small_grid();
        let log = KernelMatrix::assemble(&grid, KernelKind::Log, 16, Execution::Parallel).unwrap();
        let g: Vec<f64> = grid.nodes().iter().map(|&r| (-r * r).exp()).collect();
        let base = log.apply(&g, Execution::Parallel);
        let mut prev = f64::INFINITY;
        for mu in [1e-1, 1e-2, 1e-3] {
            let k = KernelMatrix::assemble(&grid, KernelKind::GMu(mu), 16, Execution::Parallel).unwrap();
            let c = k.apply(&g, Execution::Parallel);
            let err = c.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < prev && err < 50.0 * mu, "mu={mu}: {err}");
            prev = err;
        }
    }

    #[test]
    fn hls_gaussian_and_zero() {
        let c = HlsChecker::new(2, 1.0, 4.0 / 3.0, 4.0 / 3.0, 1.0, Execution::Parallel).unwrap();
        // Gaussian ratio sits below the sharp Lieb constant 2√π.
        assert!(c.gaussian_ratio() < 2.0 * std::f64::consts::PI.sqrt());
        assert!((c.gaussian_ratio() - 3.4198).abs() < 2e-3, "{}", c.gaussian_ratio());
        let g = |r: f64| (-0.5 * r * r).exp();
        assert!(c.check_fn(g, g).passed);
        let z = c.check_fn(|_| 0.0, g);
        assert!(z.passed && z.lhs == 0.0 && z.rhs == 0.0);
        assert!(HlsChecker::new(2, 1.0, 1.5, 1.5, 1.0, Execution::Parallel).is_err());
    }
}
