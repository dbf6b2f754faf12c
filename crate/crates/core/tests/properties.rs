use std::sync::{Arc, OnceLock};

use choquard_core::energy::Problem;
use choquard_core::exec::Execution;
use choquard_core::grid::{GridSpec, RadialGrid};
use choquard_core::kernels::{KernelKind, KernelMatrix};
use choquard_core::nonlinearity::{Nonlinearity, NonlinearityConfig};
use choquard_core::weights::{WeightConfig, Weights};
use proptest::prelude::*;

struct Fixture {
    grid: Arc<RadialGrid>,
    gmu: KernelMatrix,
    log: KernelMatrix,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let grid = RadialGrid::new(2, &GridSpec { m: 160, r_max: 10.0, ..GridSpec::default() }).unwrap();
        let gmu = KernelMatrix::assemble(&grid, KernelKind::GMu(0.3), 16, Execution::Parallel).unwrap();
        let log = KernelMatrix::assemble(&grid, KernelKind::Log, 16, Execution::Parallel).unwrap();
        Fixture { grid, gmu, log }
    })
}

fn profile(nodes: &[f64], a: f64, s: f64, c: f64) -> Vec<f64> {
    nodes.iter().map(|&r| a * (-(r / s).powi(2)).exp() + c / (1.0 + r * r)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, s1 in 0.2..3.0f64, s2 in 0.2..3.0f64) {
        let f = fixture();
        let g = profile(f.grid.nodes(), 1.0, s1, 0.1);
        let h = profile(f.grid.nodes(), -0.5, s2, 0.3);
        let mix: Vec<f64> = g.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
        let lhs = f.gmu.apply(&mix, Execution::Sequential);
        let kg = f.gmu.apply(&g, Execution::Sequential);
        let kh = f.gmu.apply(&h, Execution::Sequential);
        for i in 0..lhs.len() {
            let rhs = a * kg[i] + b * kh[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + kg[i].abs() + kh[i].abs()));
        }
    }

    #[test]
    fn interaction_form_is_symmetric(s1 in 0.2..3.0f64, s2 in 0.2..3.0f64, c in 0.0..1.0f64) {
        let f = fixture();
        let g = profile(f.grid.nodes(), 1.0, s1, c);
        let h = profile(f.grid.nodes(), 0.7, s2, 0.2);
        let gh = f.gmu.bilinear(&g, &h, Execution::Sequential);
        let hg = f.gmu.bilinear(&h, &g, Execution::Sequential);
        prop_assert!((gh - hg).abs() <= 1e-12 * gh.abs().max(1e-300));
    }

    /// G_μ >= log(1/t) on (0, 1], so the forms compare for nonnegative data of diameter < 1.
    #[test]
    fn g_mu_form_dominates_log_form_on_small_supports(amp in 0.1..3.0f64, width in 0.05..0.45f64) {
        let f = fixture();
        let grid = &f.grid;
        let problem = Problem::new(
            Weights::BuiltIn(WeightConfig::default()),
            Nonlinearity::new(NonlinearityConfig::default(), 2).unwrap(),
            grid.clone(),
            Execution::Sequential,
        ).unwrap();
        let u: Vec<f64> = grid.nodes().iter().map(|&r| {
            let x = (1.0 - r / width).max(0.0);
            amp * x * x
        }).collect();
        let rho = problem.density(&u).unwrap();
        let with_gmu = f.gmu.bilinear(&rho, &rho, Execution::Sequential);
        let with_log = f.log.bilinear(&rho, &rho, Execution::Sequential);
        prop_assert!(with_gmu >= with_log, "{with_gmu} < {with_log}");
    }
}
