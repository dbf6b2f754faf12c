use std::io::Write;

use choquard_core::config::RunConfig;
use choquard_core::exec::Execution;
use choquard_core::kernels::KernelKind;
use choquard_core::solver::{solve_mu, ContinuationSchedule};
use choquard_core::weights::{TabulatedWeights, Weights};

fn small(overrides: &[&str]) -> RunConfig {
    let mut all = vec!["grid.M=300".to_string(), "grid.R_max=30.0".to_string()];
    all.extend(overrides.iter().map(|s| s.to_string()));
    RunConfig::parse("", &all).unwrap()
}

#[test]
fn solve_meets_certificates_on_small_grid() {
    let cfg = small(&[]);
    let ctx = cfg.context(None).unwrap();
    let mut sweeps = 0;
    let b = solve_mu(&ctx, 0.5, None, &mut |_| sweeps += 1).unwrap();
    assert!(sweeps > 0);
    assert!(b.residual <= 1e-6 * b.norm.max(1.0));
    assert!(b.level > 0.0 && b.level < ctx.threshold());
    assert!(b.min_value >= -1e-8);
    assert!(b.geometry.eta > 0.0 && b.geometry.e_energy < 0.0);
    assert!((b.energy.total - (b.energy.kinetic - b.energy.interaction)).abs() <= 1e-14 * b.energy.kinetic);
}

#[test]
fn warm_and_cold_starts_agree() {
    let cfg = small(&[]);
    let ctx = cfg.context(None).unwrap();
    let coarse = solve_mu(&ctx, 0.5, None, &mut |_| {}).unwrap();
    let cold = solve_mu(&ctx, 0.25, None, &mut |_| {}).unwrap();
    let warm = solve_mu(&ctx, 0.25, Some(coarse.u.values()), &mut |_| {}).unwrap();
    assert!((cold.level - warm.level).abs() <= 1e-4 * cold.level, "{} vs {}", cold.level, warm.level);
}

#[test]
fn execution_modes_give_identical_solutions() {
    let par = small(&["solver.parallel=true"]).context(None).unwrap();
    let seq = small(&["solver.parallel=false"]).context(None).unwrap();
    let a = solve_mu(&par, 0.5, None, &mut |_| {}).unwrap();
    let b = solve_mu(&seq, 0.5, None, &mut |_| {}).unwrap();
    assert_eq!(a.u.values(), b.u.values());
    assert_eq!(a.level, b.level);
}

#[test]
fn tabulated_copy_of_builtin_weights_reproduces_the_level() {
    let cfg = small(&[]);
    let ctx = cfg.context(None).unwrap();
    let w = ctx.weights.config().clone();
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "r,A,Q").unwrap();
    for k in 0..=4000 {
        let r = 10f64.powf(-8.0 + 11.0 * k as f64 / 4000.0);
        writeln!(file, "{r:.17e},{:.17e},{:.17e}", w.eval_a(r).unwrap(), w.eval_q(r).unwrap()).unwrap();
    }
    let table = TabulatedWeights::from_csv(file.path()).unwrap();
    assert!(table.validate_against(&w).iter().all(|c| c.passed));
    let tab_ctx = choquard_core::solver::Context {
        weights: Weights::Tabulated(w, table),
        ..ctx.clone()
    };
    let a = solve_mu(&ctx, 0.5, None, &mut |_| {}).unwrap();
    let b = solve_mu(&tab_ctx, 0.5, None, &mut |_| {}).unwrap();
    assert!((a.level - b.level).abs() <= 1e-5 * a.level, "{} vs {}", a.level, b.level);
}

#[test]
fn kernel_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = small(&[]).context(Some(dir.path().to_path_buf())).unwrap();
    let k1 = ctx.kernel(KernelKind::GMu(0.25)).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let k2 = ctx.kernel(KernelKind::GMu(0.25)).unwrap();
    let g: Vec<f64> = ctx.grid.nodes().iter().map(|r| (-r * r).exp()).collect();
    assert_eq!(k1.apply(&g, Execution::Sequential), k2.apply(&g, Execution::Sequential));
}

#[test]
fn schedule_validation() {
    let s = ContinuationSchedule::default();
    let seq = s.sequence(0.5).unwrap();
    assert_eq!(seq.len(), 14);
    assert_eq!(*seq.last().unwrap(), 1e-4);
    assert!(seq.windows(2).all(|w| w[1] < w[0]));
    let bad = ContinuationSchedule { mus: vec![0.5, 0.5], ..Default::default() };
    assert!(bad.sequence(0.5).is_err());
    let outside = ContinuationSchedule { mus: vec![0.8, 0.1], ..Default::default() };
    assert!(outside.sequence(0.5).is_err());
}
