use ckf_core::conjecture::{
    lyapunov_j, run_conjecture_sweep, solve_min_trace, ConjectureConfig, ConjectureInstance,
};
use ckf_core::linalg::{max_abs, min_eigenvalue};
use ckf_core::Error;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn equal_gains_two_modes_reach_eleven() {
    let inst = ConjectureInstance::new(vec![0.5, 1.0 / 3.0], vec![1.0, 1.0], 100.0).unwrap();
    let (oracle, _) = inst.oracle().unwrap();
    assert!((oracle - 11.0).abs() <= 1e-12);
    let r = solve_min_trace(&inst, 8, &ConjectureConfig::default()).unwrap();
    assert!(rel(r.trace, 11.0) <= 1e-3, "trace {}", r.trace);
    assert!(r.partition_structured);
}

#[test]
fn single_mode_uses_the_best_channel() {
    let inst = ConjectureInstance::new(vec![0.4], vec![0.5, 2.0, 1.2], 100.0).unwrap();
    let expected = (1.0 / 0.16 - 1.0) / 4.0;
    let r = solve_min_trace(&inst, 6, &ConjectureConfig::default()).unwrap();
    assert!(rel(r.trace, expected) <= 1e-6, "trace {} vs {expected}", r.trace);
    assert!(r.partition_structured);
    let used: Vec<usize> = (0..3).filter(|&i| r.gamma_star[(i, 0)].abs() > 1e-3 * max_abs(&r.gamma_star)).collect();
    assert_eq!(used, vec![1]);
}

#[test]
fn single_channel_is_always_structured() {
    let inst = ConjectureInstance::new(vec![0.5, 0.7, 0.3], vec![1.5], 1e4).unwrap();
    let (oracle, _) = inst.oracle().unwrap();
    let r = solve_min_trace(&inst, 6, &ConjectureConfig::default()).unwrap();
    assert!(r.partition_structured);
    assert!(rel(r.trace, oracle) <= 1e-4, "trace {} vs {oracle}", r.trace);
}

#[test]
fn budget_below_the_threshold_is_infeasible() {
    // With one channel nothing beats the oracle, so half of it is out of reach.
    let probe = ConjectureInstance::new(vec![0.5], vec![1.0], 1.0).unwrap();
    let (oracle, _) = probe.oracle().unwrap();
    let tight = ConjectureInstance::new(vec![0.5], vec![1.0], 0.5 * oracle).unwrap();
    assert!(matches!(
        solve_min_trace(&tight, 4, &ConjectureConfig::default()),
        Err(Error::Infeasible(_))
    ));
    let loose = ConjectureInstance::new(vec![0.5], vec![1.0], 10.0 * oracle).unwrap();
    let looser = ConjectureInstance::new(vec![0.5], vec![1.0], 100.0 * oracle).unwrap();
    let a = solve_min_trace(&loose, 4, &ConjectureConfig::default()).unwrap();
    let b = solve_min_trace(&looser, 4, &ConjectureConfig::default()).unwrap();
    assert!(b.trace <= a.trace + 1e-12);
}

#[test]
fn best_objective_history_is_nonincreasing() {
    let inst = ConjectureInstance::new(vec![0.6, 0.2], vec![1.0, 0.4], 1e3).unwrap();
    let r = solve_min_trace(&inst, 6, &ConjectureConfig::default()).unwrap();
    assert_eq!(r.best_objective_history.len(), 6);
    assert!(r.best_objective_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn sweep_is_deterministic_and_certified() {
    let cfg = ConjectureConfig::default();
    let first = run_conjecture_sweep(&[(2, 2)], 3, 7, 6, &cfg);
    let second = run_conjecture_sweep(&[(2, 2)], 3, 7, 6, &cfg);
    assert_eq!(first, second);
    assert!(first.errors.is_empty());
    assert_eq!(first.records.len(), 3);
    for r in &first.records {
        let j = lyapunov_j(&r.instance, &r.result.gamma_star, r.result.pi_star.diagonal().as_slice()).unwrap();
        let scale = max_abs(&j).max(f64::MIN_POSITIVE);
        assert!(min_eigenvalue(&j) >= -1e-8 * scale, "instance {}", r.index);
        assert!((min_eigenvalue(&j) - r.result.min_eig_j).abs() <= 1e-8 * scale);
        assert!(r.result.trace <= r.instance.feasibility_budget);
    }
}

#[test]
fn empty_sweep_reports_nothing() {
    let report = run_conjecture_sweep(&[(2, 2), (3, 2)], 0, 1, 4, &ConjectureConfig::default());
    assert!(report.records.is_empty());
    assert!(report.violations.is_empty());
    assert_eq!(report.consistent_fraction, 0.0);
    assert!(report.table.iter().all(|d| d.instances == 0));
}

#[test]
fn invalid_instances_are_rejected() {
    assert!(ConjectureInstance::new(vec![1.0], vec![1.0], 1.0).is_err());
    assert!(ConjectureInstance::new(vec![0.5], vec![0.0], 1.0).is_err());
    assert!(ConjectureInstance::new(vec![0.5], vec![1.0], 0.0).is_err());
    assert!(ConjectureInstance::new(vec![], vec![1.0], 1.0).is_err());
}
