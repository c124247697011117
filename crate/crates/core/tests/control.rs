use ckf_core::coded_kf::{build_partition_encoder, EncoderDesign};
use ckf_core::control::{
    check_stabilizability_detectability, run_control_sim, solve_control_dare, ControlSystem, ControlViolation,
};
use ckf_core::linalg::SolverConfig;
use ckf_core::models::{DiagonalChannel, Scenario};
use ckf_core::simulation::{run_estimation_sim, SimulationConfig};
use ckf_core::stability::Partition;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn scalar_system() -> ControlSystem {
    ControlSystem::new(m1(2.0), m1(1.0), m1(1.0), m1(0.1), m1(0.06)).unwrap()
}

fn unit_channel() -> DiagonalChannel {
    DiagonalChannel::from_gains(&[1.0]).unwrap()
}

fn scalar_design(pi: f64) -> EncoderDesign {
    let system = scalar_system();
    build_partition_encoder(
        &Partition::single(1, 1, 0),
        &[pi],
        &system.source().unwrap(),
        &unit_channel(),
        &SolverConfig::default(),
    )
    .unwrap()
}

#[test]
fn scalar_lqr_matches_fixed_point_iteration() {
    let (a, b, c, e) = (2.0f64, 1.0f64, 0.1f64, 0.06f64);
    let mut f = c;
    for _ in 0..10_000 {
        f = c + a * a * f - (a * b * f).powi(2) / (e + b * b * f);
    }
    let lqr = solve_control_dare(&scalar_system(), &SolverConfig::default()).unwrap();
    assert!((lqr.f[(0, 0)] - f).abs() <= 1e-9 * f);
    assert!((lqr.k[(0, 0)] - a * b * f / (e + b * b * f)).abs() <= 1e-9);
    assert!((lqr.full_info_cost - f).abs() <= 1e-9 * f);
}

#[test]
fn feasible_loop_stays_bounded_and_infeasible_loop_diverges() {
    let system = scalar_system();
    let lqr = solve_control_dare(&system, &SolverConfig::default()).unwrap();
    let cfg = SimulationConfig::new(20_000, 2, 31);
    let good = run_control_sim(&system, &unit_channel(), &scalar_design(5.0), &lqr, &cfg).unwrap();
    assert!(!good.diverged);
    assert!(good.empirical_lqr_cost.is_finite());
    let weak = EncoderDesign::from_partition(&Partition::single(1, 1, 0), vec![2.0], 1).unwrap();
    let bad = run_control_sim(&system, &unit_channel(), &weak, &lqr, &cfg).unwrap();
    assert!(bad.diverged);
}

#[test]
fn control_leaves_the_estimation_error_unchanged() {
    let system = scalar_system();
    let lqr = solve_control_dare(&system, &SolverConfig::default()).unwrap();
    let design = scalar_design(5.0);
    let cfg = SimulationConfig::new(100_000, 4, 41);
    let closed = run_control_sim(&system, &unit_channel(), &design, &lqr, &cfg).unwrap();
    let scenario = Scenario::new(system.source().unwrap(), unit_channel(), 5.0).unwrap();
    let open = run_estimation_sim(&scenario, &design, &cfg).unwrap();
    let rel = (closed.empirical_estimation_mse - open.empirical_mse).abs() / open.empirical_mse;
    assert!(rel <= 0.05, "closed {} open {}", closed.empirical_estimation_mse, open.empirical_mse);
    // Tr(P*) = 1 / (1 - 4/6) = 3.
    assert!((open.empirical_mse - 3.0).abs() <= 0.15);
}

#[test]
fn pbh_flags_unreachable_unstable_modes() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
    let reach_first = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let system = ControlSystem::new(
        a.clone(),
        reach_first,
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        m1(1.0),
    )
    .unwrap();
    let v = check_stabilizability_detectability(&system);
    assert_eq!(v.len(), 1);
    assert!(matches!(v[0], ControlViolation::NotStabilizable { re, .. } if (re - 3.0).abs() < 1e-12));

    let full = ControlSystem::new(
        a,
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    assert!(check_stabilizability_detectability(&full).is_empty());

    let zero_b = ControlSystem::new(m1(2.0), m1(0.0), m1(1.0), m1(1.0), m1(1.0)).unwrap();
    assert_eq!(check_stabilizability_detectability(&zero_b).len(), 1);
}

#[test]
fn zero_input_cost_needs_invertible_btcb() {
    assert!(ControlSystem::new(m1(2.0), m1(1.0), m1(1.0), m1(1.0), m1(0.0)).is_ok());
    assert!(ControlSystem::new(m1(2.0), m1(0.0), m1(1.0), m1(1.0), m1(0.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lqr_gain_stabilizes(
        lams in prop::collection::vec(1.1f64..3.0, 1..=3),
        b in prop::collection::vec(-2.0f64..2.0, 9),
        l in 1usize..=3,
        e in 0.01f64..2.0,
    ) {
        let k = lams.len();
        let a = DMatrix::from_diagonal(&DVector::from_vec(lams));
        let bm = DMatrix::from_column_slice(k, l, &b[..k * l]) + DMatrix::identity(k, l) * 2.5;
        let system = ControlSystem::new(
            a.clone(),
            bm.clone(),
            DMatrix::identity(k, k),
            DMatrix::identity(k, k),
            DMatrix::identity(l, l) * e,
        )
        .unwrap();
        prop_assume!(check_stabilizability_detectability(&system).is_empty());
        let lqr = solve_control_dare(&system, &SolverConfig::default()).unwrap();
        let closed = &a - &bm * &lqr.k;
        let radius = closed.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(radius < 1.0, "spectral radius {radius}");
    }
}
