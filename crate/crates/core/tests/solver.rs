mod common;

use common::*;
use factmle::model::recover_loadings;
use factmle::objective::{objective, subgradient_f2};
use factmle::solver::{certify_descent, dc_step, solve};
use factmle::spectra::eig_top;
use factmle::{FaError, Init, SolverConfig, StopRule, Termination, UniquenessPrecision};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn diag_cov(d: &[f64]) -> factmle::CovarianceInput {
    dense_cov(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
}

#[test]
fn diagonal_fixed_point_is_kept() {
    let cov = diag_cov(&[4.0, 1.0]);
    let phi = UniquenessPrecision::new(DVector::from_element(2, 1.0), 1e-3).unwrap();
    let spec = eig_top(&cov, &phi, 1).unwrap();
    let ws = subgradient_f2(&cov, &phi, 1, &spec);
    assert!((ws.grad[0] - 3.0).abs() < 1e-14 && ws.grad[1] == 0.0);
    let next = dc_step(&cov, &phi, &ws).unwrap();
    assert!((next.phi() - phi.phi()).amax() < 1e-14);
    let sigma = recover_loadings(&cov, &next, 1).unwrap().implied_covariance().unwrap();
    assert!((sigma - cov.covariance_dense()).amax() < 1e-13);
}

#[test]
fn tied_identity_step_uses_first_eigenvector() {
    let cov = diag_cov(&[1.0, 1.0]);
    let phi = UniquenessPrecision::new(DVector::from_element(2, 2.0), 1e-3).unwrap();
    let spec = eig_top(&cov, &phi, 1).unwrap();
    let ws = subgradient_f2(&cov, &phi, 1, &spec);
    assert!(ws.tie_flag);
    assert!((ws.delta[0] - 0.5).abs() < 1e-15);
    assert!((ws.grad[0] - 0.5).abs() < 1e-14 && ws.grad[1].abs() < 1e-14);
    let next = dc_step(&cov, &phi, &ws).unwrap();
    assert!((next.phi()[0] - 2.0).abs() < 1e-13);
    assert!((next.phi()[1] - 1.0).abs() < 1e-13);
    // Each coordinate minimises its 1-D surrogate.
    for i in 0..2 {
        let d = cov.diag()[i] - ws.grad[i];
        let star = convex_argmin_log(1e-3, 1e3, |x| -1.0 / x + d);
        assert!((next.phi()[i] - star).abs() < 1e-8 * star.max(1.0));
    }
}

#[test]
fn zero_subgradient_gives_diagonal_mle() {
    let cov = diag_cov(&[0.5, 2.0, 1e-4]);
    let eps = 1e-3;
    let phi = UniquenessPrecision::new(DVector::from_element(3, 0.5), eps).unwrap();
    let spec = eig_top(&cov, &phi, 1).unwrap();
    let ws = subgradient_f2(&cov, &phi, 1, &spec);
    assert_eq!(ws.grad.amax(), 0.0);
    let next = dc_step(&cov, &phi, &ws).unwrap();
    assert_eq!(next.phi()[0], 2.0);
    assert_eq!(next.phi()[1], 0.5);
    assert_eq!(next.phi()[2], 1.0 / eps);
}

#[test]
fn identity_solve_reaches_perfect_fit() {
    for p in [2, 4, 7] {
        let cov = dense_cov(DMatrix::identity(p, p));
        let (phi, trace) = solve(&cov, &SolverConfig::new(1)).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        assert!((trace.final_objective() - p as f64).abs() < 1e-9);
        let sigma = recover_loadings(&cov, &phi, 1).unwrap().implied_covariance().unwrap();
        assert!((sigma - DMatrix::<f64>::identity(p, p)).amax() < 1e-8);
        certify_descent(&trace).unwrap();
    }
}

#[test]
fn identity_from_unit_start_stays_put() {
    let cov = dense_cov(DMatrix::identity(5, 5));
    let cfg = SolverConfig {
        init: Init::WarmStart(DVector::from_element(5, 1.0)),
        ..SolverConfig::new(2)
    };
    let (phi, trace) = solve(&cov, &cfg).unwrap();
    assert_eq!(phi.phi(), &DVector::from_element(5, 1.0));
    assert_eq!(trace.iterations, 1);
    let model = recover_loadings(&cov, &phi, 2).unwrap();
    assert_eq!(model.rank_used, 0);
}

#[test]
fn diagonal_fixed_point_detected_in_one_iteration() {
    let cov = diag_cov(&[4.0, 1.0]);
    let cfg = SolverConfig {
        init: Init::WarmStart(DVector::from_element(2, 1.0)),
        ..SolverConfig::new(1)
    };
    let (_, trace) = solve(&cov, &cfg).unwrap();
    assert_eq!(trace.iterations, 1);
    assert_eq!(trace.termination, Termination::Converged);
}

#[test]
fn rank_and_eps_are_validated() {
    let cov = diag_cov(&[4.0, 1.0, 2.0]);
    assert!(matches!(solve(&cov, &SolverConfig::new(3)), Err(FaError::Domain(_))));
    assert!(matches!(solve(&cov, &SolverConfig::new(0)), Err(FaError::Domain(_))));
    let cfg = SolverConfig {
        eps: 0.0,
        ..SolverConfig::new(1)
    };
    assert!(matches!(solve(&cov, &cfg), Err(FaError::Domain(_))));
}

#[test]
fn random_instance_certifies() {
    let cov = factor_data(20, 60, 3, 11);
    let cfg = SolverConfig::new(3);
    let (_, trace) = solve(&cov, &cfg).unwrap();
    let report = certify_descent(&trace).unwrap();
    assert_eq!(report.iterations, trace.iterations);
    assert!(report.min_scaled_step <= report.rate_bound + 1e-9 * trace.objectives[0].abs().max(1.0));
}

#[test]
fn corrupted_trace_is_rejected_at_the_bumped_iteration() {
    let cov = factor_data(10, 40, 2, 3);
    let cfg = SolverConfig {
        tol: 0.0,
        max_iters: 8,
        ..SolverConfig::new(2)
    };
    let (_, mut trace) = solve(&cov, &cfg).unwrap();
    assert!(trace.objectives.len() > 4);
    trace.objectives[3] += 1.0;
    match certify_descent(&trace) {
        Err(FaError::Certification { iteration, .. }) => assert_eq!(iteration, 3),
        other => panic!("expected a certification failure, got {other:?}"),
    }
}

#[test]
fn iterate_relative_rule_stops() {
    let cov = factor_data(12, 600, 2, 5);
    let cfg = SolverConfig {
        stop_rule: StopRule::IterateRelative,
        tol: 1e-4,
        ..SolverConfig::new(2)
    };
    let (_, trace) = solve(&cov, &cfg).unwrap();
    assert_eq!(trace.termination, Termination::Converged);
    assert!(trace.iterations < cfg.max_iters);
}

#[test]
fn random_init_is_seeded() {
    let cov = factor_data(8, 30, 1, 9);
    let cfg = SolverConfig {
        init: Init::UniformRandom(42),
        ..SolverConfig::new(1)
    };
    let (a, _) = solve(&cov, &cfg).unwrap();
    let (b, _) = solve(&cov, &cfg).unwrap();
    assert_eq!(a.phi(), b.phi());
}

#[test]
fn max_iters_is_reported() {
    let cov = factor_data(15, 30, 3, 2);
    let cfg = SolverConfig {
        tol: 0.0,
        max_iters: 3,
        ..SolverConfig::new(3)
    };
    let (_, trace) = solve(&cov, &cfg).unwrap();
    assert_eq!(trace.iterations, 3);
    assert_eq!(trace.termination, Termination::MaxIters);
    assert_eq!(trace.objectives.len(), 4);
}

fn instance() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (4usize..14, 0usize..2, 1usize..4, any::<u64>()).prop_map(|(p, wide, r, seed)| {
        let n = if wide == 0 { (p / 2).max(2) } else { 3 * p };
        (p, n, r.min(p - 1), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn descent_feasibility_and_bounds((p, n, r, seed) in instance()) {
        let cov = factor_data(p, n, 1.max(r.min(p - 2)), seed);
        let eps = 1e-4;
        let cfg = SolverConfig { eps, ..SolverConfig::new(r) };
        let (phi, trace) = solve(&cov, &cfg).unwrap();
        prop_assert_ne!(trace.termination, Termination::Stalled);
        for w in trace.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
        certify_descent(&trace).unwrap();
        for i in 0..p {
            prop_assert!(phi.phi()[i] > 0.0 && phi.phi()[i] <= 1.0 / eps);
            let psi = 1.0 / phi.phi()[i];
            prop_assert!(psi >= eps - 1e-12);
            if cov.diag()[i] < eps {
                // The box wins when the marginal variance is below ε.
                prop_assert_eq!(phi.phi()[i], 1.0 / eps);
            } else {
                prop_assert!(psi <= cov.diag()[i] + 1e-6);
            }
        }
        let f = objective(&cov, &phi, r).unwrap().f;
        prop_assert!((f - trace.final_objective()).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn update_is_the_exact_coordinate_minimiser((p, n, r, seed) in instance(), scale in 0.05f64..5.0) {
        let cov = factor_data(p, n, 1, seed);
        let eps = 1e-3;
        let phi0 = cov.diag().map(|s| (scale / s).min(1.0 / eps));
        let phi = UniquenessPrecision::new(phi0, eps).unwrap();
        let spec = eig_top(&cov, &phi, r).unwrap();
        let ws = subgradient_f2(&cov, &phi, r, &spec);
        let next = dc_step(&cov, &phi, &ws).unwrap();
        for i in 0..p {
            let d = cov.diag()[i] - ws.grad[i];
            let star = convex_argmin_log(1e-12, 1.0 / eps, |x| -1.0 / x + d);
            prop_assert!((next.phi()[i] - star).abs() <= 1e-8 * star.max(1.0),
                "coordinate {i}: update {} vs oracle {star}", next.phi()[i]);
        }
    }

    #[test]
    fn interior_fixed_points_are_stationary((p, _n, r, seed) in instance()) {
        let cov = factor_data(p, 4 * p, 1, seed);
        let eps = 1e-6;
        let cfg = SolverConfig { eps, tol: 1e-14, max_iters: 20000, ..SolverConfig::new(r) };
        let (phi, trace) = solve(&cov, &cfg).unwrap();
        let spec = eig_top(&cov, &phi, r).unwrap();
        let ws = subgradient_f2(&cov, &phi, r, &spec);
        prop_assume!(!ws.tie_flag && trace.termination == Termination::Converged);
        let grad_f1 = DVector::from_fn(p, |i, _| -1.0 / phi.phi()[i] + cov.diag()[i]);
        let scale = grad_f1.amax().max(1.0);
        for i in 0..p {
            if phi.phi()[i] >= 1.0 / eps {
                continue;
            }
            prop_assert!((grad_f1[i] - ws.grad[i]).abs() <= 1e-6 * scale,
                "coordinate {i}: {} vs {}", grad_f1[i], ws.grad[i]);
        }
    }
}

#[test]
fn rounding_level_increase_ends_the_run() {
    // Near the ε-boundary this instance's last step raises f by about 1e-10.
    let cov = factor_data(13, 6, 3, 12724907281767746440);
    let cfg = SolverConfig { eps: 1e-4, ..SolverConfig::new(3) };
    let (phi, trace) = solve(&cov, &cfg).unwrap();
    assert_eq!(trace.termination, Termination::Converged);
    assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    let f = objective(&cov, &phi, 3).unwrap().f;
    assert_eq!(f, trace.final_objective());
}
