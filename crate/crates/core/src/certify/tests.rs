use super::*;
use crate::cvstem::CvstemSolution;
use crate::systems::{make_pvtol, make_scalar_test};

fn unit_metric() -> CvstemSolution<f64> {
    CvstemSolution {
        nu: 1.0,
        chi: 1.0,
        w_bar: Mat::identity(1),
        objective: 0.0,
        residuals: Vec::new(),
    }
}

fn unit_policy(sol: &CvstemSolution<f64>) -> Policy<'_, f64> {
    Policy::Geodesic {
        source: MetricSource::Cvstem(sol),
        r: Mat::identity(1),
        segments: 4,
    }
}

#[test]
fn rate_examples() {
    assert_eq!(alpha_ell_deterministic(1.0, 0.25, 1.0, 4.0, 1.0), 0.5);
    assert_eq!(alpha_ell_deterministic(1.0, 0.25, 0.0, 4.0, 1.0), 1.0);
    let k = BoundConstants::new(BoundMode::Deterministic, 1.0f64, 4.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0);
    assert_eq!(k.alpha_ell, -0.5);
    assert!(matches!(bound_envelope_det(&k, 1.0), Err(Error::NonPositiveRate(_))));
}

#[test]
fn disturbance_constant_example() {
    let c = disturbance_constant(1.0, 1.0, 1.0, 0.0, 0.0, 1.0);
    assert_eq!(c, 3.0);
    assert_eq!(disturbance_constant(0.0, 0.0, 1.0, 0.0, 0.0, 0.0), 0.0);
}

#[test]
fn metric_error_conversion_example() {
    let (e0, e1) = metric_error_conversion(2.0f64, 3.0, 0.1);
    assert_eq!(e0, 0.0);
    assert!((e1 - 1.8).abs() < 1e-12);
}

#[test]
fn envelopes_at_the_endpoints() {
    let k = BoundConstants::new(BoundMode::Deterministic, 1.0f64, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.3, 0.0);
    let env = bound_envelope_det(&k, 1.0).unwrap();
    assert_eq!(env.eval(0.0), 1.0);
    assert!((env.eval(50.0) - 0.3).abs() < 1e-12);

    let k = BoundConstants::new(BoundMode::Stochastic, 1.0f64, 1.0, 1.0, 0.0, 10.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.2);
    assert!((k.c - 0.048).abs() < 1e-15);
    let env = bound_envelope_stoch(&k, 0.5).unwrap();
    assert!((env.eval(0.0) - 0.524).abs() < 1e-12);
    assert!((env.eval(100.0) - 0.024).abs() < 1e-12);
}

#[test]
fn learning_error_fit_covers_every_point() {
    let dist = [0.0, 1.0, 2.0, 3.0];
    let dev = [0.1, 0.6, 1.0, 1.7];
    let (e0, e1) = fit_learning_error(&dev, &dist);
    assert!(e1 > 0.0);
    for (y, x) in dev.iter().zip(&dist) {
        assert!(*y <= e0 + e1 * x + 1e-12);
    }
    assert_eq!(fit_learning_error(&[0.0, 0.0], &[1.0, 2.0]), (0.0, 0.0));
}

#[test]
fn tight_scalar_bound_converges_to_its_asymptote() {
    let sys = make_scalar_test(0.0).with_disturbance(0.3, 0.0);
    let sol = unit_metric();
    let policy = unit_policy(&sol);
    let k = BoundConstants::new(BoundMode::Deterministic, 1.0f64, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.3, 0.0);
    let mut opts = VerifyOptions::new(BoundMode::Deterministic, 8, 8.0);
    opts.tol = 1e-6;
    opts.dt = 1e-2;
    let v = verify_tracking(&policy, &sys, &k, &opts).unwrap();
    assert!(v.report.pass, "{:?}", v.report.max_violation);
    for r in &v.records {
        assert!((r.errors.last().unwrap() - 0.3).abs() < 3e-3);
    }
}

#[test]
fn normalized_error_starts_at_one() {
    let sys = make_scalar_test(0.0);
    let sol = unit_metric();
    let policy = unit_policy(&sol);
    let k = BoundConstants::new(BoundMode::Deterministic, 1.0f64, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let v = verify_tracking(&policy, &sys, &k, &VerifyOptions::new(BoundMode::Deterministic, 3, 1.0)).unwrap();
    for r in &v.records {
        assert_eq!(r.x_e[0], 1.0);
        assert!((r.x_e.last().unwrap() - (-1.0f64).exp()).abs() < 1e-6);
    }
    assert!(v.records[0].to_csv().starts_with("t,error,envelope,x_e\n"));
}

#[test]
fn geodesic_contraction_matrix_on_scalar() {
    let sys = make_scalar_test(0.0);
    let sol = unit_metric();
    let policy = unit_policy(&sol);
    let s = Sample {
        x: vec![0.4],
        x_d: vec![-0.2],
        u_d: vec![0.1],
        t: 0.0,
    };
    let c = policy.contraction_matrix(&sys, &s, 0.5).unwrap();
    assert!((c[(0, 0)] + 1.0).abs() < 1e-6);
}

#[test]
fn certification_grid_stays_in_the_state_box() {
    let sys = make_pvtol::<f64>();
    let grid = certification_grid(&sys, &[], 3, 10_000, 1);
    assert_eq!(grid.len(), 729);
    assert!(grid.iter().all(|s| sys.state_box.contains(&s.x) && sys.state_box.contains(&s.x_d)));
}

#[test]
fn stochastic_report_is_deterministic() {
    let sys = make_scalar_test(0.0).with_disturbance(0.0, 0.2);
    let sol = unit_metric();
    let policy = unit_policy(&sol);
    let k = BoundConstants::new(BoundMode::Stochastic, 1.0f64, 1.0, 1.0, 0.0, 10.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.2);
    let mut opts = VerifyOptions::new(BoundMode::Stochastic, 200, 1.0);
    opts.dt = 1e-2;
    let a = verify_tracking(&policy, &sys, &k, &opts).unwrap();
    let b = verify_tracking(&policy, &sys, &k, &opts).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert!(a.report.pass);
    assert!(a.ensemble.unwrap().to_csv().starts_with("t,mean_sq,std_err,envelope\n"));
}
