use super::*;
use crate::numerics::{min_eig_sym, streams};
use crate::systems::{make_curved_test, make_lti, make_pvtol, make_scalar_test};

fn flat_nets(n: usize, m: usize, m_bar: f64) -> (MetricNet<f64>, ControllerNet<f64>) {
    let mut rng = RngStream::new(0, streams::INIT);
    let mut metric = MetricNet::new(n, &[4], m_bar, 0.1, false, &mut rng);
    metric.theta = Mlp::zeros(&metric.theta.widths());
    let mut controller = ControllerNet::new(n, m, n, &[4], &mut rng);
    controller.w1 = Mlp::zeros(&controller.w1.widths());
    controller.w2 = Mlp::zeros(&controller.w2.widths());
    (metric, controller)
}

fn random_nets(n: usize, m: usize, seed: u64, time_input: bool) -> (MetricNet<f64>, ControllerNet<f64>) {
    let mut rng = RngStream::new(seed, streams::INIT);
    let metric = MetricNet::new(n, &[8], 4.0, 0.5, time_input, &mut rng);
    let controller = ControllerNet::new(n, m, 2 * n, &[8], &mut rng);
    (metric, controller)
}

fn random_batch(system: &SystemModel<f64>, count: usize, seed: u64) -> Vec<Sample<f64>> {
    let mut rng = RngStream::new(seed, streams::DATASET);
    (0..count)
        .map(|_| Sample {
            x: system.state_box.sample(&mut rng),
            x_d: system.state_box.sample(&mut rng),
            u_d: system.input_box.sample(&mut rng),
            t: system.time_box.sample(&mut rng)[0],
        })
        .collect()
}

#[test]
fn l_pd_examples() {
    let mut rng = RngStream::new(1, streams::SPHERE);
    let pts = sample_unit_sphere::<f64>(3, 64, &mut rng);
    assert_eq!(l_pd(&Mat::identity(3), &pts), 0.0);
    assert!((l_pd(&Mat::scaled_identity(3, -1.0), &pts) - 1.0).abs() < 1e-12);
    let a = Mat::from_diag(&[1.0, -4.0]);
    assert_eq!(l_pd(&a, &[vec![0.0, 1.0]]), 4.0);
}

#[test]
fn l_pd_concentrates_across_point_sets() {
    let a = Mat::from_diag(&[1.0, -2.0, 0.5, -0.3]);
    let mut r1 = RngStream::new(1, streams::SPHERE);
    let mut r2 = RngStream::new(2, streams::SPHERE);
    let l1: f64 = l_pd(&a, &sample_unit_sphere(4, 4096, &mut r1));
    let l2: f64 = l_pd(&a, &sample_unit_sphere(4, 4096, &mut r2));
    assert!((l1 - l2).abs() / l1.max(l2) < 0.05, "{l1} vs {l2}");
}

#[test]
fn c_u_scalar_examples() {
    let sys = make_scalar_test(-1.0);
    let (metric, controller) = flat_nets(1, 1, 1.0);
    let s = Sample {
        x: vec![0.7],
        x_d: vec![0.2],
        u_d: vec![0.0],
        t: 0.0,
    };
    let c = c_u_matrix(&metric, &controller, &sys, &s, 0.5).unwrap();
    assert!((c[(0, 0)] + 1.0).abs() < 1e-14);
    let c = c_u_matrix(&metric, &controller, &sys, &s, 1.0).unwrap();
    assert!(c[(0, 0)].abs() < 1e-14);
}

#[test]
fn c_u_is_symmetric_on_pvtol() {
    let sys = make_pvtol::<f64>();
    let (metric, controller) = random_nets(6, 2, 3, false);
    for s in random_batch(&sys, 50, 4) {
        let c = c_u_matrix(&metric, &controller, &sys, &s, 0.5).unwrap();
        let diff = (&c - &c.transpose()).frobenius_norm();
        assert!(diff < 1e-10);
    }
}

#[test]
fn weak_ccm_examples() {
    let sys = make_lti(Mat::from_diag(&[-1.0, 0.5]), Mat::identity(2));
    let (metric, _) = random_nets(2, 2, 5, false);
    let (c1, c2) = weak_ccm_matrices(&metric, &sys, &[0.1, 0.2], 0.0, 0.5);
    assert_eq!(c1.rows(), 0);
    assert!(c2.iter().all(|c| c.rows() == 0));

    let sys = make_lti(Mat::from_diag(&[-2.0, 1.0]), Mat::column(&[1.0, 0.0]));
    let (metric, _) = flat_nets(2, 1, 1.0);
    let (c1, c2) = weak_ccm_matrices(&metric, &sys, &[0.3, -0.4], 0.0, 0.5);
    assert_eq!(c1.rows(), 1);
    assert!((c1[(0, 0)] - 3.0).abs() < 1e-12);
    assert_eq!(c2.len(), 1);
    assert!(c2[0].frobenius_norm() < 1e-14);
}

#[test]
fn satisfied_constraints_give_zero_loss() {
    let sys = make_scalar_test(-1.0);
    let (metric, controller) = flat_nets(1, 1, 1.0);
    let batch = random_batch(&sys, 20, 2);
    let mut rng = RngStream::new(3, streams::SPHERE);
    let points = SpherePoints::for_system(&sys, 32, &mut rng);
    let (report, grad) = empirical_loss(&metric, &controller, &sys, &batch, &LossConfig::new(0.5), &points).unwrap();
    assert_eq!(report.total, 0.0);
    assert!(grad.flatten().iter().all(|g| *g == 0.0));
}

#[test]
fn single_sample_batch_equals_sample_terms() {
    let sys = make_pvtol::<f64>();
    let (metric, controller) = random_nets(6, 2, 6, false);
    let batch = random_batch(&sys, 3, 7);
    let mut rng = RngStream::new(3, streams::SPHERE);
    let points = SpherePoints::for_system(&sys, 32, &mut rng);
    let cfg = LossConfig::new(0.5);
    let parts: Vec<f64> = batch
        .iter()
        .map(|s| evaluate_loss(&metric, &controller, &sys, std::slice::from_ref(s), &cfg, &points).unwrap().total)
        .collect();
    let all = evaluate_loss(&metric, &controller, &sys, &batch, &cfg, &points).unwrap();
    let mean = parts.iter().sum::<f64>() / 3.0;
    assert!((all.total - mean).abs() < 1e-12);
    let r = all;
    assert!((r.total - (r.l_u + r.l_c + r.l_w1 + r.l_w2)).abs() < 1e-12);
    assert!(r.l_u >= 0.0 && r.l_c >= 0.0 && r.l_w1 >= 0.0 && r.l_w2 >= 0.0);
}

#[test]
fn empty_batch_is_rejected() {
    let sys = make_scalar_test(-1.0);
    let (metric, controller) = flat_nets(1, 1, 1.0);
    let mut rng = RngStream::new(3, streams::SPHERE);
    let points = SpherePoints::for_system(&sys, 8, &mut rng);
    let res = empirical_loss(&metric, &controller, &sys, &[], &LossConfig::new(0.5), &points);
    assert!(matches!(res, Err(Error::EmptyBatch)));
}

#[test]
fn boundedness_loss_vanishes_iff_metric_below_ceiling() {
    let sys = make_pvtol::<f64>();
    let mut rng = RngStream::new(3, streams::SPHERE);
    let points = SpherePoints::for_system(&sys, 256, &mut rng);
    for seed in 0..5 {
        let (metric, controller) = random_nets(6, 2, 10 + seed, false);
        for s in random_batch(&sys, 10, seed) {
            let r = evaluate_loss(&metric, &controller, &sys, std::slice::from_ref(&s), &LossConfig::new(0.5), &points).unwrap();
            let mut c = metric.eval_w(&s.x, s.t);
            c.add_diag(-metric.m_under.recip());
            let top = -min_eig_sym(&c.scale(-1.0)).unwrap();
            if top <= 0.0 {
                assert_eq!(r.l_c, 0.0);
            }
            let sampled = points.get(6).unwrap().iter().any(|p| c.quad_form(p) > 0.0);
            assert_eq!(r.l_c > 0.0, sampled);
        }
    }
}

#[test]
fn cv_term_is_reported_not_differentiated() {
    let sys = make_pvtol::<f64>();
    let (metric, controller) = random_nets(6, 2, 8, false);
    let batch = random_batch(&sys, 4, 8);
    let mut rng = RngStream::new(3, streams::SPHERE);
    let points = SpherePoints::for_system(&sys, 16, &mut rng);
    let plain = LossConfig::new(0.5);
    let with_cv = LossConfig {
        cv_coefficient: Some(0.25),
        ..plain
    };
    let (a, ga) = empirical_loss(&metric, &controller, &sys, &batch, &plain, &points).unwrap();
    let (b, gb) = empirical_loss(&metric, &controller, &sys, &batch, &with_cv, &points).unwrap();
    assert_eq!(b.l_cv, Some(0.25 * 4.0 / 0.5));
    assert!((b.total - a.total - 2.0).abs() < 1e-12);
    assert_eq!(ga, gb);
}

#[test]
fn gradients_match_finite_differences() {
    let cases: Vec<(SystemModel<f64>, bool)> = vec![
        (make_curved_test(), true),
        (make_curved_test(), false),
        (make_pvtol(), false),
        (make_lti(Mat::from_rows(&[vec![-1.0, 2.0], vec![0.5, 0.3]]).unwrap(), Mat::column(&[0.0, 1.0])), true),
    ];
    for (i, (sys, time_input)) in cases.iter().enumerate() {
        let (metric, controller) = random_nets(sys.n(), sys.m(), 20 + i as u64, *time_input);
        let batch = random_batch(sys, 4, 30 + i as u64);
        let mut rng = RngStream::new(40 + i as u64, streams::SPHERE);
        let points = SpherePoints::for_system(sys, 32, &mut rng);
        let check = gradient_check(&metric, &controller, sys, &batch, &LossConfig::new(0.7), &points, 1e-5, 1e-5, 3).unwrap();
        assert!(check.max_rel_err < 1e-4, "case {i}: {check:?}");
    }
}

#[test]
fn batch_loss_is_reproducible() {
    let sys = make_pvtol::<f64>();
    let (metric, controller) = random_nets(6, 2, 9, false);
    let batch = random_batch(&sys, 40, 9);
    let cfg = LossConfig::new(0.5);
    let run = || {
        let mut rng = RngStream::new(5, streams::SPHERE);
        empirical_loss_sampled(&metric, &controller, &sys, &batch, &cfg, 32, &mut rng).unwrap()
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let (c, gc) = pool.install(run);
    assert_eq!(a, c);
    assert_eq!(ga, gc);
}
